"""The sorted, padded, length-bucketed keyword matrix used for prefix search.

Every bucket stores its keywords as ``uint32`` rows padded with the all-ones
sentinel. For comparisons each bucket also keeps an ``int64`` view in which
the pad cell is ``-1``, so the pad sorts below every token and padded-row
order agrees with the order of the true sequences.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import CorruptionError, EmptySetError, UsageError
from core.tokens import TokenSeq, Vocabulary
from corpus.constraint_set import ConstraintSet, check_prefix_free

logger = logging.getLogger(__name__)

PAD = np.uint32(0xFFFFFFFF)
PAD_KEY = -1


class BucketPolicy:
    """Maps a keyword length to the key of the bucket that stores it."""

    name = "abstract"

    def bucket_key(self, length: int) -> int:
        raise NotImplementedError


class PowerOfTwoPolicy(BucketPolicy):
    """Length ranges [1], [2,3], [4,7], [8,15], ..."""

    name = "pow2"

    def bucket_key(self, length: int) -> int:
        return int(length).bit_length() - 1


class SingleBucketPolicy(BucketPolicy):
    """One bucket whose width is the longest keyword."""

    name = "single"

    def bucket_key(self, length: int) -> int:
        return 0


BUCKET_POLICIES: Dict[str, BucketPolicy] = {
    "pow2": PowerOfTwoPolicy(),
    "single": SingleBucketPolicy(),
}


def get_bucket_policy(name: str) -> BucketPolicy:
    try:
        return BUCKET_POLICIES[name]
    except KeyError:
        raise UsageError(
            f"unknown bucket policy {name!r}; choose from {', '.join(BUCKET_POLICIES)}"
        ) from None


def to_keys(rows: np.ndarray) -> np.ndarray:
    """Comparison view of ``uint32`` cells: tokens as-is, pad as -1."""
    keys = rows.astype(np.int64)
    keys[rows == PAD] = PAD_KEY
    return keys


@dataclass(frozen=True, eq=False)
class Bucket:
    """Keywords whose true lengths fall in ``[min_len, max_len]``."""

    width: int
    min_len: int
    max_len: int
    rows: np.ndarray
    true_lengths: np.ndarray

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.uint32).reshape(-1, self.width)
        lengths = np.ascontiguousarray(self.true_lengths, dtype=np.uint32)
        rows.setflags(write=False)
        lengths.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "true_lengths", lengths)
        keys = to_keys(rows)
        keys.setflags(write=False)
        object.__setattr__(self, "keys", keys)

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    def row(self, i: int) -> TokenSeq:
        return tuple(int(t) for t in self.rows[i, : int(self.true_lengths[i])])

    def sequences(self) -> Iterator[TokenSeq]:
        for i in range(self.count):
            yield self.row(i)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Bucket):
            return NotImplemented
        return (
            (self.width, self.min_len, self.max_len) == (other.width, other.min_len, other.max_len)
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.true_lengths, other.true_lengths)
        )

    __hash__ = None

    def validate(self, vocab_size: int):
        """Check the pad, length and strict sort invariants.

        Raises:
            CorruptionError: Describing the first violated invariant.
        """
        if self.count == 0:
            raise CorruptionError("empty bucket")
        if not 1 <= self.min_len <= self.max_len <= self.width:
            raise CorruptionError(
                f"bad bucket bounds min={self.min_len} max={self.max_len} width={self.width}"
            )
        lengths = self.true_lengths.astype(np.int64)
        if lengths.min() < self.min_len or lengths.max() > self.max_len:
            raise CorruptionError("true length outside bucket bounds")
        inside = np.arange(self.width)[None, :] < lengths[:, None]
        if not np.array_equal(self.rows != PAD, inside):
            raise CorruptionError("pad cells do not match true lengths")
        if np.any(self.keys >= vocab_size):
            raise CorruptionError("token outside vocabulary")
        if self.count > 1:
            diff = self.keys[1:] - self.keys[:-1]
            nonzero = diff != 0
            if not nonzero.any(axis=1).all():
                raise CorruptionError("duplicate adjacent rows")
            first = nonzero.argmax(axis=1)
            if np.any(diff[np.arange(diff.shape[0]), first] < 0):
                raise CorruptionError("rows are not in sorted order")


class SortedIndex:
    """The constraint set as a list of sorted buckets.

    Args:
        buckets: Buckets ordered by length range.
        vocab_size: Size of the token vocabulary.
        prefix_free: Known prefix-freeness; computed on first access if None.
    """

    def __init__(self, buckets: Sequence[Bucket], vocab_size: int, prefix_free: Optional[bool] = None):
        self.buckets: Tuple[Bucket, ...] = tuple(buckets)
        self.vocab_size = int(vocab_size)
        self.total_count = sum(b.count for b in self.buckets)
        if prefix_free is not None:
            self.__dict__["prefix_free"] = bool(prefix_free)

    @cached_property
    def prefix_free(self) -> bool:
        return check_prefix_free(self.sequences())

    @property
    def max_len(self) -> int:
        return max(b.max_len for b in self.buckets)

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.vocab_size)

    def __len__(self) -> int:
        return self.total_count

    def sequences(self) -> Iterator[TokenSeq]:
        for bucket in self.buckets:
            yield from bucket.sequences()

    def to_constraint_set(self) -> ConstraintSet:
        return ConstraintSet.from_sequences(self.sequences(), self.vocab)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SortedIndex):
            return NotImplemented
        return self.vocab_size == other.vocab_size and self.buckets == other.buckets

    __hash__ = None

    def validate(self):
        """Check every bucket plus disjointness of bucket length ranges.

        Raises:
            CorruptionError: If there are no buckets or any invariant fails.
        """
        if not self.buckets:
            raise CorruptionError("index has no buckets")
        spans = sorted((b.min_len, b.max_len) for b in self.buckets)
        for (_, hi), (lo, _) in zip(spans, spans[1:]):
            if lo <= hi:
                raise CorruptionError("bucket length ranges overlap")
        for bucket in self.buckets:
            bucket.validate(self.vocab_size)

    def describe(self) -> List[Dict[str, int]]:
        return [
            {"width": b.width, "count": b.count, "min_len": b.min_len, "max_len": b.max_len}
            for b in self.buckets
        ]


def _make_bucket(seqs: List[TokenSeq]) -> Bucket:
    seqs.sort()
    lengths = np.fromiter((len(s) for s in seqs), dtype=np.uint32, count=len(seqs))
    width = int(lengths.max())
    rows = np.full((len(seqs), width), PAD, dtype=np.uint32)
    for i, seq in enumerate(seqs):
        rows[i, : len(seq)] = seq
    return Bucket(width, int(lengths.min()), width, rows, lengths)


def build_index(s: ConstraintSet, bucket_policy: Optional[BucketPolicy] = None) -> SortedIndex:
    """Sort, pad and bucket the constraint set.

    Args:
        s: The constraint set.
        bucket_policy: Length bucketing; power-of-two ranges by default.

    Returns:
        A SortedIndex with buckets ordered by length range.

    Raises:
        EmptySetError: If ``s`` is empty.
    """
    if not s.sequences:
        raise EmptySetError("empty constraint set")
    policy = bucket_policy or BUCKET_POLICIES["pow2"]
    groups: Dict[int, List[TokenSeq]] = defaultdict(list)
    for seq in s.sequences:
        groups[policy.bucket_key(len(seq))].append(seq)
    buckets = [_make_bucket(groups[key]) for key in sorted(groups)]
    index = SortedIndex(buckets, s.vocab.vocab_size, check_prefix_free(s))
    logger.info(
        f"Built index: {index.total_count} keywords in {len(buckets)} buckets "
        f"(policy={policy.name}, prefix_free={index.prefix_free})"
    )
    return index
