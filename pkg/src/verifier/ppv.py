"""Prefix verification by binary search over the sorted keyword index.

For a prefix ``a`` and candidates ``t_1..t_M`` every candidate row
``a + [t_m]`` is searched independently in each bucket long enough to hold
it. The search finds the first row whose leading ``|a|+1`` cells are not
smaller than the candidate; the candidate is valid iff those cells are equal.
"""

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.errors import PrefixTooLongError, TokenOutOfRangeError, UsageError
from corpus.index import PAD_KEY, Bucket, SortedIndex
from verifier.mask import Mask

logger = logging.getLogger(__name__)

COMPARISONS = ("truncated", "full")


class ComparisonCounter:
    """Counts row comparisons made by candidate searches."""

    def __init__(self):
        self.comparisons = 0
        self.candidates = 0
        self.queries = 0
        self._lock = threading.Lock()

    def add(self, comparisons: int, candidates: int = 0, queries: int = 0):
        with self._lock:
            self.comparisons += int(comparisons)
            self.candidates += int(candidates)
            self.queries += int(queries)

    @property
    def mean_per_query(self) -> float:
        return self.comparisons / self.queries if self.queries else 0.0


def search_cost_bound(idx: SortedIndex, prefix_len: int) -> int:
    """Max comparisons per candidate: sum of ceil(log2(count+1)) over searched buckets."""
    return sum(
        math.ceil(math.log2(b.count + 1)) for b in idx.buckets if b.max_len >= prefix_len + 1
    )


def _lower_bound(bucket: Bucket, probes: np.ndarray, counter: Optional[ComparisonCounter]) -> np.ndarray:
    """Index of the first row >= each probe, comparing ``probes.shape[1]`` leading cells."""
    n_probes, width = probes.shape
    keys = bucket.keys[:, :width]
    n_rows = bucket.count
    low = np.zeros(n_probes, dtype=np.int64)
    high = np.full(n_probes, n_rows, dtype=np.int64)
    arange = np.arange(n_probes)
    comparisons = 0
    while True:
        active = low < high
        n_active = int(active.sum())
        if not n_active:
            break
        comparisons += n_active
        mid = (low + high) // 2
        rows = keys[np.minimum(mid, n_rows - 1)]
        diff = probes - rows
        nonzero = diff != 0
        first = nonzero.argmax(axis=1)
        greater = diff[arange, first] > 0
        low = np.where(active & greater, mid + 1, low)
        high = np.where(active & ~greater, mid, high)
    if counter is not None:
        counter.add(comparisons)
    return low


def _check_prefix(idx: SortedIndex, prefix: Sequence[int]):
    if len(prefix) >= idx.max_len:
        raise PrefixTooLongError(
            f"prefix of length {len(prefix)} cannot be extended within keywords of length <= {idx.max_len}"
        )


def _candidate_rows(prefix: Sequence[int], candidates: Sequence[int], vocab_size: int) -> np.ndarray:
    cand = np.asarray(candidates, dtype=np.int64).reshape(-1)
    if cand.size != np.unique(cand).size:
        raise UsageError("candidate tokens must be distinct")
    if cand.size and (cand.min() < 0 or cand.max() >= vocab_size):
        raise TokenOutOfRangeError(f"candidate token outside vocabulary of size {vocab_size}")
    rows = np.empty((cand.size, len(prefix) + 1), dtype=np.int64)
    rows[:, :-1] = np.asarray(prefix, dtype=np.int64)
    rows[:, -1] = cand
    return rows


def ppv_verify(
    idx: SortedIndex,
    prefix: Sequence[int],
    candidates: Sequence[int],
    counter: Optional[ComparisonCounter] = None,
    comparison: str = "truncated",
) -> Mask:
    """Mark which candidates extend ``prefix`` towards some keyword.

    Args:
        idx: The sorted index.
        prefix: The partial sequence.
        candidates: Distinct candidate token ids (typically the top-M).
        counter: Optional instrumentation for comparison counts.
        comparison: ``"truncated"`` compares the first ``|prefix|+1`` cells;
            ``"full"`` pads the candidate row and compares whole rows.

    Returns:
        Mask with bits set only for valid candidates; tokens outside
        ``candidates`` are reported invalid. ``eok_allowed`` tells whether
        ``prefix`` itself is a keyword.

    Raises:
        PrefixTooLongError: If no keyword is longer than ``prefix``.
    """
    if comparison not in COMPARISONS:
        raise UsageError(f"comparison must be one of {COMPARISONS}")
    _check_prefix(idx, prefix)
    probes = _candidate_rows(prefix, candidates, idx.vocab_size)
    n_probes, length = probes.shape
    valid = np.zeros(n_probes, dtype=bool)
    if n_probes:
        for bucket in idx.buckets:
            if bucket.max_len < length:
                continue
            search = probes
            if comparison == "full":
                search = np.full((n_probes, bucket.width), PAD_KEY, dtype=np.int64)
                search[:, :length] = probes
            low = _lower_bound(bucket, search, counter)
            found = low < bucket.count
            rows = bucket.keys[np.minimum(low, bucket.count - 1), :length]
            valid |= found & np.all(rows == probes, axis=1)
    if counter is not None:
        counter.add(0, candidates=n_probes, queries=1)
    tokens = np.zeros(idx.vocab_size, dtype=bool)
    tokens[probes[valid, -1]] = True
    return Mask(tokens, is_member(idx, prefix))


def full_valid_set(idx: SortedIndex, prefix: Sequence[int], counter: Optional[ComparisonCounter] = None) -> Mask:
    """The valid set of ``prefix``: ppv_verify over the whole vocabulary."""
    return ppv_verify(idx, prefix, np.arange(idx.vocab_size), counter)


def is_member(idx: SortedIndex, seq: Sequence[int]) -> bool:
    """Exact membership by binary search in the bucket covering ``len(seq)``."""
    length = len(seq)
    if length == 0:
        return False
    for bucket in idx.buckets:
        if not bucket.min_len <= length <= bucket.max_len:
            continue
        probe = np.full((1, bucket.width), PAD_KEY, dtype=np.int64)
        probe[0, :length] = seq
        low = int(_lower_bound(bucket, probe, None)[0])
        if low < bucket.count and np.array_equal(bucket.keys[low], probe[0]):
            return True
    return False


def ppv_verify_batch(
    idx: SortedIndex,
    queries: Sequence[Tuple[Sequence[int], Sequence[int]]],
    workers: Optional[int] = None,
    counter: Optional[ComparisonCounter] = None,
) -> List[Mask]:
    """Verify many (prefix, candidates) queries; results follow input order."""
    if not workers or workers <= 1:
        return [ppv_verify(idx, p, c, counter) for p, c in queries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda q: ppv_verify(idx, q[0], q[1], counter), queries))
