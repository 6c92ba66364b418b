"""The constraint set S and the keyword text format."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import FrozenSet, Iterable, List, Optional, Union

from core.errors import EmptySetError, KeywordParseError, TokenOutOfRangeError
from core.tokens import TokenSeq, Vocabulary, format_tokens, is_prefix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConstraintSet:
    """A deduplicated set of non-empty keywords over ``vocab``."""

    sequences: FrozenSet[TokenSeq]
    vocab: Vocabulary

    @classmethod
    def from_sequences(cls, sequences: Iterable, vocab: Vocabulary) -> "ConstraintSet":
        """Validate and deduplicate ``sequences``.

        Raises:
            EmptySetError: If no sequence is given or one of them is empty.
            TokenOutOfRangeError: If a token is not below ``vocab.vocab_size``.
        """
        seqs = set()
        for seq in sequences:
            seq = vocab.validate(seq)
            if not seq:
                raise EmptySetError("keywords must be non-empty")
            seqs.add(seq)
        if not seqs:
            raise EmptySetError("empty constraint set")
        return cls(frozenset(seqs), vocab)

    def __len__(self) -> int:
        return len(self.sequences)

    def __contains__(self, seq) -> bool:
        return tuple(seq) in self.sequences

    def __iter__(self):
        return iter(self.sorted())

    def sorted(self) -> List[TokenSeq]:
        return sorted(self.sequences)

    @property
    def max_len(self) -> int:
        return max(len(s) for s in self.sequences)


def check_prefix_free(s: Union[ConstraintSet, Iterable[TokenSeq]]) -> bool:
    """True iff no member of ``s`` is a proper prefix of another.

    After sorting, a prefix sits immediately before one of its extensions, so
    only adjacent pairs need checking.
    """
    seqs = sorted(s.sequences if isinstance(s, ConstraintSet) else set(map(tuple, s)))
    return not any(is_prefix(a, b) for a, b in zip(seqs, seqs[1:]))


def parse_keywords(lines: Iterable[str], vocab_size: Optional[int] = None) -> ConstraintSet:
    """Parse one keyword per line, tokens as space-separated decimal ints.

    Blank lines and lines starting with ``#`` are skipped. When
    ``vocab_size`` is None it is inferred as ``max token + 1``.

    Raises:
        KeywordParseError: Naming the offending line.
        EmptySetError: If the file holds no keywords.
        TokenOutOfRangeError: If a token is not below ``vocab_size``.
    """
    seqs = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            seq = tuple(int(tok) for tok in line.split())
        except ValueError:
            raise KeywordParseError(f"not a list of integers: {line!r}", lineno) from None
        if any(t < 0 for t in seq):
            raise KeywordParseError("negative token id", lineno)
        if vocab_size is not None and any(t >= vocab_size for t in seq):
            raise TokenOutOfRangeError(
                f"token {max(seq)} outside vocabulary of size {vocab_size}", lineno
            )
        seqs.append(seq)
    if not seqs:
        raise EmptySetError("empty constraint set")
    if vocab_size is None:
        vocab_size = max(max(s) for s in seqs) + 1
    return ConstraintSet.from_sequences(seqs, Vocabulary(vocab_size))


def load_keywords(path: Union[str, Path], vocab_size: Optional[int] = None) -> ConstraintSet:
    path = Path(path)
    with open(path, "r") as f:
        constraints = parse_keywords(f, vocab_size)
    logger.info(f"Loaded {len(constraints)} keywords from {path}")
    return constraints


def save_keywords(s: ConstraintSet, path: Union[str, Path]):
    with open(path, "w") as f:
        for seq in s.sorted():
            f.write(format_tokens(seq) + "\n")
