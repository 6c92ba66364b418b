"""Token, sequence and vocabulary primitives.

Sequences are plain tuples of non-negative ints. Tuple comparison in Python is
already lexicographic with a proper prefix sorting before its extensions,
which is the order the sorted index relies on.
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Optional, Sequence, Tuple

from core.errors import TokenOutOfRangeError, UsageError

TokenId = int
TokenSeq = Tuple[TokenId, ...]


class Ordering(IntEnum):
    LT = -1
    EQ = 0
    GT = 1


@dataclass(frozen=True)
class Vocabulary:
    """A vocabulary of ``vocab_size`` integer tokens.

    Args:
        vocab_size: Number of tokens; ids are ``0..vocab_size-1``.
        display: Optional unique display string per token, used for debug
            ingestion (whitespace-split words) and pretty printing.
    """

    vocab_size: int
    display: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.vocab_size < 1:
            raise UsageError(f"vocab_size must be positive, got {self.vocab_size}")
        if self.display is not None:
            if len(self.display) != self.vocab_size:
                raise UsageError("display strings must cover the whole vocabulary")
            if len(set(self.display)) != len(self.display):
                raise UsageError("display strings must be unique")

    def validate(self, seq: Iterable[int]) -> TokenSeq:
        """Return ``seq`` as a tuple, raising if a token is out of range."""
        seq = tuple(int(t) for t in seq)
        for t in seq:
            if t < 0 or t >= self.vocab_size:
                raise TokenOutOfRangeError(
                    f"token {t} outside vocabulary of size {self.vocab_size}"
                )
        return seq

    def encode(self, words: str) -> TokenSeq:
        """Map a whitespace-split debug string to token ids."""
        if self.display is None:
            return self.validate(int(w) for w in words.split())
        lookup = {w: i for i, w in enumerate(self.display)}
        try:
            return tuple(lookup[w] for w in words.split())
        except KeyError as e:
            raise TokenOutOfRangeError(f"unknown word {e.args[0]!r}") from None

    def decode(self, seq: Sequence[int]) -> str:
        if self.display is None:
            return " ".join(str(t) for t in seq)
        return " ".join(self.display[t] for t in seq)


def lex_compare(a: Sequence[int], b: Sequence[int]) -> Ordering:
    """Lexicographic comparison; a proper prefix compares LT its extensions."""
    a, b = tuple(a), tuple(b)
    return Ordering((a > b) - (a < b))


def is_prefix(a: Sequence[int], b: Sequence[int]) -> bool:
    """True iff ``a`` equals the first ``len(a)`` tokens of ``b``."""
    return len(a) <= len(b) and tuple(a) == tuple(b[: len(a)])


def format_tokens(seq: Sequence[int]) -> str:
    return " ".join(str(t) for t in seq)


def parse_tokens(text: str) -> TokenSeq:
    """Parse space-separated decimal token ids; raises ValueError on junk."""
    return tuple(int(t) for t in text.split())
