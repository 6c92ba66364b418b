from dataclasses import dataclass
from typing import Iterable, List

import numpy as np


@dataclass(frozen=True, eq=False)
class Mask:
    """Valid-token mask over the vocabulary plus the EOK permission."""

    tokens: np.ndarray
    eok_allowed: bool = False

    def __post_init__(self):
        tokens = np.array(self.tokens, dtype=bool)
        tokens.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "eok_allowed", bool(self.eok_allowed))

    @classmethod
    def empty(cls, vocab_size: int) -> "Mask":
        return cls(np.zeros(vocab_size, dtype=bool), False)

    @classmethod
    def from_tokens(cls, vocab_size: int, valid: Iterable[int], eok_allowed: bool = False) -> "Mask":
        tokens = np.zeros(vocab_size, dtype=bool)
        tokens[list(valid)] = True
        return cls(tokens, eok_allowed)

    def valid_tokens(self) -> List[int]:
        return np.flatnonzero(self.tokens).tolist()

    def restrict(self, candidates: Iterable[int]) -> "Mask":
        keep = np.zeros_like(self.tokens)
        keep[list(candidates)] = True
        return Mask(self.tokens & keep, self.eok_allowed)

    def format(self, candidates: Iterable[int]) -> str:
        """Render as ``"0:1 3:1 4:0 eok:0"`` for the given candidates."""
        bits = [f"{t}:{int(self.tokens[t])}" for t in candidates]
        bits.append(f"eok:{int(self.eok_allowed)}")
        return " ".join(bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mask):
            return NotImplemented
        return self.eok_allowed == other.eok_allowed and np.array_equal(self.tokens, other.tokens)

    __hash__ = None
