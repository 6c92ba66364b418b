"""Next-token distributions over a vocabulary plus an end-of-keyword slot."""

from dataclasses import dataclass
from typing import Protocol, Tuple

import numpy as np

from core.errors import InvalidDistributionError, UsageError, ZeroMassError

SUM_TOLERANCE = 1e-9


class MaskLike(Protocol):
    tokens: np.ndarray
    eok_allowed: bool


@dataclass(frozen=True, eq=False)
class TokenDistribution:
    """P_L(. | prefix): ``probs`` over the vocabulary and ``eok_prob`` for EOK.

    The probability array is stored read-only so instances can be shared
    between workers.
    """

    probs: np.ndarray
    eok_prob: float = 0.0

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "eok_prob", float(self.eok_prob))
        if probs.ndim != 1 or probs.size == 0:
            raise InvalidDistributionError("probs must be a non-empty vector")
        if not np.all(np.isfinite(probs)) or not np.isfinite(self.eok_prob):
            raise InvalidDistributionError("distribution has non-finite entries")
        if np.any(probs < 0) or self.eok_prob < 0:
            raise InvalidDistributionError("distribution has negative entries")
        total = float(probs.sum()) + self.eok_prob
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise InvalidDistributionError(f"distribution sums to {total!r}, not 1")

    @property
    def vocab_size(self) -> int:
        return self.probs.size

    @classmethod
    def from_weights(cls, weights, eok_weight: float = 0.0) -> "TokenDistribution":
        """Normalize non-negative weights (vocabulary part, EOK part)."""
        weights = np.asarray(weights, dtype=np.float64)
        total = float(weights.sum()) + float(eok_weight)
        if total <= 0:
            raise ZeroMassError("cannot normalize zero weights")
        return cls(weights / total, eok_weight / total)

    def with_temperature(self, temperature: float) -> "TokenDistribution":
        """Apply p_i ** (1/T) to (probs, eok) jointly and renormalize."""
        if not temperature > 0:
            raise UsageError(f"temperature must be positive, got {temperature}")
        if temperature == 1.0:
            return self
        exponent = 1.0 / temperature
        return TokenDistribution.from_weights(
            np.power(self.probs, exponent), self.eok_prob**exponent
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, TokenDistribution):
            return NotImplemented
        return self.eok_prob == other.eok_prob and np.array_equal(self.probs, other.probs)

    __hash__ = None


def normalize_masked(d: TokenDistribution, mask: MaskLike) -> Tuple[TokenDistribution, float]:
    """Restrict ``d`` to the masked coordinates and renormalize.

    Args:
        d: The model distribution.
        mask: Boolean token mask plus the ``eok_allowed`` flag.

    Returns:
        The renormalized distribution and the pre-normalization mass
        ``|P * mask|_1``, which is the per-step importance factor.

    Raises:
        ZeroMassError: If the masked mass is zero.
    """
    keep = np.asarray(mask.tokens, dtype=bool)
    masked = np.where(keep, d.probs, 0.0)
    masked_eok = d.eok_prob if mask.eok_allowed else 0.0
    mass = float(masked.sum()) + masked_eok
    if mass <= 0.0:
        raise ZeroMassError("masked probability mass is zero")
    return TokenDistribution(masked / mass, masked_eok / mass), mass
