"""The autoregressive model contract P_L(. | prefix)."""

import math
from abc import ABC, abstractmethod
from enum import Enum
from typing import List, Optional, Sequence

from core.distribution import TokenDistribution
from core.errors import PrefixTooLongError, UsageError
from core.tokens import TokenSeq, Vocabulary


class TerminationMode(str, Enum):
    """How a generated keyword ends.

    PREFIX_FREE stops as soon as the sequence is a keyword and never counts
    the EOK probability. EOK stops when the EOK coordinate is drawn, which is
    only permitted on keywords, and multiplies P_L by the final EOK factor.
    """

    PREFIX_FREE = "prefixfree"
    EOK = "eok"

    @classmethod
    def parse(cls, value) -> "TerminationMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise UsageError(f"unknown termination mode {value!r}; use eok or prefixfree") from None


class LanguageModel(ABC):
    """Deterministic next-token distributions over ``vocab``.

    Subclasses implement ``base_distribution``; temperature is applied here.
    """

    # termination convention the model was written for, when it declares one
    mode: Optional[TerminationMode] = None

    def __init__(self, vocab: Vocabulary, max_len: int):
        if max_len < 1:
            raise UsageError(f"max_len must be positive, got {max_len}")
        self.vocab = vocab
        self.max_len = max_len

    @property
    def vocab_size(self) -> int:
        return self.vocab.vocab_size

    @abstractmethod
    def base_distribution(self, prefix: TokenSeq) -> TokenDistribution:
        """The stored distribution at temperature 1."""

    def next_distribution(self, prefix: Sequence[int], temperature: float = 1.0) -> TokenDistribution:
        """P_L(. | prefix) at ``temperature``.

        Raises:
            PrefixTooLongError: If ``len(prefix) >= max_len``.
            UsageError: If ``temperature <= 0``.
        """
        prefix = tuple(prefix)
        if len(prefix) >= self.max_len:
            raise PrefixTooLongError(
                f"prefix of length {len(prefix)} reaches model max_len {self.max_len}"
            )
        if not temperature > 0:
            raise UsageError(f"temperature must be positive, got {temperature}")
        return self.base_distribution(prefix).with_temperature(temperature)

    def close(self):
        pass


def next_distribution(m: LanguageModel, prefix: Sequence[int], temperature: float = 1.0) -> TokenDistribution:
    return m.next_distribution(prefix, temperature)


def _path_factors(m: LanguageModel, seq: TokenSeq, temperature: float, mode: TerminationMode) -> List[float]:
    if len(seq) > m.max_len:
        raise PrefixTooLongError(f"sequence of length {len(seq)} exceeds model max_len {m.max_len}")
    factors = [float(m.next_distribution(seq[:i], temperature).probs[t]) for i, t in enumerate(seq)]
    if TerminationMode.parse(mode) is TerminationMode.EOK:
        factors.append(m.next_distribution(seq, temperature).eok_prob)
    return factors


def sequence_probability(
    m: LanguageModel, seq: Sequence[int], temperature: float = 1.0, mode: TerminationMode = TerminationMode.EOK
) -> float:
    """P_L(seq): product of conditionals, times the final EOK factor in EOK mode.

    Raises:
        PrefixTooLongError: If ``seq`` (plus the EOK query) exceeds ``max_len``.
    """
    return math.prod(_path_factors(m, tuple(seq), temperature, mode))


def sequence_log_probability(
    m: LanguageModel, seq: Sequence[int], temperature: float = 1.0, mode: TerminationMode = TerminationMode.EOK
) -> float:
    """Natural log of ``sequence_probability``; ``-inf`` for impossible sequences."""
    factors = _path_factors(m, tuple(seq), temperature, mode)
    if min(factors, default=1.0) <= 0.0:
        return -math.inf
    return math.fsum(math.log(f) for f in factors)
