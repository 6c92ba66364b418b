from dataclasses import dataclass, replace
from typing import Optional

from core.errors import UsageError
from corpus.index import SortedIndex
from models.base import TerminationMode

DEFAULT_K = 4
DEFAULT_M = 50


@dataclass(frozen=True)
class DiscConfig:
    """Sampling parameters.

    Attributes:
        K: Acceptance rounds before the resampling fallback; ``None`` loops
            until a candidate is accepted.
        M: Number of highest-probability tokens verified at each step.
        temperature: Model temperature.
        termination: ``PREFIX_FREE`` stops on membership, ``EOK`` stops when
            the EOK coordinate is drawn.
        max_len: Guard on candidate length; defaults to the longest keyword.
        seed: Seed for ``numpy.random.default_rng``.
    """

    K: Optional[int] = DEFAULT_K
    M: int = DEFAULT_M
    temperature: float = 1.0
    termination: TerminationMode = TerminationMode.EOK
    max_len: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "termination", TerminationMode.parse(self.termination))

    @classmethod
    def for_index(cls, idx: SortedIndex, termination: Optional[TerminationMode] = None, **kwargs) -> "DiscConfig":
        """Config whose termination defaults to PREFIX_FREE when the index allows it."""
        if termination is None:
            termination = TerminationMode.PREFIX_FREE if idx.prefix_free else TerminationMode.EOK
        return cls(termination=termination, **kwargs)

    @classmethod
    def exact(cls, idx: SortedIndex, K: Optional[int] = None, **kwargs) -> "DiscConfig":
        """Verify the whole vocabulary at every step (M = vocab_size)."""
        return cls.for_index(idx, K=K, M=idx.vocab_size, **kwargs)

    def with_k(self, K: Optional[int]) -> "DiscConfig":
        return replace(self, K=K)

    def length_guard(self, idx: SortedIndex) -> int:
        return self.max_len if self.max_len is not None else idx.max_len

    def validate(self, idx: SortedIndex, vocab_size: Optional[int] = None):
        """Check the config against an index (and model vocabulary).

        Raises:
            UsageError: On any invalid parameter.
        """
        vocab_size = idx.vocab_size if vocab_size is None else vocab_size
        if vocab_size != idx.vocab_size:
            raise UsageError(f"model vocabulary {vocab_size} does not match index vocabulary {idx.vocab_size}")
        if self.K is not None and (not isinstance(self.K, int) or self.K < 1):
            raise UsageError(f"K must be a positive integer or infinite, got {self.K!r}")
        if not isinstance(self.M, int) or not 1 <= self.M <= vocab_size:
            raise UsageError(f"M must lie in [1, {vocab_size}], got {self.M!r}")
        if not self.temperature > 0:
            raise UsageError(f"temperature must be positive, got {self.temperature}")
        if self.max_len is not None and self.max_len < 1:
            raise UsageError(f"max_len guard must be positive, got {self.max_len}")
        if self.termination is TerminationMode.PREFIX_FREE and not idx.prefix_free:
            raise UsageError("prefixfree termination needs a prefix-free keyword set; use --mode eok")
