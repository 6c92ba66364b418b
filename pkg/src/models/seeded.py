import numpy as np

from core.distribution import TokenDistribution
from core.errors import UsageError
from core.tokens import TokenSeq, Vocabulary
from models.base import LanguageModel


class SeededRandomModel(LanguageModel):
    """Reproducible random distributions, one Dirichlet draw per prefix.

    The generator for a prefix is seeded from ``(seed, prefix)`` alone, so two
    processes with the same seed produce identical distributions no matter
    which prefixes they query or in which order. Small ``concentration``
    gives sharp distributions. The root never puts mass on EOK.
    """

    def __init__(self, vocab_size: int, max_len: int, seed: int, concentration: float = 1.0):
        super().__init__(Vocabulary(vocab_size), max_len)
        if not concentration > 0:
            raise UsageError(f"concentration must be positive, got {concentration}")
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.concentration = float(concentration)
        self._cache = {}

    def base_distribution(self, prefix: TokenSeq) -> TokenDistribution:
        dist = self._cache.get(prefix)
        if dist is None:
            seq = np.random.SeedSequence(self.seed, spawn_key=(len(prefix),) + tuple(prefix))
            rng = np.random.default_rng(seq)
            weights = rng.dirichlet(np.full(self.vocab_size + 1, self.concentration))
            eok = 0.0 if not prefix else weights[-1]
            dist = TokenDistribution.from_weights(weights[:-1], eok)
            self._cache[prefix] = dist
        return dist
