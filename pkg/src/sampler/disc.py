"""Constrained candidate sampling with importance scores (DISC).

A candidate is built token by token from the model restricted to the
verified top-M tokens. The product of the kept masses along the path is the
candidate's importance ``x``. DISC accepts a candidate with probability
``x`` for at most K rounds and otherwise resamples one of K fresh candidates
with probability proportional to ``x``.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from core.distribution import normalize_masked
from core.errors import (
    DeadEndError,
    FallbackDegenerateError,
    MaxLenExceededError,
    NotMemberError,
    ZeroMassError,
)
from core.tokens import TokenSeq
from corpus.index import SortedIndex
from models.base import LanguageModel, TerminationMode
from sampler.config import DiscConfig
from verifier.mask import Mask
from verifier.ppv import is_member, ppv_verify

logger = logging.getLogger(__name__)

EOK = -1


class AcceptedBy(str, Enum):
    ACCEPT = "accept"
    FALLBACK_RESAMPLE = "fallback"


@dataclass(frozen=True)
class SampleOutcome:
    """A sampled keyword and how it was obtained.

    ``rounds_used`` counts acceptance-phase draws (at most K). ``total_draws``
    also counts the K fresh candidates drawn by the fallback.
    """

    sequence: TokenSeq
    log_importance: float
    rounds_used: int
    total_draws: int
    accepted_by: AcceptedBy
    trace: Tuple[Tuple[TokenSeq, float], ...] = field(default=(), compare=True)

    @property
    def importance(self) -> float:
        return math.exp(self.log_importance)


@dataclass(frozen=True)
class VanillaOutcome:
    sequence: TokenSeq
    in_set: bool
    terminated: bool


@dataclass(frozen=True)
class _Step:
    choices: np.ndarray
    cumulative: np.ndarray
    log_mass: float


def spawn_generators(seed: int, n: int) -> List[np.random.Generator]:
    """Independent per-draw generators so draws can run in any order."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _draw(rng: np.random.Generator, cumulative: np.ndarray) -> int:
    u = rng.random() * cumulative[-1]
    return min(int(np.searchsorted(cumulative, u, side="right")), cumulative.size - 1)


def _top_m(probs: np.ndarray, m: int) -> np.ndarray:
    if m >= probs.size:
        return np.arange(probs.size)
    kth = probs[np.argpartition(-probs, m - 1)[m - 1]]
    above = np.flatnonzero(probs > kth)
    # ties at the cut go to the lowest token ids
    chosen = np.concatenate([above, np.flatnonzero(probs == kth)[: m - above.size]])
    return chosen[np.argsort(-probs[chosen], kind="stable")]


class DiscSampler:
    """Runs sampling for one (model, index, config) triple.

    Model and index are deterministic, so the masked step distribution of
    each visited prefix is computed once and reused across draws.

    Args:
        model: The language model.
        idx: Sorted index of the keyword set.
        cfg: Sampling parameters, validated against ``idx`` here.
        cache_size: Maximum number of cached prefixes.
    """

    def __init__(self, model: LanguageModel, idx: SortedIndex, cfg: DiscConfig, cache_size: int = 200_000):
        cfg.validate(idx, model.vocab_size)
        self.model = model
        self.idx = idx
        self.cfg = cfg
        self.cache_size = cache_size
        self._steps: Dict[TokenSeq, _Step] = {}
        self._guard = cfg.length_guard(idx)
        self._eok_mode = cfg.termination is TerminationMode.EOK

    def mask(self, prefix: TokenSeq, probs: np.ndarray) -> Mask:
        """Verified top-M mask at ``prefix``; EOK only counts in EOK mode."""
        if len(prefix) >= self.idx.max_len:
            mask = Mask.empty(self.idx.vocab_size)
            eok_allowed = is_member(self.idx, prefix)
        else:
            mask = ppv_verify(self.idx, prefix, _top_m(probs, self.cfg.M))
            eok_allowed = mask.eok_allowed
        return Mask(mask.tokens, self._eok_mode and eok_allowed)

    def step(self, prefix: TokenSeq) -> _Step:
        cached = self._steps.get(prefix)
        if cached is not None:
            return cached
        dist = self.model.next_distribution(prefix, self.cfg.temperature)
        mask = self.mask(prefix, dist.probs)
        try:
            masked, mass = normalize_masked(dist, mask)
        except ZeroMassError:
            raise DeadEndError(
                f"no verified token in the top {self.cfg.M} has probability at prefix {list(prefix)}"
            ) from None
        choices = np.flatnonzero(mask.tokens)
        weights = masked.probs[choices]
        if mask.eok_allowed:
            choices = np.append(choices, EOK)
            weights = np.append(weights, masked.eok_prob)
        positive = weights > 0
        choices, weights = choices[positive], weights[positive]
        step = _Step(choices, np.cumsum(weights), math.log(mass))
        if len(self._steps) < self.cache_size:
            self._steps[prefix] = step
        return step

    def _finished(self, seq: TokenSeq) -> bool:
        return not self._eok_mode and is_member(self.idx, seq)

    def sample_candidate(self, rng: np.random.Generator) -> Tuple[TokenSeq, float]:
        """Draw one candidate keyword and its log-importance."""
        seq: TokenSeq = ()
        log_x = 0.0
        while True:
            if len(seq) > self._guard:
                raise MaxLenExceededError(f"candidate {list(seq)} exceeds length guard {self._guard}")
            step = self.step(seq)
            log_x += step.log_mass
            token = int(step.choices[_draw(rng, step.cumulative)])
            if token == EOK:
                break
            seq = seq + (token,)
            if self._finished(seq):
                break
        if not is_member(self.idx, seq):
            raise NotMemberError(f"sampled sequence {list(seq)} is not a keyword")
        logger.debug(f"candidate {list(seq)} log_x={log_x:.6g}")
        return seq, log_x

    def importance_score(self, seq: Sequence[int]) -> float:
        """Recompute x(seq) along its path under this sampler's settings.

        Raises:
            NotMemberError: If ``seq`` is not a keyword.
        """
        seq = tuple(int(t) for t in seq)
        if not is_member(self.idx, seq):
            raise NotMemberError(f"{list(seq)} is not a keyword")
        log_x = 0.0
        for i in range(len(seq)):
            log_x += self.step(seq[:i]).log_mass
        if self._eok_mode:
            log_x += self.step(seq).log_mass
        return math.exp(log_x)

    def disc_sample(self, rng: np.random.Generator) -> SampleOutcome:
        K = self.cfg.K
        trace = []
        rounds = 0
        while K is None or rounds < K:
            seq, log_x = self.sample_candidate(rng)
            rounds += 1
            trace.append((seq, log_x))
            if math.exp(log_x) > rng.random():
                return SampleOutcome(seq, log_x, rounds, rounds, AcceptedBy.ACCEPT, tuple(trace))
        fresh = [self.sample_candidate(rng) for _ in range(K)]
        log_w = np.array([lx for _, lx in fresh])
        total = logsumexp(log_w)
        if not np.isfinite(total):
            raise FallbackDegenerateError("importance weights of the fallback candidates vanish")
        j = _draw(rng, np.cumsum(np.exp(log_w - total)))
        seq, log_x = fresh[j]
        trace.extend(fresh)
        logger.debug(f"fallback resampled candidate {j} of {K}")
        return SampleOutcome(seq, log_x, rounds, rounds + K, AcceptedBy.FALLBACK_RESAMPLE, tuple(trace))

    def cd_sample(self, rng: np.random.Generator) -> TokenSeq:
        return self.sample_candidate(rng)[0]

    def vanilla_sample(self, rng: np.random.Generator) -> VanillaOutcome:
        """Unconstrained draw: stops on EOK, on membership (prefix-free
        termination) or when the model's max_len is reached."""
        seq: TokenSeq = ()
        while len(seq) < self.model.max_len:
            dist = self.model.next_distribution(seq, self.cfg.temperature)
            joint = np.append(dist.probs, dist.eok_prob)
            support = np.flatnonzero(joint > 0)
            token = int(support[_draw(rng, np.cumsum(joint[support]))])
            if token == dist.vocab_size:
                return VanillaOutcome(seq, self._eok_mode and is_member(self.idx, seq), True)
            seq = seq + (token,)
            if self._finished(seq):
                return VanillaOutcome(seq, True, True)
        return VanillaOutcome(seq, False, False)


def sample_candidate(m: LanguageModel, idx: SortedIndex, cfg: DiscConfig, rng: np.random.Generator) -> Tuple[TokenSeq, float]:
    """One constrained candidate and its importance ``x`` (linear scale)."""
    seq, log_x = DiscSampler(m, idx, cfg).sample_candidate(rng)
    return seq, math.exp(log_x)


def disc_sample(m: LanguageModel, idx: SortedIndex, cfg: DiscConfig, rng: np.random.Generator) -> SampleOutcome:
    return DiscSampler(m, idx, cfg).disc_sample(rng)


def cd_sample(m: LanguageModel, idx: SortedIndex, cfg: DiscConfig, rng: np.random.Generator) -> TokenSeq:
    return DiscSampler(m, idx, cfg).cd_sample(rng)


def importance_score(m: LanguageModel, idx: SortedIndex, seq: Sequence[int], cfg: DiscConfig) -> float:
    return DiscSampler(m, idx, cfg).importance_score(seq)


def vanilla_sample(m: LanguageModel, idx: SortedIndex, cfg: DiscConfig, rng: np.random.Generator) -> VanillaOutcome:
    return DiscSampler(m, idx, cfg).vanilla_sample(rng)
