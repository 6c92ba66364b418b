"""Exact distributions over a small keyword set, computed by enumeration.

All functions take a ``TabularModel`` and the keyword set S. ``mode``
defaults to the mode the model declares, then to PREFIX_FREE when S is
prefix-free and EOK otherwise, which is also the sampler's default. Every valid token is considered at each step
(M = vocab_size).
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from core.errors import DegenerateError, EnumerationBudgetExceeded, UsageError
from core.tokens import TokenSeq, format_tokens
from corpus.constraint_set import ConstraintSet, check_prefix_free
from models.base import TerminationMode, sequence_probability
from models.tabular import TabularModel
from verifier.trie import TrieNode, trie_build

logger = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-9
MAX_SET_SIZE = 64
MAX_TUPLES = 10**6


@dataclass(frozen=True, eq=False)
class ExactDistribution:
    """Probabilities of keywords; absent keywords have probability 0."""

    probs: Dict[TokenSeq, float]

    def __post_init__(self):
        probs = {tuple(k): float(v) for k, v in self.probs.items()}
        if any(not math.isfinite(v) or v < 0 for v in probs.values()):
            raise DegenerateError("exact distribution has negative or non-finite values")
        total = math.fsum(probs.values())
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise DegenerateError(f"exact distribution sums to {total!r}")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_weights(cls, weights: Dict[TokenSeq, float]) -> "ExactDistribution":
        total = math.fsum(weights.values())
        if not total > 0:
            raise DegenerateError("all keywords have zero probability")
        return cls({k: v / total for k, v in weights.items()})

    def __getitem__(self, seq) -> float:
        return self.probs.get(tuple(seq), 0.0)

    def __len__(self) -> int:
        return len(self.probs)

    def keys(self) -> List[TokenSeq]:
        return sorted(self.probs)

    def support(self) -> List[TokenSeq]:
        return [k for k in self.keys() if self.probs[k] > 0]

    def vector(self, keys: List[TokenSeq]) -> np.ndarray:
        return np.array([self[k] for k in keys], dtype=np.float64)

    def to_lines(self) -> Iterator[str]:
        for seq in self.keys():
            yield f"{format_tokens(seq)}\t{self.probs[seq]:.17g}"

    def save(self, path: Union[str, Path]):
        with open(path, "w") as f:
            for line in self.to_lines():
                f.write(line + "\n")


def _check(m: TabularModel, s: ConstraintSet, mode: Optional[TerminationMode]) -> TerminationMode:
    if not isinstance(m, TabularModel):
        raise UsageError("exact oracles need a tabular model")
    if m.vocab_size != s.vocab.vocab_size:
        raise UsageError(f"model vocabulary {m.vocab_size} does not match keyword vocabulary {s.vocab.vocab_size}")
    if len(s) > MAX_SET_SIZE:
        raise EnumerationBudgetExceeded(f"|S| = {len(s)} exceeds the enumeration limit {MAX_SET_SIZE}")
    if mode is None:
        mode = m.mode
    if mode is None:
        return TerminationMode.PREFIX_FREE if check_prefix_free(s) else TerminationMode.EOK
    return TerminationMode.parse(mode)


def _path_probabilities(m: TabularModel, s: ConstraintSet, mode: TerminationMode, temperature: float) -> Dict[TokenSeq, float]:
    return {a: sequence_probability(m, a, temperature, mode) for a in s.sorted()}


def _walk(m: TabularModel, s: ConstraintSet, mode: TerminationMode, temperature: float) -> Tuple[Dict[TokenSeq, float], Dict[TokenSeq, float]]:
    """Masked walk of the keyword trie: (P_CD(a), x(a)) for every keyword."""
    cd: Dict[TokenSeq, float] = {}
    importance: Dict[TokenSeq, float] = {}
    eok_mode = mode is TerminationMode.EOK
    stack: List[Tuple[TokenSeq, TrieNode, float, float]] = [((), trie_build(s).root, 1.0, 1.0)]
    while stack:
        prefix, node, reach, x = stack.pop()
        if node.terminal and not eok_mode:
            cd[prefix], importance[prefix] = reach, x
            continue
        dist = m.next_distribution(prefix, temperature)
        children = sorted(node.children)
        eok = dist.eok_prob if node.terminal else 0.0
        mass = math.fsum([float(dist.probs[t]) for t in children] + [eok])
        if mass <= 0.0:
            if reach > 0.0:
                raise DegenerateError(f"constrained decoding dead-ends at reachable prefix {list(prefix)}")
            mass = 1.0
        if node.terminal:
            cd[prefix], importance[prefix] = reach * eok / mass, x * mass
        for t in children:
            stack.append((prefix + (t,), node.children[t], reach * float(dist.probs[t]) / mass, x * mass))
    return cd, importance


def p_bad(m: TabularModel, s: ConstraintSet, mode: Optional[TerminationMode] = None, temperature: float = 1.0) -> float:
    """Model mass outside S: 1 - sum of P_L(a) over keywords."""
    mode = _check(m, s, mode)
    return 1.0 - math.fsum(_path_probabilities(m, s, mode, temperature).values())


def exact_target(m: TabularModel, s: ConstraintSet, mode: Optional[TerminationMode] = None, temperature: float = 1.0) -> ExactDistribution:
    """P_S(a) = P_L(a) / P_L(S).

    Raises:
        DegenerateError: If P_L(S) = 0.
    """
    mode = _check(m, s, mode)
    return ExactDistribution.from_weights(_path_probabilities(m, s, mode, temperature))


def exact_cd(m: TabularModel, s: ConstraintSet, mode: Optional[TerminationMode] = None, temperature: float = 1.0) -> ExactDistribution:
    """Output distribution of step-wise masking and renormalization."""
    mode = _check(m, s, mode)
    cd, _ = _walk(m, s, mode, temperature)
    return ExactDistribution(cd)


def importance_weights(m: TabularModel, s: ConstraintSet, mode: Optional[TerminationMode] = None, temperature: float = 1.0) -> Dict[TokenSeq, float]:
    """x(a): product of the kept masses along each keyword's path."""
    mode = _check(m, s, mode)
    return _walk(m, s, mode, temperature)[1]


def importance_distribution(m: TabularModel, s: ConstraintSet, mode: Optional[TerminationMode] = None, temperature: float = 1.0) -> ExactDistribution:
    """P_hat(a) = P_L(a) / x(a), the single-candidate distribution."""
    mode = _check(m, s, mode)
    path = _path_probabilities(m, s, mode, temperature)
    _, x = _walk(m, s, mode, temperature)
    return ExactDistribution({a: path[a] / x[a] if x[a] > 0 else 0.0 for a in path})


def acceptance_probability(m: TabularModel, s: ConstraintSet, mode: Optional[TerminationMode] = None, temperature: float = 1.0) -> float:
    """Chance one candidate is accepted: sum of P_hat(a) * x(a) = 1 - p_b."""
    mode = _check(m, s, mode)
    p_hat = importance_distribution(m, s, mode, temperature)
    x = importance_weights(m, s, mode, temperature)
    return math.fsum(p_hat[a] * x[a] for a in x)


def resample_distribution(m: TabularModel, s: ConstraintSet, K: int, mode: Optional[TerminationMode] = None, temperature: float = 1.0) -> ExactDistribution:
    """Q: law of the fallback pick among K candidates drawn from P_hat.

    Q(a) = K * P_hat(a) * E[x(a) / (x(a) + x(a_2) + ... + x(a_K))] with the
    other K-1 candidates drawn independently from P_hat.

    Raises:
        EnumerationBudgetExceeded: If |S|^(K-1) exceeds the tuple limit.
    """
    mode = _check(m, s, mode)
    if not isinstance(K, int) or K < 1:
        raise UsageError(f"K must be a positive integer, got {K!r}")
    if len(s) ** (K - 1) > MAX_TUPLES:
        raise EnumerationBudgetExceeded(f"|S|^(K-1) = {len(s)}^{K - 1} exceeds {MAX_TUPLES}")
    keys = s.sorted()
    p_hat = importance_distribution(m, s, mode, temperature).vector(keys)
    weights = importance_weights(m, s, mode, temperature)
    x = np.array([weights[a] for a in keys])

    # law of x(a_2) + ... + x(a_K) over every (K-1)-tuple
    tuple_prob = np.ones(1)
    tuple_x = np.zeros(1)
    for _ in range(K - 1):
        tuple_prob = np.outer(tuple_prob, p_hat).ravel()
        tuple_x = np.add.outer(tuple_x, x).ravel()

    q = {}
    for a, pa, xa in zip(keys, p_hat, x):
        if pa == 0.0:
            q[a] = 0.0
            continue
        share = xa / (xa + tuple_x)
        q[a] = K * pa * math.fsum(tuple_prob * share)
    return ExactDistribution(q)


def mixture(p: ExactDistribution, q: ExactDistribution, t: float) -> ExactDistribution:
    """t * p + (1 - t) * q."""
    keys = sorted(set(p.probs) | set(q.probs))
    return ExactDistribution({k: t * p[k] + (1.0 - t) * q[k] for k in keys})


def exact_disc(m: TabularModel, s: ConstraintSet, K: Optional[int], mode: Optional[TerminationMode] = None, temperature: float = 1.0) -> ExactDistribution:
    """Output law of DISC with K rounds: p_b^K * Q + (1 - p_b^K) * P_S.

    ``K=None`` (no round limit) returns P_S.
    """
    mode = _check(m, s, mode)
    target = exact_target(m, s, mode, temperature)
    if K is None:
        return target
    fail = max(p_bad(m, s, mode, temperature), 0.0) ** K
    if fail == 0.0:
        return target
    q = resample_distribution(m, s, K, mode, temperature)
    return mixture(q, target, fail)
