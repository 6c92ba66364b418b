"""Divergences between exact distributions and the closed-form bounds."""

import logging
import math
from collections import Counter
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import rel_entr

from core.errors import DomainError, SupportMismatchError
from core.tokens import TokenSeq
from oracle.exact import ExactDistribution, mixture

logger = logging.getLogger(__name__)


def _aligned(p: ExactDistribution, q: ExactDistribution) -> Tuple[np.ndarray, np.ndarray]:
    keys = sorted(set(p.probs) | set(q.probs))
    return p.vector(keys), q.vector(keys)


def support_mismatch(p: ExactDistribution, q: ExactDistribution) -> bool:
    """True when p puts mass where q has none."""
    pv, qv = _aligned(p, q)
    return bool(np.any((pv > 0) & (qv == 0)))


def kl(p: ExactDistribution, q: ExactDistribution) -> float:
    """KL(p || q) in nats; +inf when p's support is not inside q's."""
    pv, qv = _aligned(p, q)
    value = math.fsum(rel_entr(pv, qv))
    if math.isinf(value):
        logger.debug("KL is infinite: support mismatch")
    return value


def total_variation(p: ExactDistribution, q: ExactDistribution) -> float:
    pv, qv = _aligned(p, q)
    return 0.5 * math.fsum(np.abs(pv - qv))


def empirical_distribution(samples: Iterable[Sequence[int]]) -> ExactDistribution:
    """Plug-in histogram of sampled keywords."""
    counts = Counter(tuple(s) for s in samples)
    n = sum(counts.values())
    if not n:
        raise DomainError("no samples")
    return ExactDistribution({seq: c / n for seq, c in counts.items()})


def mixture_kl_gap(p: ExactDistribution, q: ExactDistribution, t: float) -> Tuple[float, float]:
    """Both sides of KL(p || t*p + (1-t)*q) <= (1-t) * KL(p || q).

    Raises:
        DomainError: If t is outside [0, 1].
        SupportMismatchError: If p is not absolutely continuous w.r.t. q.
    """
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    if support_mismatch(p, q):
        raise SupportMismatchError("p has mass outside the support of q")
    lhs = kl(p, mixture(p, q, t))
    if t == 1.0:
        return lhs, 0.0
    return lhs, (1.0 - t) * kl(p, q)


def _check_pb(p_b: float, K: Optional[int]):
    if not 0.0 <= p_b < 1.0:
        raise DomainError(f"p_b must lie in [0, 1), got {p_b}")
    if K is not None and (not isinstance(K, (int, np.integer)) or K < 1):
        raise DomainError(f"K must be a positive integer, got {K!r}")


def disc_kl_bound(p_b: float, K: int) -> float:
    """Upper bound on KL(P_S || DISC_K): p_b^K * (sqrt(r) + r/2) with r = p_b / (K (1 - p_b))."""
    _check_pb(p_b, K)
    if K is None:
        return 0.0
    r = p_b / (K * (1.0 - p_b))
    return p_b**K * (math.sqrt(r) + r / 2.0)


def expected_steps(p_b: float, K: Optional[int]) -> float:
    """Expected candidate draws of DISC, fallback included: (1 - p_b^K)/(1 - p_b) + K p_b^K."""
    _check_pb(p_b, K)
    if K is None:
        return 1.0 / (1.0 - p_b)
    return (1.0 - p_b**K) / (1.0 - p_b) + K * p_b**K


def expected_steps_ceiling(p_b: float) -> float:
    """(1 + e) / (1 - p_b), valid for every K."""
    _check_pb(p_b, None)
    return (1.0 + math.e) / (1.0 - p_b)


def worst_case_kl(p_b: float, eps: float) -> float:
    """Closed-form KL(P_S || P_CD) for the two-token worst-case construction."""
    if not 0.0 < p_b < 1.0 or not 0.0 < eps < 1.0:
        raise DomainError(f"need 0 < p_b < 1 and 0 < eps < 1, got p_b={p_b}, eps={eps}")
    z = 1.0 - p_b + p_b * eps
    kappa = (1.0 - p_b) / z
    return kappa * math.log(kappa / (1.0 - p_b)) + (p_b * eps / z) * math.log(eps / z)


def bias_reference(p_b: float) -> float:
    """ln(1 / (1 - p_b)), the scale of the worst-case constrained-decoding bias."""
    _check_pb(p_b, None)
    return -math.log1p(-p_b)
