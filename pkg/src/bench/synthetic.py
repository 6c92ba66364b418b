"""Seeded synthetic keyword sets and verification workloads."""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from core.tokens import TokenSeq, Vocabulary
from corpus.constraint_set import ConstraintSet

DEFAULT_VOCAB_SIZE = 50264
MEAN_LENGTH = 8
MAX_LENGTH = 24


def synthetic_keywords(
    n: int,
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    seed: int = 0,
    mean_len: float = MEAN_LENGTH,
    max_len: int = MAX_LENGTH,
) -> ConstraintSet:
    """``n`` distinct keywords with geometric lengths (capped) and uniform tokens."""
    rng = np.random.default_rng(seed)
    keywords = set()
    while len(keywords) < n:
        batch = n - len(keywords)
        lengths = np.minimum(rng.geometric(1.0 / mean_len, size=batch), max_len)
        tokens = rng.integers(0, vocab_size, size=int(lengths.sum()))
        ends = np.cumsum(lengths)
        for start, end in zip(ends - lengths, ends):
            keywords.add(tuple(tokens[start:end].tolist()))
    return ConstraintSet.from_sequences(keywords, Vocabulary(vocab_size))


@dataclass(frozen=True)
class VerifyQuery:
    prefix: TokenSeq
    candidates: np.ndarray


def verify_workload(s: ConstraintSet, n_queries: int, M: int, seed: int = 0) -> List[VerifyQuery]:
    """Queries on random reachable prefixes.

    Each query cuts a random keyword at a random point and offers the true
    next token among M distinct candidates.
    """
    rng = np.random.default_rng(seed)
    keywords = s.sorted()
    vocab_size = s.vocab.vocab_size
    M = min(M, vocab_size)
    queries = []
    for k in rng.integers(0, len(keywords), size=n_queries):
        keyword = keywords[k]
        cut = int(rng.integers(0, len(keyword)))
        candidates = rng.choice(vocab_size, size=M, replace=False)
        nxt = keyword[cut]
        if nxt not in candidates:
            candidates[0] = nxt
        queries.append(VerifyQuery(keyword[:cut], candidates))
    return queries


def split_sizes(text: str) -> Tuple[int, ...]:
    """Parse ``"1e3,1e4"`` style size lists."""
    return tuple(int(float(part)) for part in text.split(",") if part.strip())
