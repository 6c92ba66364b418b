import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from core.distribution import TokenDistribution  # noqa: E402
from core.tokens import Vocabulary  # noqa: E402
from corpus.constraint_set import ConstraintSet  # noqa: E402
from corpus.index import build_index  # noqa: E402
from models.base import TerminationMode  # noqa: E402
from models.tabular import TabularModel, shopping_example, worst_case_model  # noqa: E402

PROJECT_ROOT = Path(__file__).resolve().parents[1]
SOCCER, USED, GLOVES, SHIRTS, SHOES = range(5)


def random_keywords(rng: np.random.Generator, vocab_size: int, n_keywords: int, max_len: int):
    n_keywords = min(n_keywords, sum(vocab_size**k for k in range(1, max_len + 1)))
    seqs = set()
    while len(seqs) < n_keywords:
        length = int(rng.integers(1, max_len + 1))
        seqs.add(tuple(rng.integers(0, vocab_size, size=length).tolist()))
    return ConstraintSet.from_sequences(seqs, Vocabulary(vocab_size))


def random_instance(seed: int, vocab_size: int = 3, n_keywords: int = 6, max_len: int = 3):
    """Random keyword set plus a seeded tabular model able to emit every keyword."""
    rng = np.random.default_rng(seed)
    s = random_keywords(rng, vocab_size, n_keywords, max_len)
    model = TabularModel.random(vocab_size, s.max_len + 1, seed)
    return model, s, build_index(s)


def saturated_instance():
    """Every unit of model mass lands in S = {(0,), (1,)}."""
    vocab = Vocabulary(2)
    table = {(): TokenDistribution(np.array([0.3, 0.7]), 0.0)}
    model = TabularModel(vocab, 2, table, mode=TerminationMode.EOK)
    s = ConstraintSet.from_sequences([(0,), (1,)], vocab)
    return model, s, build_index(s)


@pytest.fixture
def shopping():
    model, s = shopping_example()
    return model, s, build_index(s)


@pytest.fixture
def worst_case():
    model, s = worst_case_model(0.5, 0.1)
    return model, s, build_index(s)


@pytest.fixture
def saturated():
    return saturated_instance()
