import math

import numpy as np
import pytest

from conftest import GLOVES, SHIRTS, SHOES, SOCCER, USED, random_instance
from core.errors import DegenerateError, DomainError, EnumerationBudgetExceeded, SupportMismatchError, UsageError
from core.tokens import Vocabulary
from corpus.constraint_set import ConstraintSet
from models.base import TerminationMode
from models.seeded import SeededRandomModel
from models.tabular import TabularModel, parse_table, worst_case_model
from oracle.divergence import (
    bias_reference,
    disc_kl_bound,
    empirical_distribution,
    expected_steps,
    expected_steps_ceiling,
    kl,
    mixture_kl_gap,
    total_variation,
    worst_case_kl,
)
from oracle.exact import (
    ExactDistribution,
    acceptance_probability,
    exact_cd,
    exact_disc,
    exact_target,
    importance_distribution,
    p_bad,
    resample_distribution,
)


def two_point(a, b):
    return ExactDistribution({(0,): a, (1,): b})


def random_distribution(rng, size):
    weights = rng.dirichlet(np.full(size, 0.5))
    return ExactDistribution.from_weights({(i,): float(w) for i, w in enumerate(weights)})


def test_p_bad_examples(worst_case, shopping):
    model, s, _ = worst_case
    assert p_bad(model, s) == pytest.approx(0.45)
    model, s, _ = shopping
    assert p_bad(model, s) == pytest.approx(0.576)


def test_shopping_target_and_cd(shopping):
    model, s, _ = shopping
    target = exact_target(model, s)
    assert target[(SOCCER, GLOVES)] == pytest.approx(0.06 / 0.424)
    assert target[(USED, SHIRTS)] == pytest.approx(0.04 / 0.424)
    assert target[(USED, SOCCER, SHOES)] == pytest.approx(0.324 / 0.424)
    cd = exact_cd(model, s)
    assert cd[(SOCCER, GLOVES)] == pytest.approx(0.6)
    assert cd[(USED, SHIRTS)] == pytest.approx(0.04)
    assert cd[(USED, SOCCER, SHOES)] == pytest.approx(0.36)
    assert cd[(SOCCER, SHOES)] == 0.0


def test_importance_distribution_equals_cd_with_full_mask(shopping):
    model, s, _ = shopping
    p_hat = importance_distribution(model, s)
    cd = exact_cd(model, s)
    for a in s:
        assert p_hat[a] == pytest.approx(cd[a], abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_acceptance_probability_is_mass_inside(seed):
    model, s, _ = random_instance(seed)
    assert acceptance_probability(model, s) == pytest.approx(1.0 - p_bad(model, s), abs=1e-12)


def test_single_round(worst_case):
    model, s, _ = worst_case
    p_b = p_bad(model, s)
    cd = exact_cd(model, s)
    target = exact_target(model, s)
    fallback = resample_distribution(model, s, 1)
    one = exact_disc(model, s, 1)
    for a in s:
        assert fallback[a] == pytest.approx(cd[a], abs=1e-12)
        assert one[a] == pytest.approx(p_b * cd[a] + (1 - p_b) * target[a], abs=1e-12)



def test_saturated_set_is_exact(saturated):
    model, s, _ = saturated
    target = exact_target(model, s)
    assert p_bad(model, s) == pytest.approx(0.0, abs=1e-12)
    for K in (1, 3, None):
        assert total_variation(exact_disc(model, s, K), target) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("K", [1, 2, 3, 4])
def test_disc_is_mixture_of_fallback_and_target(worst_case, K):
    model, s, _ = worst_case
    p_b = p_bad(model, s)
    disc = exact_disc(model, s, K)
    q = resample_distribution(model, s, K)
    target = exact_target(model, s)
    for a in s:
        assert disc[a] == pytest.approx(p_b**K * q[a] + (1 - p_b**K) * target[a], abs=1e-12)


def test_kl_two_point_example():
    assert kl(two_point(0.5, 0.5), two_point(0.9, 0.1)) == pytest.approx(0.510826, abs=1e-6)
    assert kl(two_point(0.5, 0.5), two_point(0.5, 0.5)) == 0.0
    assert kl(two_point(0.5, 0.5), ExactDistribution({(0,): 1.0})) == math.inf


def test_worst_case_closed_form_matches_enumeration(worst_case):
    model, s, _ = worst_case
    generic = kl(exact_target(model, s), exact_cd(model, s))
    assert generic == pytest.approx(worst_case_kl(0.5, 0.1), abs=1e-9)
    assert worst_case_kl(0.5, 0.1) == pytest.approx(0.388511, abs=1e-6)


@pytest.mark.parametrize("p_b", [0.3, 0.6, 0.9])
def test_worst_case_reaches_half_the_bias_reference(p_b):
    model, s = worst_case_model(p_b, 1e-6)
    generic = kl(exact_target(model, s), exact_cd(model, s))
    assert generic == pytest.approx(worst_case_kl(p_b, 1e-6), abs=1e-9)
    assert generic >= 0.5 * bias_reference(p_b)


def test_worst_case_domain():
    with pytest.raises(DomainError):
        worst_case_kl(1.0, 0.1)


def test_bound_and_expected_steps_examples():
    assert disc_kl_bound(0.45, 2) == pytest.approx(0.170940, abs=1e-6)
    assert expected_steps(0.45, 2) == pytest.approx(1.855)
    assert expected_steps(0.45, None) == pytest.approx(1 / 0.55)
    assert disc_kl_bound(0.0, 3) == 0.0
    assert expected_steps(0.0, 3) == 1.0
    assert bias_reference(0.4) == pytest.approx(0.510826, abs=1e-6)


@pytest.mark.parametrize("p_b", [0.0, 0.1, 0.45, 0.8, 0.99])
def test_expected_steps_ceiling(p_b):
    ceiling = expected_steps_ceiling(p_b)
    for K in range(1, 65):
        assert expected_steps(p_b, K) <= ceiling


@pytest.mark.parametrize("p_b, K", [(1.0, 2), (-0.1, 2), (0.5, 0)])
def test_bound_domain(p_b, K):
    with pytest.raises(DomainError):
        disc_kl_bound(p_b, K)


def _mixture_gap_cases(n):
    rng = np.random.default_rng(2024)
    for _ in range(n):
        size = int(rng.integers(1, 17))
        yield random_distribution(rng, size), random_distribution(rng, size), float(rng.random())


def test_mixture_gap():
    for p, q, t in _mixture_gap_cases(2000):
        lhs, rhs = mixture_kl_gap(p, q, t)
        assert lhs <= rhs + 1e-12


@pytest.mark.slow
def test_mixture_gap_many():
    for p, q, t in _mixture_gap_cases(10_000):
        lhs, rhs = mixture_kl_gap(p, q, t)
        assert lhs <= rhs + 1e-12


def test_mixture_gap_edges():
    p, q = two_point(0.5, 0.5), two_point(0.9, 0.1)
    assert mixture_kl_gap(p, q, 1.0) == (0.0, 0.0)
    lhs, rhs = mixture_kl_gap(p, q, 0.0)
    assert lhs == pytest.approx(rhs)
    with pytest.raises(DomainError):
        mixture_kl_gap(p, q, 1.5)


@pytest.mark.parametrize("seed", range(25))
def test_disc_kl_respects_bound(seed):
    model, s, _ = random_instance(seed, vocab_size=3, n_keywords=6, max_len=3)
    target = exact_target(model, s)
    p_b = p_bad(model, s)
    values = []
    for K in (1, 2, 3, 4):
        value = kl(target, exact_disc(model, s, K))
        assert value <= disc_kl_bound(p_b, K) + 1e-12
        values.append(value)
    if p_b > 0.01 and values[0] > 1e-12:
        assert values[3] < values[0]


def test_disc_kl_vanishes_on_worst_case(worst_case):
    model, s, _ = worst_case
    target = exact_target(model, s)
    assert kl(target, exact_disc(model, s, 6)) < kl(target, exact_disc(model, s, 1))
    assert kl(target, exact_disc(model, s, None)) == 0.0


def test_enumeration_budget():
    vocab = Vocabulary(8)
    s = ConstraintSet.from_sequences([(a, b) for a in range(8) for b in range(8)] + [(0, 0, 0)], vocab)
    model = TabularModel.random(8, 4, seed=1)
    with pytest.raises(EnumerationBudgetExceeded):
        p_bad(model, s)
    small = ConstraintSet.from_sequences([(a, b) for a in range(8) for b in range(4)], vocab)
    with pytest.raises(EnumerationBudgetExceeded):
        resample_distribution(model, small, 5)


def test_oracles_need_tabular_model(worst_case):
    _, s, _ = worst_case
    with pytest.raises(UsageError):
        exact_target(SeededRandomModel(2, 3, seed=0), s)


def test_degenerate_target():
    vocab = Vocabulary(2)
    model = TabularModel(vocab, 2, {(): TabularModel.random(2, 2, 0).base_distribution(())})
    s = ConstraintSet.from_sequences([(0, 1)], vocab)
    # missing prefixes terminate, so (0, 1) has probability zero
    with pytest.raises(DegenerateError):
        exact_target(model, s)


def test_exact_distribution_export(tmp_path, worst_case):
    model, s, _ = worst_case
    path = tmp_path / "target.tsv"
    exact_target(model, s).save(path)
    lines = path.read_text().splitlines()
    assert [line.split("\t")[0] for line in lines] == ["0 0", "0 1", "1 0"]
    assert float(lines[0].split("\t")[1]) == pytest.approx(0.25 / 0.55, abs=1e-15)


def test_empirical_distribution():
    dist = empirical_distribution([(0,), (1,), (1,), (1,)])
    assert dist[(1,)] == 0.75
    assert total_variation(dist, two_point(0.25, 0.75)) == 0.0
    with pytest.raises(DomainError):
        empirical_distribution([])


def test_mixture_gap_support_mismatch():
    with pytest.raises(SupportMismatchError):
        mixture_kl_gap(two_point(0.5, 0.5), ExactDistribution({(0,): 1.0}), 0.5)


def test_declared_table_mode_is_the_default():
    body = ["|0.5 0.5|0.0", "0|0.25 0.25|0.5", "1|0.25 0.25|0.5"]
    s = ConstraintSet.from_sequences([(0,), (1,)], Vocabulary(2))
    declared = parse_table(["vocab=2 maxlen=2 mode=eok"] + body)
    assert declared.mode is TerminationMode.EOK
    assert p_bad(declared, s) == pytest.approx(0.5)
    assert p_bad(declared, s, TerminationMode.PREFIX_FREE) == pytest.approx(0.0, abs=1e-12)

    undeclared = parse_table(["vocab=2 maxlen=2"] + body)
    assert undeclared.mode is None
    assert p_bad(undeclared, s) == pytest.approx(0.0, abs=1e-12)
    assert exact_target(declared, s)[(0,)] == pytest.approx(0.5)
