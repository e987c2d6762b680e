import numpy as np
import pytest

from src.dirtest import (PairCase, classify_pair, distance_correlation, fit_k, hsic_test, independence_test,
                         median_bandwidth)
from src.errors import ConfigError, DegenerateInputError, PreconditionError
from src.synthgen import PAIR_KINDS, simulate_pair

EXPECTED = {"a_causes_b": PairCase.A_CAUSES_B, "b_causes_a": PairCase.B_CAUSES_A,
            "confounder": PairCase.COMMON_CONFOUNDER}


class TestFitK:
    def test_exact_slope(self):
        a = np.linspace(-1, 1, 50)
        assert fit_k(a, 2.0 * a) == pytest.approx(2.0)

    def test_uncorrelated_gives_zero(self):
        a = np.array([1.0, -1.0, 1.0, -1.0] * 10)
        b = np.array([1.0, 1.0, -1.0, -1.0] * 10)
        assert fit_k(a, b) == pytest.approx(0.0, abs=1e-12)

    def test_too_few_observations(self):
        with pytest.raises(PreconditionError):
            fit_k(np.arange(29.0), np.arange(29.0))

    def test_constant_regressor(self):
        with pytest.raises(DegenerateInputError):
            fit_k(np.ones(40), np.arange(40.0))

    def test_vector_valued(self):
        a = np.random.default_rng(0).normal(size=(60, 3))
        assert fit_k(a, -0.5 * a) == pytest.approx(-0.5)


def test_distance_correlation_bounds():
    rng = np.random.default_rng(0)
    a = rng.uniform(size=500)
    assert distance_correlation(a, a) == pytest.approx(1.0)
    assert distance_correlation(a, 3.0 * a + 1.0) == pytest.approx(1.0)
    assert 0.0 <= distance_correlation(a, rng.uniform(size=500)) < 0.2
    assert distance_correlation(np.zeros(50), a[:50]) == 0.0


@pytest.mark.parametrize("method", ["hsic", "dcor"])
def test_independence_test_detects_dependence(method):
    rng = np.random.default_rng(1)
    a = rng.uniform(-1, 1, size=200)
    _, p_dep = independence_test(a, a ** 2, method=method, n_permutations=200)
    assert p_dep < 0.01


@pytest.mark.parametrize("method", ["hsic", "dcor"])
def test_independence_test_p_value_range(method):
    rng = np.random.default_rng(2)
    _, p = independence_test(rng.normal(size=100), rng.normal(size=100), method=method, n_permutations=100)
    assert 0.0 < p <= 1.0


def test_unknown_independence_method():
    with pytest.raises(ConfigError):
        independence_test(np.arange(40.0), np.arange(40.0), method="pearson")


class TestHsic:
    def test_constant_input_is_independent(self):
        a = np.random.default_rng(3).normal(size=50)
        assert median_bandwidth(np.ones(50)) == 0.0
        assert hsic_test(np.ones(50), a) == (0.0, 1.0)

    def test_median_bandwidth_of_two_points(self):
        # one pairwise squared distance of 4
        assert median_bandwidth(np.array([0.0, 2.0])) == pytest.approx(np.sqrt(2.0))

    def test_statistic_grows_with_dependence(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(-1, 1, size=300)
        weak, _ = hsic_test(a, a + 3.0 * rng.normal(size=300))
        strong, _ = hsic_test(a, a + 0.1 * rng.normal(size=300))
        assert strong > weak > 0.0

    def test_too_few_observations(self):
        with pytest.raises(PreconditionError):
            hsic_test(np.arange(5.0), np.arange(5.0))


def test_no_relation_is_degenerate():
    a = np.array([1.0, -1.0, 1.0, -1.0] * 10)
    b = np.array([1.0, 1.0, -1.0, -1.0] * 10)
    with pytest.raises(DegenerateInputError):
        classify_pair(a, b)


def test_exact_linear_relation_is_flagged():
    a = np.linspace(-1, 1, 60)
    verdict = classify_pair(a, 2.0 * a, n_permutations=50)
    assert verdict.degenerate
    assert verdict.k_fit == pytest.approx(2.0)
    assert verdict.case == PairCase.COMMON_EFFECT


def test_swap_symmetry():
    a, b = simulate_pair("a_causes_b", 300, seed=5)
    forward = classify_pair(a, b, n_permutations=100, seed=1)
    backward = classify_pair(b, a, n_permutations=100, seed=1)
    assert forward.p_values == (backward.p_values[1], backward.p_values[0])
    swapped = {PairCase.A_CAUSES_B: PairCase.B_CAUSES_A, PairCase.B_CAUSES_A: PairCase.A_CAUSES_B}
    assert backward.case == swapped.get(forward.case, forward.case)


def test_positive_rescaling_keeps_verdict():
    a, b = simulate_pair("b_causes_a", 300, seed=6)
    base = classify_pair(a, b, n_permutations=100, seed=2)
    scaled = classify_pair(4.0 * a, 0.5 * b, n_permutations=100, seed=2)
    assert scaled.case == base.case
    assert scaled.k_fit == pytest.approx(base.k_fit / 8.0)


@pytest.mark.parametrize("kind", PAIR_KINDS)
def test_simulated_pairs_mostly_correct(kind):
    hits = 0
    for trial in range(20):
        a, b = simulate_pair(kind, 1000, seed=1000 + trial)
        hits += classify_pair(a, b, seed=trial).case == EXPECTED[kind]
    assert hits >= 12


def test_verdict_serializes():
    a, b = simulate_pair("confounder", 100, seed=0)
    d = classify_pair(a, b, n_permutations=50).to_dict()
    assert d["case"] in {c.value for c in PairCase}
    assert len(d["p_values"]) == 2


@pytest.mark.slow
@pytest.mark.parametrize("kind", PAIR_KINDS)
def test_accuracy_over_200_trials(kind):
    hits = 0
    for trial in range(200):
        a, b = simulate_pair(kind, 2000, seed=trial)
        hits += classify_pair(a, b, alpha=0.05, seed=trial).case == EXPECTED[kind]
    assert hits >= 180


def test_gaussian_pairs_give_no_confident_direction():
    directional = 0
    for trial in range(20):
        rng = np.random.default_rng(500 + trial)
        a = rng.normal(size=400)
        b = 0.8 * a + rng.normal(size=400)
        case = classify_pair(a, b, seed=trial).case
        directional += case in (PairCase.A_CAUSES_B, PairCase.B_CAUSES_A)
    assert directional <= 6


def test_vector_valued_direction():
    hits = 0
    for trial in range(10):
        rng = np.random.default_rng(700 + trial)
        a = rng.uniform(-1, 1, size=(1000, 3))
        b = a + rng.uniform(-0.5, 0.5, size=(1000, 3))
        hits += classify_pair(a, b, seed=trial).case == PairCase.A_CAUSES_B
    assert hits >= 6
