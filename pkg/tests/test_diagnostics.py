import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.stats import linregress, norm

from mkvlab.diagnostics import fit_tail_envelope, rate_slope, w1_exact_1d, w1_sliced


def lp_transport_cost(a, b):
    """Optimal transport between equal-weight atoms via linear programming."""
    n, m = len(a), len(b)
    cost = np.abs(np.subtract.outer(a, b)).reshape(-1)
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([np.full(n, 1.0 / n), np.full(m, 1.0 / m)])
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    assert res.success
    return res.fun


def permutation_transport_cost(a, b):
    """Exhaustive matching oracle for equal-size atom clouds."""
    best = math.inf
    for perm in itertools.permutations(range(len(b))):
        best = min(best, np.mean([abs(x - b[j]) for x, j in zip(a, perm)]))
    return best


class TestW1Exact:
    def test_identical_samples(self):
        a = np.array([0.1, 0.5, 2.0])
        assert w1_exact_1d(a, a.copy()) == 0.0

    def test_two_atoms(self):
        assert w1_exact_1d(np.array([0.0]), np.array([1.0])) == 1.0

    def test_four_point_shift_vs_lp(self):
        a = np.array([0.0, 1.0, 2.0, 3.0])
        b = a + 0.5
        got = w1_exact_1d(a, b)
        assert got == pytest.approx(0.5, abs=1e-12)
        assert got == pytest.approx(lp_transport_cost(a, b), abs=1e-9)

    @pytest.mark.parametrize("trial", range(12))
    def test_matches_exhaustive_matching(self, trial):
        rng = np.random.default_rng(100 + trial)
        n = int(rng.integers(2, 9))
        a = np.sort(rng.standard_normal(n))
        b = np.sort(rng.standard_normal(n))
        assert w1_exact_1d(a, b) == pytest.approx(permutation_transport_cost(a, b), abs=1e-12)

    def test_metric_properties(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = np.sort(rng.standard_normal(6))
            b = np.sort(rng.standard_normal(6))
            c = np.sort(rng.standard_normal(6))
            assert w1_exact_1d(a, b) == pytest.approx(w1_exact_1d(b, a), abs=1e-12)
            assert w1_exact_1d(a, c) <= w1_exact_1d(a, b) + w1_exact_1d(b, c) + 1e-12

    def test_cdf_callable_against_dense_grid(self):
        rng = np.random.default_rng(4)
        a = np.sort(rng.standard_normal(400))
        got = w1_exact_1d(a, norm.cdf)
        xs = np.linspace(-10, 10, 200_001)
        emp = np.searchsorted(a, xs, side="right") / a.size
        ref = np.trapezoid(np.abs(emp - norm.cdf(xs)), xs)
        assert got == pytest.approx(ref, abs=1e-4)

    def test_input_validation(self):
        with pytest.raises(ValueError, match="sorted"):
            w1_exact_1d(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        with pytest.raises(ValueError, match="equal sizes"):
            w1_exact_1d(np.array([0.0, 1.0]), np.array([0.0]))
        with pytest.raises(ValueError, match="nonempty"):
            w1_exact_1d(np.array([]), np.array([0.0]))


class TestW1Sliced:
    def test_identical_clouds(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((50, 3))
        assert w1_sliced(a, a.copy(), n_projections=32, seed=0) == 0.0

    def test_translation_closed_form(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((128, 2))
        v = np.array([0.8, -0.6])
        got = w1_sliced(a, a + v, n_projections=10_000, seed=1)
        assert got == pytest.approx((2.0 / math.pi) * np.linalg.norm(v), rel=0.02)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((96, 2))
        b = rng.standard_normal((96, 2)) + 0.3
        theta = 0.7
        rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
        d1 = w1_sliced(a, b, n_projections=4096, seed=2)
        d2 = w1_sliced(a @ rot.T, b @ rot.T, n_projections=4096, seed=3)
        assert d2 == pytest.approx(d1, rel=0.05)

    def test_requires_d_at_least_two(self):
        with pytest.raises(ValueError):
            w1_sliced(np.zeros((10, 1)), np.zeros((10, 1)))


class TestTailEnvelope:
    def test_gaussian_deviations_recover_half(self):
        rng = np.random.default_rng(8)
        v, n = 2.0, 500
        dev = rng.normal(0.0, math.sqrt(v / n), size=5000)
        env = fit_tail_envelope(dev, v=v, m=0.5, n=n)
        assert not env.degenerate
        assert 0.25 <= env.kappa2 <= 1.0
        assert env.envelope_valid

    def test_all_zero_is_degenerate(self):
        env = fit_tail_envelope(np.zeros(300), v=1.0, m=1.0, n=100)
        assert env.degenerate
        assert not env.envelope_valid

    def test_scale_consistency(self):
        rng = np.random.default_rng(9)
        dev = rng.normal(0.0, 0.05, size=2000)
        base = fit_tail_envelope(dev, v=1.0, m=0.7, n=400)
        for c in (0.01, 50.0):
            scaled = fit_tail_envelope(c * dev, v=c**2 * 1.0, m=c * 0.7, n=400)
            assert scaled.envelope_valid == base.envelope_valid
            assert scaled.kappa2 == pytest.approx(base.kappa2, rel=1e-9)
            assert scaled.kappa1 == pytest.approx(base.kappa1, rel=1e-9)

    def test_too_few_replicates(self):
        with pytest.raises(ValueError, match="too few replicates"):
            fit_tail_envelope(np.ones(100), v=1.0, m=1.0, n=10)


class TestRateSlope:
    def test_exact_power_law(self):
        ns = np.array([100, 400, 1600, 6400])
        errors = 3.0 * ns ** (-0.4)
        slope, stderr = rate_slope(ns, errors)
        assert slope == pytest.approx(-0.4, abs=1e-12)
        assert stderr == pytest.approx(0.0, abs=1e-10)

    def test_constant_errors(self):
        slope, _ = rate_slope(np.array([10, 100, 1000]), np.full(3, 0.7))
        assert slope == pytest.approx(0.0, abs=1e-13)

    def test_against_reference_regression(self):
        rng = np.random.default_rng(10)
        ns = np.array([128, 256, 512, 1024, 2048])
        errors = np.exp(rng.normal(-0.45 * np.log(ns), 0.1))
        slope, stderr = rate_slope(ns, errors)
        ref = linregress(np.log(ns), np.log(errors))
        assert slope == pytest.approx(ref.slope, rel=1e-12)
        assert stderr == pytest.approx(ref.stderr, rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            rate_slope(np.array([10, 20]), np.array([1.0, 0.5]))
        with pytest.raises(ValueError):
            rate_slope(np.array([10, 20, 30]), np.array([1.0, -0.5, 0.2]))
