import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from mkvlab.models import (
    GeneralLipschitzDrift,
    MeanFieldOUParams,
    PolynomialBump,
    TimeGrid,
    TrajectoryEnsemble,
    VlasovPairDrift,
    drift_lipschitz_quotient,
    evaluate_drift,
    mfou_drift_at,
    mfou_drift_model,
    mfou_moments,
    mfou_vlasov_model,
    quartic_bump_force,
    read_mkv1,
    write_mkv1,
)

ZERO = VlasovPairDrift(grad_V=lambda x: 0.0 * x, grad_W=lambda x: 0.0 * x, support_radius=0.0)
LINEAR = VlasovPairDrift(grad_V=lambda x: x, grad_W=lambda x: x, support_radius=np.inf)


class TestEvaluateDrift:
    def test_zero_fields(self):
        cloud = np.array([[0.3], [-1.2], [4.0]])
        out = evaluate_drift(ZERO, 0.0, np.array([1.7]), cloud)
        assert np.array_equal(out, np.zeros(1))

    def test_linear_hand_case(self):
        # -V'(1) - ((1-0) + (1-2))/2 = -1
        out = evaluate_drift(LINEAR, 0.0, np.array([1.0]), np.array([[0.0], [2.0]]))
        assert out[0] == pytest.approx(-1.0, abs=1e-15)

    def test_compact_support_kills_pair_term(self):
        bump = quartic_bump_force(amplitude=3.0, radius=1.0)
        model = VlasovPairDrift(grad_V=lambda x: np.sin(x), grad_W=bump, support_radius=1.0)
        x = np.array([5.0])
        cloud = np.array([[0.0], [0.5]])
        # brute-force pair sum confirms both terms vanish by support
        brute = -np.sin(5.0) - np.mean([bump(np.array(5.0 - c)) for c in [0.0, 0.5]])
        out = evaluate_drift(model, 0.0, x, cloud)
        assert out[0] == pytest.approx(brute, abs=1e-15)
        assert out[0] == pytest.approx(-math.sin(5.0), abs=1e-15)

    def test_empty_cloud(self):
        with pytest.raises(ValueError, match="empty empirical measure"):
            evaluate_drift(ZERO, 0.0, np.array([0.0]), np.zeros((0, 1)))

    def test_overflow(self):
        model = GeneralLipschitzDrift(func=lambda t, x, cloud: x * np.inf)
        with pytest.raises(RuntimeError, match="drift overflow"):
            evaluate_drift(model, 0.0, np.array([1.0]), np.array([[0.0]]))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        cloud = rng.standard_normal((12, 2))
        model = VlasovPairDrift(
            grad_V=lambda x: x**3, grad_W=lambda x: np.tanh(x), support_radius=np.inf
        )
        x = rng.standard_normal(2)
        base = evaluate_drift(model, 0.0, x, cloud)
        for _ in range(5):
            perm = rng.permutation(12)
            assert evaluate_drift(model, 0.0, x, cloud[perm]) == pytest.approx(base, abs=1e-12)

    def test_duplication_invariance(self):
        rng = np.random.default_rng(8)
        cloud = rng.standard_normal((6, 1))
        x = np.array([0.4])
        base = evaluate_drift(LINEAR, 0.0, x, cloud)
        for k in (2, 3):
            tiled = np.tile(cloud, (k, 1))
            assert evaluate_drift(LINEAR, 0.0, x, tiled) == pytest.approx(base, abs=1e-12)

    def test_lipschitz_audit(self):
        rng = np.random.default_rng(9)
        params = MeanFieldOUParams(theta=1.0, lam=0.5, sigma=1.0, m0=0.0, v0=1.0)
        model = mfou_vlasov_model(params)
        bound = model.lip_grad_V + model.lip_grad_W
        q = drift_lipschitz_quotient(model, rng, d=1)
        assert q <= bound + 1e-9

        bump = quartic_bump_force(amplitude=2.0, radius=0.5)
        xs = np.linspace(-0.6, 0.6, 20001)
        lip_bump = np.max(np.abs(np.diff(bump(xs)) / np.diff(xs)))
        bumpy = VlasovPairDrift(
            grad_V=lambda x: x, grad_W=bump, support_radius=0.5, lip_grad_V=1.0, lip_grad_W=lip_bump
        )
        q = drift_lipschitz_quotient(bumpy, rng, d=1)
        assert q <= bumpy.lip_grad_V + bumpy.lip_grad_W + 1e-6


class TestMfouOracle:
    def test_ou_stationary_law(self):
        params = MeanFieldOUParams(theta=1.0, lam=0.0, sigma=math.sqrt(2.0), m0=0.0, v0=1.0)
        m, v = mfou_moments(params, 60.0)
        assert m == pytest.approx(0.0, abs=1e-12)
        assert v == pytest.approx(1.0, abs=1e-12)

    def test_driftless_brownian(self):
        params = MeanFieldOUParams(theta=0.0, lam=0.0, sigma=1.0, m0=2.0, v0=0.0)
        assert mfou_moments(params, 3.0) == pytest.approx((2.0, 3.0))

    def test_against_ode_stepper(self):
        params = MeanFieldOUParams(theta=1.0, lam=1.0, sigma=1.0, m0=1.0, v0=0.5)

        def odes(_t, y):
            m, v = y
            return [-params.theta * m, -2.0 * (params.theta + params.lam) * v + params.sigma**2]

        sol = solve_ivp(odes, (0.0, 0.7), [params.m0, params.v0], rtol=1e-11, atol=1e-13)
        m, v = mfou_moments(params, 0.7)
        assert m == pytest.approx(sol.y[0, -1], abs=1e-9)
        assert v == pytest.approx(sol.y[1, -1], abs=1e-9)

    def test_moment_odes_by_finite_differences(self):
        params = MeanFieldOUParams(theta=0.7, lam=1.3, sigma=0.9, m0=-0.4, v0=0.2)
        eps = 1e-5
        for t in (0.1, 0.5, 1.2):
            mp, vp = mfou_moments(params, t + eps)
            mm, vm = mfou_moments(params, t - eps)
            m, v = mfou_moments(params, t)
            assert (mp - mm) / (2 * eps) == pytest.approx(-params.theta * m, abs=1e-8)
            assert (vp - vm) / (2 * eps) == pytest.approx(
                -2 * (params.theta + params.lam) * v + params.sigma**2, abs=1e-8
            )

    def test_negative_time_rejected(self):
        params = MeanFieldOUParams(theta=1.0, lam=0.0, sigma=1.0, m0=0.0, v0=1.0)
        with pytest.raises(ValueError):
            mfou_moments(params, -0.1)

    def test_drift_at_pure_ou(self):
        params = MeanFieldOUParams(theta=1.0, lam=0.0, sigma=1.0, m0=0.0, v0=1.0)
        assert mfou_drift_at(params, 0.3, 2.0) == pytest.approx(-2.0)

    def test_drift_at_pure_attraction(self):
        params = MeanFieldOUParams(theta=0.0, lam=1.0, sigma=1.0, m0=0.0, v0=1.0)
        assert mfou_drift_at(params, 5.0, 1.0) == pytest.approx(-1.0)

    def test_drift_at_mixed(self):
        params = MeanFieldOUParams(theta=1.0, lam=2.0, sigma=1.0, m0=1.0, v0=1.0)
        expected = -0.3 - 2.0 * (0.3 - math.exp(-0.5))
        assert mfou_drift_at(params, 0.5, 0.3) == pytest.approx(expected, abs=1e-12)

    def test_finite_n_drift_model_matches_pair_form(self):
        params = MeanFieldOUParams(theta=1.0, lam=0.8, sigma=1.0, m0=0.2, v0=1.0)
        rng = np.random.default_rng(3)
        cloud = rng.standard_normal((50, 1))
        x = np.array([0.7])
        fast = evaluate_drift(mfou_drift_model(params), 0.0, x, cloud)
        pair = evaluate_drift(mfou_vlasov_model(params), 0.0, x, cloud)
        assert fast == pytest.approx(pair, abs=1e-12)


class TestPolynomialBump:
    def test_profile_and_support(self):
        bump = quartic_bump_force(amplitude=2.0, radius=0.5)
        xs = np.linspace(-0.7, 0.7, 401)
        expected = np.where(
            np.abs(xs) <= 0.5, 2.0 * xs * (1 - (xs / 0.5) ** 2) ** 2, 0.0
        )
        assert bump(xs) == pytest.approx(expected, abs=1e-14)
        assert bump(np.array([0.5]))[0] == 0.0
        assert bump(np.array([-0.3]))[0] == -bump(np.array([0.3]))[0]

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            PolynomialBump(coeffs=(0.0, 1.0), radius=0.0)


class TestTrajectoryFormat:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(11)
        grid = TimeGrid(t_end=0.5, n_steps=4)
        ens = TrajectoryEnsemble(grid=grid, data=rng.standard_normal((3, 5, 2)), rng_seed=99)
        path = tmp_path / "traj.mkv"
        write_mkv1(ens, str(path))
        back = read_mkv1(str(path))
        assert back.grid == grid
        assert back.rng_seed == 99
        assert np.array_equal(back.data, ens.data)
        assert path.read_bytes()[:4] == b"MKV1"

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.mkv"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(ValueError, match="magic"):
            read_mkv1(str(path))

    def test_nonfinite_rejected(self):
        grid = TimeGrid(t_end=1.0, n_steps=1)
        data = np.zeros((2, 2, 1))
        data[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            TrajectoryEnsemble(grid=grid, data=data, rng_seed=0)


class TestTimeGrid:
    def test_nearest_index_rounding(self):
        grid = TimeGrid(t_end=1.0, n_steps=1000)
        assert grid.nearest_index(0.5001) == round(0.5001 / grid.dt)
        assert grid.nearest_index(0.0) == 0
        assert grid.nearest_index(1.0) == 1000
        # exact midpoint resolves to the earlier grid point
        assert grid.nearest_index(0.0005) == 0

    def test_out_of_range(self):
        grid = TimeGrid(t_end=1.0, n_steps=10)
        with pytest.raises(ValueError):
            grid.nearest_index(1.5)
