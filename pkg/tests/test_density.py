import math

import numpy as np
import pytest
from helpers import brute_force_gl, gauss_legendre_1d
from scipy.stats import norm

from mkvlab.density import density_at, density_gl, density_variance_term, varpi1_sweep
from mkvlab.gl import BandwidthGrid, geometric_grid_1d
from mkvlab.kernels import eval_scaled, make_kernel_1d, spatial_kernel

BOX = make_kernel_1d(1, "box")
EPA = make_kernel_1d(2, "epa")


class TestDensityAt:
    def test_single_atom_at_center(self):
        assert density_at(np.array([[0.3]]), np.array([0.3]), 1.0, BOX) == pytest.approx(1.0)

    def test_all_particles_outside_support(self):
        cloud = np.array([[5.0], [6.0]])
        assert density_at(cloud, np.array([0.0]), 0.5, EPA) == 0.0

    def test_gaussian_cloud_matches_smoothed_density(self):
        # reference: exact convolution (kernel bias) plus a 4-sigma Monte Carlo band
        rng = np.random.default_rng(2024)
        n, h = 10_000, 0.4
        cloud = rng.standard_normal((n, 1))
        est = density_at(cloud, np.array([0.0]), h, EPA)
        conv = gauss_legendre_1d(
            lambda x: eval_scaled(EPA, h, -x) * norm.pdf(x), -h, h, n=96
        )
        second = gauss_legendre_1d(
            lambda x: eval_scaled(EPA, h, -x) ** 2 * norm.pdf(x), -h, h, n=96
        )
        mc_sigma = math.sqrt((second - conv**2) / n)
        assert abs(est - conv) <= 4.0 * mc_sigma
        assert abs(est - norm.pdf(0.0)) <= 0.03

    def test_empty_cloud(self):
        with pytest.raises(ValueError, match="empty empirical measure"):
            density_at(np.zeros((0, 1)), np.array([0.0]), 0.5, EPA)

    def test_translation_equivariance(self):
        rng = np.random.default_rng(5)
        cloud = rng.standard_normal((200, 2))
        k2 = spatial_kernel(EPA, 2)
        x0 = np.array([0.2, -0.1])
        shift = np.array([3.7, -1.2])
        a = density_at(cloud, x0, 0.7, k2)
        b = density_at(cloud + shift, x0 + shift, 0.7, k2)
        assert b == pytest.approx(a, rel=1e-12)

    def test_scaling_law(self):
        rng = np.random.default_rng(6)
        cloud = rng.standard_normal((500, 1))
        x0 = np.array([0.1])
        for c in (0.5, 3.0):
            a = density_at(cloud, x0, 0.4, EPA)
            b = density_at(c * cloud, c * x0, c * 0.4, EPA)
            assert b == pytest.approx(a / c, rel=1e-12)

    def test_mass_integrates_to_one(self):
        rng = np.random.default_rng(7)
        cloud = rng.standard_normal((4096, 1))
        xs = np.linspace(-6.0, 6.0, 1201)
        vals = [density_at(cloud, np.array([x]), 0.3, EPA) for x in xs]
        assert np.trapezoid(vals, xs) == pytest.approx(1.0, abs=1e-2)


class TestVarianceTerm:
    def test_unit_plug_in(self):
        assert density_variance_term(math.e, 1.0, BOX, 1.0) == pytest.approx(math.exp(-1.0))

    def test_h_power_scaling_d2(self):
        box2 = spatial_kernel(BOX, 2)
        v1 = density_variance_term(1000, 0.2, box2, 1.0)
        v2 = density_variance_term(1000, 0.4, box2, 1.0)
        assert v1 / v2 == pytest.approx(4.0)

    def test_arithmetic_example(self):
        got = density_variance_term(1000, 0.1, EPA, 2.0)
        assert got == pytest.approx(2.0 * 0.6 * math.log(1000.0) / 100.0, rel=1e-12)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            density_variance_term(1, 0.1, EPA, 1.0)
        with pytest.raises(ValueError):
            density_variance_term(100, -0.1, EPA, 1.0)


class TestDensityGl:
    def test_single_entry_grid(self):
        rng = np.random.default_rng(8)
        cloud = rng.standard_normal((1024, 1))
        grid = BandwidthGrid(entries=((0.3,),), dims=1)
        report = density_gl(cloud, np.array([0.0]), grid, EPA)
        assert report.value == density_at(cloud, np.array([0.0]), 0.3, EPA)
        assert report.chosen_h == 0.3

    def test_point_mass_cloud_selection_vs_brute_force(self):
        n = 1024
        cloud = np.full((n, 1), 0.5)
        grid = geometric_grid_1d(n, 1, ratio=1.4)
        report = density_gl(cloud, np.array([0.5]), grid, EPA, varpi1=1.0)
        ests = [density_at(cloud, np.array([0.5]), h, EPA) for (h,) in grid.entries]
        for est, (h,) in zip(ests, grid.entries):
            assert est == pytest.approx(eval_scaled(EPA, h, np.array([0.0]))[0])
        var = [density_variance_term(n, h, EPA, 1.0) for (h,) in grid.entries]
        a_ref, chosen_ref = brute_force_gl(grid.entries, ests, var)
        assert report.diagnostics.chosen_index == chosen_ref
        assert report.diagnostics.a_terms == pytest.approx(a_ref)

    def test_grid_admissibility_enforced(self):
        cloud = np.zeros((100, 1))
        bad = BandwidthGrid(entries=((1e-4,),), dims=1)
        with pytest.raises(ValueError, match="admissible"):
            density_gl(cloud, np.array([0.0]), bad, EPA)


class TestVarpi1Sweep:
    def test_monotone_grid_of_ratios_returned(self):
        rng = np.random.default_rng(9)
        clouds = [rng.standard_normal((512, 1)) for _ in range(20)]
        grid = geometric_grid_1d(512, 1, ratio=1.4)
        ratios = varpi1_sweep(
            clouds, np.array([0.0]), grid, EPA, norm.pdf(0.0), np.array([0.25, 1.0, 4.0])
        )
        assert ratios.shape == (3,)
        assert np.all(ratios >= 1.0 - 1e-12)
