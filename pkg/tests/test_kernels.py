import numpy as np
import pytest
from scipy.integrate import dblquad, quad

from mkvlab.kernels import (
    ProductKernel,
    eval_scaled,
    kernel_from_id,
    make_kernel_1d,
    product_kernel,
    spatial_kernel,
    split_time_space,
)

SPECS = [("box", 1), ("epa", 2), ("epa", 4), ("quartic", 2), ("quartic", 4), ("quartic", 6)]


def _quad_moment(kern, k):
    lo, hi = kern.support
    val, err = quad(lambda x: x**k * kern.evaluate(np.array(x)), lo, hi, limit=200)
    assert err < 1e-12
    return val


class TestConstruction:
    def test_unit_box(self):
        k = make_kernel_1d(1, "box")
        assert k.evaluate(np.array([0.0, 0.49, -0.49])) == pytest.approx([1.0, 1.0, 1.0])
        assert k.evaluate(np.array([0.51])) == pytest.approx([0.0])
        assert k.l2_norm_sq == pytest.approx(1.0, abs=1e-12)
        assert k.sup_norm == pytest.approx(1.0, abs=1e-12)
        assert k.l1_norm == pytest.approx(1.0, abs=1e-12)

    def test_order_two_epanechnikov_is_the_base(self):
        k = make_kernel_1d(2, "epa")
        xs = np.linspace(-1, 1, 101)
        assert k.evaluate(xs) == pytest.approx(0.75 * (1 - xs**2), abs=1e-12)
        assert _quad_moment(k, 0) == pytest.approx(1.0, abs=1e-10)
        assert k.l2_norm_sq == pytest.approx(0.6, abs=1e-12)

    def test_order_four_quartic_moments_vanish(self):
        k = make_kernel_1d(4, "quartic")
        assert _quad_moment(k, 0) == pytest.approx(1.0, abs=1e-10)
        for m in (1, 2, 3):
            assert abs(_quad_moment(k, m)) < 1e-10

    @pytest.mark.parametrize("base,order", SPECS)
    def test_moment_conditions_all_specs(self, base, order):
        k = make_kernel_1d(order, base)
        assert abs(_quad_moment(k, 0) - 1.0) < 1e-10
        for m in range(1, order):
            assert abs(_quad_moment(k, m)) < 1e-10

    @pytest.mark.parametrize("base,order", SPECS)
    def test_norm_caches_match_quadrature(self, base, order):
        k = make_kernel_1d(order, base)
        lo, hi = k.support
        l2, _ = quad(lambda x: k.evaluate(np.array(x)) ** 2, lo, hi, limit=200)
        assert k.l2_norm_sq == pytest.approx(l2, abs=1e-8)
        l1, _ = quad(lambda x: abs(k.evaluate(np.array(x))), lo, hi, limit=200)
        assert k.l1_norm == pytest.approx(l1, abs=1e-8)
        xs = np.linspace(lo, hi, 20001)
        assert k.sup_norm == pytest.approx(np.max(np.abs(k.evaluate(xs))), abs=1e-8)

    def test_bad_inputs(self):
        with pytest.raises(ValueError, match="order"):
            make_kernel_1d(0, "epa")
        with pytest.raises(ValueError, match="unknown kernel base"):
            make_kernel_1d(2, "gauss")


class TestEvalScaled:
    def test_box_scaling_identity(self):
        k = make_kernel_1d(1, "box")
        assert eval_scaled(k, 0.5, np.array([0.0]))[0] == pytest.approx(2.0)

    def test_outside_scaled_support(self):
        k = make_kernel_1d(2, "epa")
        assert eval_scaled(k, 0.25, np.array([0.3, -1.0])) == pytest.approx([0.0, 0.0])

    def test_epanechnikov_reference_formula(self):
        k = make_kernel_1d(2, "epa")
        h, u = 0.3, 0.1
        expected = (0.75 / h) * (1.0 - (u / h) ** 2)
        assert eval_scaled(k, h, np.array([u]))[0] == pytest.approx(expected, abs=1e-12)

    def test_nonpositive_bandwidth(self):
        k = make_kernel_1d(2, "epa")
        with pytest.raises(ValueError):
            eval_scaled(k, 0.0, np.array([0.1]))

    @pytest.mark.parametrize("h", [0.3, 1.7])
    def test_scaled_mass_is_one(self, h):
        k = make_kernel_1d(4, "epa")
        lo, hi = k.support
        val, _ = quad(lambda u: eval_scaled(k, h, np.array(u)), h * lo, h * hi, limit=200)
        assert val == pytest.approx(1.0, abs=1e-8)


class TestProducts:
    def test_two_boxes(self):
        box = make_kernel_1d(1, "box")
        kk = product_kernel(box, box)
        assert kk.dim == 2
        assert kk.l2_norm_sq == pytest.approx(1.0, abs=1e-12)
        assert kk.evaluate(np.array([[0.0, 0.0], [0.6, 0.0]])) == pytest.approx([1.0, 0.0])

    def test_epa_pair_l2_by_2d_quadrature(self):
        epa = make_kernel_1d(2, "epa")
        hk = product_kernel(epa, epa)
        val, err = dblquad(
            lambda y, x: hk.evaluate(np.array([x, y])) ** 2, -1, 1, -1, 1, epsabs=1e-12
        )
        assert err < 1e-9
        assert hk.l2_norm_sq == pytest.approx((3 / 5) ** 2, abs=1e-12)
        assert hk.l2_norm_sq == pytest.approx(val, abs=1e-8)
        assert hk.sup_norm == pytest.approx(0.75**2, abs=1e-12)

    def test_product_order_is_min_with_moment_audit(self):
        epa2 = make_kernel_1d(2, "epa")
        quartic4 = make_kernel_1d(4, "quartic")
        hk = product_kernel(epa2, quartic4)
        assert hk.order == 2
        # per-direction marginal moments by 2-d quadrature
        for axis, first_bad in ((0, 2), (1, 4)):
            for m in range(1, first_bad):
                val, _ = dblquad(
                    lambda y, x: np.array([x, y])[axis] ** m * hk.evaluate(np.array([x, y])),
                    -1, 1, -1, 1, epsabs=1e-12,
                )
                assert abs(val) < 1e-10

    def test_spatial_and_split(self):
        epa = make_kernel_1d(2, "epa")
        k3 = spatial_kernel(epa, 3)
        assert isinstance(k3, ProductKernel) and k3.dim == 3
        assert spatial_kernel(epa, 1) is epa
        hk = product_kernel(make_kernel_1d(1, "box"), k3)
        time_k, space_k = split_time_space(hk)
        assert time_k.support == (-0.5, 0.5)
        assert space_k.dim == 3


class TestRegistry:
    def test_parse(self):
        k = kernel_from_id("epa:2")
        assert k.order == 2 and k.support == (-1.0, 1.0)
        assert kernel_from_id("box:1").support == (-0.5, 0.5)
        assert kernel_from_id("quartic:4").order == 4

    def test_bad_ids(self):
        with pytest.raises(ValueError, match="kernel id"):
            kernel_from_id("epa")
        with pytest.raises(ValueError, match="kernel id"):
            kernel_from_id("epa:two")
