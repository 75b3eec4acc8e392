from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgrg import covariance as cv

U0 = 1 / (2 * math.pi)

# [DERIVED] C(2) at L = 8 by adaptive quadrature; a 2^20-point midpoint rule in log l agrees to 1e-12
C_L8_R2 = 0.05466295742806653


def midpoint_C(kernel, L, r, n=1 << 20):
    t = (np.arange(n) + 0.5) / n * math.log(L)
    return float(kernel(r * np.exp(-t)).sum() * math.log(L) / n)


class TestKernel:
    def test_normalised_at_origin(self):
        k = cv.reference_kernel()
        assert k.u0 == pytest.approx(U0, abs=1e-15)
        assert k(0.0) == pytest.approx(U0, abs=1e-12)

    def test_compact_support(self):
        k = cv.reference_kernel()
        assert k(1.0) == 0.0
        assert not np.any(k(np.linspace(1.0, 3.0, 50)))

    def test_positive_definite_proxy(self):
        assert cv.reference_kernel().fourier_min_ratio >= -1e-8

    def test_even_and_flat_at_origin(self):
        k = cv.reference_kernel()
        assert k(-0.3) == k(0.3)
        assert abs(k.derivative(0.0)) < 1e-12

    def test_rejects_coarse_grid(self):
        with pytest.raises(cv.ResolutionError):
            cv.make_kernel(grid_spacing=0.3)

    def test_rejects_wide_profile(self):
        with pytest.raises(cv.KernelError):
            cv.make_kernel(lambda r: np.where(r < 0.8, 1.0, 0.0), grid_spacing=1 / 32)

    def test_rejects_negative_profile(self):
        with pytest.raises(cv.KernelError):
            cv.make_kernel(lambda r: np.where(r < 0.4, -1.0, 0.0), grid_spacing=1 / 32)


class TestSingleScale:
    @pytest.mark.parametrize("L", [2, 4, 8, 16, 32])
    def test_value_at_origin(self, L):
        cov = cv.reference_covariance(L)
        assert cov.C0 == pytest.approx(math.log(L) / (2 * math.pi), abs=1e-6)

    @pytest.mark.parametrize("L", [2, 4, 8, 16, 32])
    def test_finite_range_exact_zero(self, L):
        cov = cv.reference_covariance(L)
        r = np.linspace(L, 4 * L, 101)
        assert not np.any(cov(r))
        assert cv.eval_C(cov.kernel, L, L) == 0.0

    def test_frozen_value(self):
        k = cv.reference_kernel()
        assert cv.eval_C(k, 8, 2.0) == pytest.approx(C_L8_R2, abs=1e-12)
        assert midpoint_C(k, 8, 2.0) == pytest.approx(C_L8_R2, abs=1e-11)

    def test_table_matches_quadrature(self):
        cov = cv.reference_covariance(8)
        r = np.array([0.0, 0.01, 0.5, 1.0, 2.0, 3.7, 6.5, 7.99])
        assert np.allclose(cov(r), cov.exact(r), atol=1e-6)

    def test_nonincreasing(self):
        cov = cv.reference_covariance(4)
        v = cov(np.linspace(0, 4, 2000))
        assert np.all(np.diff(v) <= 1e-15)

    def test_rejects_small_L(self):
        with pytest.raises(ValueError):
            cv.make_covariance(cv.reference_kernel(), 1)
        with pytest.raises(ValueError):
            cv.eval_C(cv.reference_kernel(), 1.5, 0.0)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 15.9))
    def test_quadratic_first_cell(self, r):
        # table and quadrature agree everywhere, including the first cell near 0
        cov = cv.reference_covariance(16)
        assert abs(cov(r) - cv.eval_C(cov.kernel, 16, r)) < 1e-6


class TestMultiscale:
    def test_additive_in_scales(self, cov4):
        sd = cv.ScaleDecomposition(cov4, 5)
        r = np.array([0.0, 0.7, 3.0, 20.0, 300.0])
        assert np.allclose(sd.v_radial(r), sd.with_scales(4).v_radial(r) + cov4(r / 4.0**4), atol=0)

    def test_vanishes_beyond_range(self, cov4):
        sd = cv.ScaleDecomposition(cov4, 3)
        assert sd.v_radial(64.0) == 0.0

    def test_vector_and_min_image(self, cov4):
        sd = cv.ScaleDecomposition(cov4, 3, torus_side=10.0)
        assert cv.eval_v(sd, np.array([9.0, 0.0])) == pytest.approx(sd.v_radial(1.0))

    def test_rejects_zero_scales(self, cov4):
        with pytest.raises(ValueError):
            cv.ScaleDecomposition(cov4, 0)

    @pytest.mark.parametrize("n,expected", [
        (6, [1.026e-7, 5.13e-7, 2.15e-6]),
        (8, [4.1e-10, 2.0e-9, 8.4e-9]),
    ])
    def test_log_consistency_frozen(self, cov4, n, expected):
        # [DERIVED] deviations of v(r)-v(1) from -log(r)/2pi at r = 2, 4, 8
        sd = cv.ScaleDecomposition(cov4, n)
        got = [cv.log_consistency(sd, r) for r in (2, 4, 8)]
        assert np.allclose(got, expected, rtol=0.05)

    def test_log_consistency_domain(self, cov4):
        sd = cv.ScaleDecomposition(cov4, 4)
        with pytest.raises(ValueError):
            cv.log_consistency(sd, 0.5)
        with pytest.raises(ValueError):
            cv.log_consistency(sd, 17.0)

    def test_log_constant(self):
        assert cv.log_constant(cv.reference_kernel()) == pytest.approx(-U0)

    def test_short_distance_remainder_stabilises(self, cov4):
        w6 = cv.short_distance_remainder(cv.ScaleDecomposition(cov4, 6), 0.5)
        w8 = cv.short_distance_remainder(cv.ScaleDecomposition(cov4, 8), 0.5)
        assert abs(w6 - w8) < 1e-5


class TestPairEnergy:
    def test_empty(self, cov4):
        assert cv.pair_energy(cv.ScaleDecomposition(cov4, 3), cv.ChargeConfig(np.zeros((0, 2)), [])) == 0.0

    def test_single_charge_increment(self, cov4):
        sd = cv.ScaleDecomposition(cov4, 1)
        one = cv.ChargeConfig([[0.0, 0.0]], [1])
        e = [cv.pair_energy(sd.with_scales(n), one) for n in range(1, 8)]
        assert np.allclose(np.diff(e), math.log(4) / (2 * math.pi), atol=1e-12, rtol=0)

    def test_neutral_converges_geometrically(self, cov4):
        sd = cv.ScaleDecomposition(cov4, 1)
        rho = cv.ChargeConfig([[0, 0], [1, 1]], [1, -1])
        d = np.abs(np.diff([cv.pair_energy(sd.with_scales(n), rho) for n in range(4, 9)]))
        # each further scale contributes O(r^2 L^-2n)
        assert np.all(d[1:] < d[:-1] / 10)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            cv.ChargeConfig([[0, 0], [1, 1]], [1])

    def test_neutrality_flag(self):
        assert cv.ChargeConfig([[0, 0], [1, 1]], [1, -1]).is_neutral
        assert not cv.ChargeConfig([[0, 0]], [1]).is_neutral

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.sampled_from([-2, -1, 1, 2])),
                    min_size=1, max_size=6))
    def test_nonnegative(self, pts):
        # v_n is a sum of positive definite pieces, so (rho, v rho) >= 0
        sd = cv.ScaleDecomposition(cv.reference_covariance(4), 4)
        rho = cv.ChargeConfig([[x, y] for x, y, _ in pts], [q for *_, q in pts])
        assert cv.pair_energy(sd, rho) >= -1e-10

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_translation_invariant(self, dx, dy):
        sd = cv.ScaleDecomposition(cv.reference_covariance(4), 4)
        pos = np.array([[0.0, 0.0], [1.5, -0.5], [3.0, 2.0]])
        q = [1, -2, 1]
        a = cv.pair_energy(sd, cv.ChargeConfig(pos, q))
        b = cv.pair_energy(sd, cv.ChargeConfig(pos + [dx, dy], q))
        assert a == pytest.approx(b, abs=1e-9)


class TestAnalyticityLoss:
    def test_single_block_r0(self, cov4):
        # the r = 0 norm of C(. - x) - C(0) on one block: bounded by C(0) and positive
        v = cv.analyticity_loss_NC(cov4, [[(0, 0)]], r_derivatives=0)
        assert 0 < v < cov4.C0

    def test_grows_with_set(self, cov4):
        a = cv.analyticity_loss_NC(cov4, [[(0, 0)]], r_derivatives=0)
        b = cv.analyticity_loss_NC(cov4, [[(0, 0)], [(0, 0), (1, 0), (2, 0), (3, 0)]], r_derivatives=0)
        assert b > a

    def test_rejects_bad_order(self, cov4):
        with pytest.raises(ValueError):
            cv.analyticity_loss_NC(cov4, [[(0, 0)]], r_derivatives=3)

    def test_coarse_table_rejected(self):
        cov = cv.make_covariance(cv.reference_kernel(), 4, n_nodes=32)
        with pytest.raises(cv.ResolutionError):
            cv.analyticity_loss_NC(cov, [[(0, 0)]], r_derivatives=2)


class TestTableIO:
    def test_round_trip(self, tmp_path, cov4):
        p = tmp_path / "cov.csv"
        cv.write_covariance(p, cov4, {"digest": "abc"})
        header, r, v = cv.read_table(p)
        assert header["L"] == "4" and header["digest"] == "abc"
        assert np.array_equal(r, cov4.radii) and np.array_equal(v, cov4.values)

    def test_kernel_round_trip(self, tmp_path):
        k = cv.reference_kernel()
        p = tmp_path / "k.csv"
        cv.write_kernel(p, k)
        header, r, v = cv.read_table(p)
        assert header["L"] == "" and np.array_equal(v, k.values)
