import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from residual_lab.splines import (
    SplineSpec,
    basis_and_derivative,
    bspline_basis,
    fit_coefficients,
    knot_vector,
)

ALL_SPECS = [
    SplineSpec(grid_size=G, order=k)
    for G in (3, 5, 8, 20)
    for k in (0, 1, 2, 3)
]


class TestSpec:
    def test_n_basis(self):
        assert SplineSpec(grid_size=5, order=3).n_basis == 8
        assert SplineSpec(grid_size=2, order=0).n_basis == 2

    def test_validation(self):
        with pytest.raises(ValueError):
            SplineSpec(grid_size=0)
        with pytest.raises(ValueError):
            SplineSpec(order=-1)
        with pytest.raises(ValueError):
            SplineSpec(domain=(1.0, 1.0))

    def test_knot_vector_uniform_extension(self):
        T = knot_vector(SplineSpec(grid_size=2, order=1, domain=(-1.0, 1.0)))
        assert np.allclose(T, [-2.0, -1.0, 0.0, 1.0, 2.0])
        spacing = np.diff(knot_vector(SplineSpec(grid_size=7, order=3)))
        assert np.allclose(spacing, spacing[0])


class TestBasis:
    def test_degree_zero_indicator(self):
        out = bspline_basis(-0.5, SplineSpec(grid_size=2, order=0))
        assert np.array_equal(out, [1.0, 0.0])

    def test_partition_of_unity_at_origin(self):
        out = bspline_basis(0.0, SplineSpec(grid_size=5, order=3))
        assert out.shape == (8,)
        assert abs(out.sum() - 1.0) < 1e-12

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: f"G{s.grid_size}k{s.order}")
    def test_partition_of_unity_dense(self, spec):
        u = np.linspace(spec.domain[0], spec.domain[1], 1000)
        B, _ = basis_and_derivative(spec, u)
        assert np.abs(B.sum(axis=-1) - 1.0).max() < 1e-10
        assert B.min() >= 0.0
        assert B.max() <= 1.0 + 1e-12

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: f"G{s.grid_size}k{s.order}")
    def test_local_support(self, spec):
        # Degree-k splines overlap at most k+1 basis functions per point.
        u = np.linspace(spec.domain[0], spec.domain[1], 1000)
        B, _ = basis_and_derivative(spec, u)
        assert (B > 1e-14).sum(axis=-1).max() <= spec.order + 1

    def test_right_endpoint_included(self):
        for spec in ALL_SPECS:
            out = bspline_basis(spec.domain[1], spec)
            assert abs(out.sum() - 1.0) < 1e-10

    def test_clamps_out_of_domain(self):
        spec = SplineSpec(grid_size=5, order=3)
        assert np.array_equal(bspline_basis(3.0, spec), bspline_basis(1.0, spec))
        assert np.array_equal(bspline_basis(-3.0, spec), bspline_basis(-1.0, spec))

    def test_rejects_non_finite(self):
        spec = SplineSpec()
        with pytest.raises(ValueError):
            bspline_basis(float("nan"), spec)
        with pytest.raises(ValueError):
            bspline_basis(float("inf"), spec)

    @given(st.floats(-1.0, 1.0, allow_nan=False))
    def test_pointwise_unity_property(self, u):
        out = bspline_basis(u, SplineSpec(grid_size=8, order=2))
        assert abs(out.sum() - 1.0) < 1e-10


class TestDerivative:
    @pytest.mark.parametrize("spec", [s for s in ALL_SPECS if s.order >= 1],
                             ids=lambda s: f"G{s.grid_size}k{s.order}")
    def test_matches_central_difference(self, spec):
        # Stay strictly interior and away from knots so FD sees one polynomial
        # piece; the offset keeps every point off the G in {3,5,8,20} grids.
        u = np.linspace(-0.9, 0.9, 37) + 0.00123
        _, dB = basis_and_derivative(spec, u)
        eps = 1e-6
        fd = (basis_and_derivative(spec, u + eps)[0] - basis_and_derivative(spec, u - eps)[0]) / (2 * eps)
        assert np.abs(dB - fd).max() < 1e-5

    def test_order_zero_derivative_is_zero(self):
        _, dB = basis_and_derivative(SplineSpec(grid_size=5, order=0), np.linspace(-1, 1, 50))
        assert np.array_equal(dB, np.zeros_like(dB))

    def test_derivatives_sum_to_zero(self):
        # d/du of the partition of unity.
        spec = SplineSpec(grid_size=5, order=3)
        _, dB = basis_and_derivative(spec, np.linspace(-1, 1, 200))
        assert np.abs(dB.sum(axis=-1)).max() < 1e-10


class TestFit:
    def test_cubic_reproduction(self):
        spec = SplineSpec(grid_size=5, order=3)
        coef = fit_coefficients(spec, lambda u: u**3, n_samples=200)
        u = np.linspace(-1, 1, 1000)
        B, _ = basis_and_derivative(spec, u)
        assert np.abs(B @ coef - u**3).max() < 1e-9

    def test_cubic_reproduction_minimal_grid(self):
        spec = SplineSpec(grid_size=1, order=3)
        coef = fit_coefficients(spec, lambda u: u**3)
        u = np.linspace(-1, 1, 1000)
        B, _ = basis_and_derivative(spec, u)
        assert np.abs(B @ coef - u**3).max() < 1e-9

    @pytest.mark.parametrize("degree", [0, 1, 2, 3])
    def test_reproduces_polynomials_up_to_order(self, degree):
        spec = SplineSpec(grid_size=4, order=3)
        coef = fit_coefficients(spec, lambda u: u**degree)
        u = np.linspace(-1, 1, 500)
        B, _ = basis_and_derivative(spec, u)
        assert np.abs(B @ coef - u**degree).max() < 1e-9

    def test_constant_coefficients_are_one(self):
        # Partition of unity means the constant function has all-ones coefficients.
        coef = fit_coefficients(SplineSpec(grid_size=6, order=2), lambda u: np.ones_like(u))
        assert np.abs(coef - 1.0).max() < 1e-9
