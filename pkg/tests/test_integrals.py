import numpy as np
import pytest
from conftest import ambient_bm
from hypothesis import given, settings
from hypothesis import strategies as st

from vertmart.bundles import tangent_bundle
from vertmart.corpus import vertical_form
from vertmart.geometry import euclidean, flat_torus, sphere_chart
from vertmart.integrals import (
    RealPath,
    accumulate,
    conversion_residual,
    integrate_quadratic,
    integrate_second_order,
    ito_integral,
    vertical_covariant_derivative,
    vertical_hessian_integral,
    vertical_ito_integral,
    vertical_stratonovich_integral,
    vertical_stratonovich_trapezoid,
)
from vertmart.paths import TimeGrid, from_values, simulate_bm_ensemble
from vertmart.submersion import VerticalForm

FLAT = tangent_bundle(flat_torus(), "complete").sub
SPHERE = tangent_bundle(sphere_chart(), "sasaki").sub
P0 = [np.pi / 2, 0.0, 0.3, -0.2]


class TestRealPath:
    def test_arithmetic_and_alive(self):
        g = TimeGrid(0.0, 0.1, 2)
        a = RealPath(g, np.array([[0.0, 1.0, 2.0]]), np.array([2]))
        b = RealPath(g, np.array([[0.0, 0.5, 0.5]]), np.array([1]))
        d = a - b
        assert np.array_equal(d.values, [[0.0, 0.5, 1.5]]) and d.alive_until[0] == 1
        assert np.array_equal((a + b).terminal, [2.5])
        assert np.array_equal(a.scale(2.0).values, [[0.0, 2.0, 4.0]])

    def test_accumulate_starts_at_zero(self):
        X = from_values(np.zeros((4, 1)), TimeGrid(0.0, 0.1, 3))
        rp = accumulate(np.array([1.0, 2.0, 3.0]), X)
        assert np.array_equal(rp.values, [0.0, 1.0, 3.0, 6.0])


class TestBaseIntegrals:
    g = TimeGrid(0.0, 0.1, 3)
    X = from_values(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 2.0], [0.0, 2.0]]), g)

    def test_second_order_form(self):
        # Θ = dx + dy·dy
        theta = lambda x: (np.broadcast_to([1.0, 0.0], x.shape), np.broadcast_to(np.diag([0.0, 1.0]), x.shape + (2,)))
        assert integrate_second_order(theta, self.X).values == pytest.approx([0.0, 1.0, 5.0, 4.0])

    def test_quadratic(self):
        b = lambda x: np.broadcast_to(np.eye(2), x.shape + (2,))
        assert integrate_quadratic(b, self.X).values == pytest.approx([0.0, 1.0, 5.0, 6.0])

    def test_flat_ito_is_displacement(self):
        ens = simulate_bm_ensemble(euclidean(2), np.zeros(2), TimeGrid(0.0, 1e-2, 50), 10, 0)
        rp = ito_integral(lambda x: np.broadcast_to([2.0, -1.0], x.shape), euclidean(2).christoffels, ens)
        expected = 2 * ens.values[:, -1, 0] - ens.values[:, -1, 1]
        assert np.max(np.abs(rp.terminal - expected)) < 1e-12

    def test_ito_curvature_correction(self):
        # one step on the sphere chart: θ = dθ picks up ½Γ^θ_φφ Δφ²
        S = sphere_chart()
        X = from_values(np.array([[1.0, 0.0], [1.0, 0.2]]), TimeGrid(0.0, 1.0, 1))
        rp = ito_integral(lambda x: np.broadcast_to([1.0, 0.0], x.shape), S.christoffels, X)
        assert rp.terminal == pytest.approx(0.5 * (-np.sin(1.0) * np.cos(1.0)) * 0.04)


class TestVerticalIntegrals:
    def test_flat_basis_form_is_fiber_displacement(self):
        X = ambient_bm(FLAT, P0, TimeGrid(0.0, 1e-2, 50), 8, 1)
        th = VerticalForm.basis(1, 2, 4)
        for rp in (vertical_ito_integral(th, FLAT, X), vertical_stratonovich_integral(th, FLAT, X),
                   vertical_stratonovich_trapezoid(th, FLAT, X)):
            assert np.max(np.abs(rp.terminal - (X.values[:, -1, 3] - X.values[:, 0, 3]))) < 1e-12

    def test_base_increments_ignored_by_constant_form_on_flat_tm(self):
        g = TimeGrid(0.0, 0.1, 1)
        X = from_values(np.array([[0.0, 0.0, 0.0, 0.0], [0.3, -0.1, 0.0, 0.0]]), g)
        assert vertical_ito_integral(VerticalForm.basis(0, 2, 4), FLAT, X).terminal == 0.0

    def test_stratonovich_local_formula_converges_to_trapezoid(self):
        th = vertical_form("trig", SPHERE, 0)
        gaps = []
        for dt in (4e-3, 1e-3):
            X = ambient_bm(SPHERE, P0, TimeGrid.until(0.5, dt), 200, 3)
            ok = X.survived
            d = vertical_stratonovich_integral(th, SPHERE, X).terminal - \
                vertical_stratonovich_trapezoid(th, SPHERE, X).terminal
            gaps.append(np.mean(np.abs(d[ok])))
        assert gaps[1] < gaps[0] and gaps[1] < 2e-2

    def test_covariant_derivative_of_parallel_form_on_flat_tm(self):
        p = FLAT.random_points(np.random.default_rng(0), 20)
        assert np.all(vertical_covariant_derivative(VerticalForm.basis(0, 2, 4), FLAT, p) == 0)

    def test_covariant_derivative_linear_form(self):
        th = vertical_form("linear", FLAT, 1, scale=3.0)
        d = vertical_covariant_derivative(th, FLAT, np.array(P0))
        expected = np.zeros((4, 4))
        expected[3, 3] = 3.0
        assert np.array_equal(d, expected)

    def test_hessian_integral_flat_linear(self):
        X = ambient_bm(FLAT, P0, TimeGrid(0.0, 1e-2, 20), 4, 2)
        rp = vertical_hessian_integral(vertical_form("linear", FLAT, 0), FLAT, X)
        expected = np.sum(X.increments[..., 2] ** 2, axis=-1)
        assert np.max(np.abs(rp.terminal - expected)) < 1e-12


class TestConversion:
    def test_linear_form_on_flat_tm_is_exact(self):
        # v dv: trapezoid and Itô + ½ bracket both telescope to ½Δ(v²)
        X = ambient_bm(FLAT, P0, TimeGrid(0.0, 1e-2, 100), 50, 4)
        res = conversion_residual(vertical_form("linear", FLAT, 0), FLAT, X)
        assert np.max(np.abs(res.terminal)) < 1e-10

    def test_residual_shrinks_on_sphere_sasaki(self):
        th = vertical_form("trig", SPHERE, 1)
        means = []
        for dt in (4e-3, 1e-3):
            X = ambient_bm(SPHERE, P0, TimeGrid.until(0.5, dt), 300, 5)
            res = conversion_residual(th, SPHERE, X)
            means.append(np.mean(np.abs(res.terminal[X.survived])))
        assert means[1] < means[0] and means[1] < 5e-2


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 16))
def test_vertical_integrals_are_linear_in_theta(a, b, seed):
    X = ambient_bm(SPHERE, P0, TimeGrid(0.0, 1e-2, 20), 3, seed)
    t1, t2 = vertical_form("trig", SPHERE, 0), vertical_form("linear", SPHERE, 1)
    combo = t1.scaled(a, t2, b)
    for integral in (vertical_ito_integral, vertical_stratonovich_integral, vertical_stratonovich_trapezoid):
        lhs = integral(combo, SPHERE, X).values
        rhs = a * integral(t1, SPHERE, X).values + b * integral(t2, SPHERE, X).values
        assert np.allclose(lhs, rhs, atol=1e-10)
