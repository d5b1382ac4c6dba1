import numpy as np
import pytest
from conftest import ambient_bm

from vertmart.bundles import (
    canonical_vertical_form,
    complete_lift_coordinates,
    covariant_derivative_field,
    lift_frame,
    principal_split_test,
    product_principal_bundle,
    sasaki_bundle,
    tangent_bundle,
    tm_vertical_martingale_criterion,
)
from vertmart.corpus import bundle, tm_section
from vertmart.geometry import flat_torus, hyperbolic_half_plane, levi_civita, partial_derivatives, \
    sphere_chart
from vertmart.maps import image_path, tension_field, vertical_differential
from vertmart.paths import TimeGrid, simulate_bm_ensemble
from vertmart.submersion import validate_affine_submersion, vertical_christoffels

BASES = [flat_torus(), sphere_chart(), hyperbolic_half_plane()]


def tm_points(base, n=40, seed=0):
    rng = np.random.default_rng(seed)
    x = base.random_points(rng, n)
    return np.concatenate([x, rng.uniform(-1, 1, (n, base.dim))], axis=-1)


@pytest.mark.parametrize("base", BASES, ids=lambda b: b.name)
class TestConnectionTables:
    def test_complete_lift_matches_textbook(self, base):
        p = tm_points(base)
        a = tangent_bundle(base, "complete").christoffels(p)
        assert np.max(np.abs(a - complete_lift_coordinates(base, p))) < 1e-8

    def test_sasaki_is_levi_civita_of_sasaki_metric(self, base):
        tb = sasaki_bundle(base)
        p = tm_points(base, 20, 1)
        oracle = levi_civita(tb.sasaki_metric, p)
        assert np.max(np.abs(tb.christoffels(p) - oracle)) < 1e-6

    def test_vertical_christoffels_shared(self, base):
        p = tm_points(base, 100, 2)
        c = vertical_christoffels(tangent_bundle(base, "complete").sub, p)
        s = vertical_christoffels(tangent_bundle(base, "sasaki").sub, p)
        assert np.max(np.abs(c.full() - s.full())) <= 1e-8

    def test_frame_columns(self, base):
        p = tm_points(base, 5)
        F = lift_frame(base, p)
        m = base.dim
        assert np.array_equal(F[:, :m, :m], np.broadcast_to(np.eye(m), (5, m, m)))
        P = tangent_bundle(base, "sasaki").sub.vertical_projector(p)
        # horizontal lifts span the kernel of P_v
        assert np.max(np.abs(P @ F[:, :, :m])) < 1e-12


def test_unknown_connection():
    with pytest.raises(ValueError):
        tangent_bundle(flat_torus(), "levi")


def test_complete_lift_horizontal_curvature_block():
    """Vertical part of ∇^c_{E_i}E_j at (x, v) is R(v, ∂_i)∂_j (complete) and -½R(∂_i, ∂_j)v (Sasaki)."""
    from vertmart.bundles import lift_frame_connection
    from vertmart.geometry import riemann_tensor
    S = sphere_chart()
    p = tm_points(S, 10, 3)
    R = riemann_tensor(S, p[:, :2])
    v = p[:, 2:]
    # unit sphere: R(∂_i, ∂_j)∂_k = g_jk ∂_i - g_ik ∂_j, stored as [l, i, j, k]
    g = S.metric(p[:, :2])
    eye = np.eye(2)
    oracle = np.einsum("li,njk->nlijk", eye, g) - np.einsum("lj,nik->nlijk", eye, g)
    assert np.max(np.abs(R - oracle)) < 1e-6
    om_c = lift_frame_connection(S, p, "complete")
    assert np.allclose(om_c[:, 2:, :2, :2], np.einsum("nkaij,na->nkij", oracle, v), atol=1e-6)
    om_s = lift_frame_connection(S, p, "sasaki")
    assert np.allclose(om_s[:, 2:, :2, :2], -0.5 * np.einsum("nkija,na->nkij", oracle, v), atol=1e-6)


@pytest.mark.parametrize("kind", ["complete", "sasaki"])
def test_tm_affine_submersion(kind):
    ok, defect = validate_affine_submersion(tangent_bundle(sphere_chart(), kind).sub)
    assert ok, defect


class TestCanonicalForm:
    tb = bundle("sphere-tm-sasaki")

    def test_restrictions(self):
        th = canonical_vertical_form(self.tb, np.array([1.0, -2.0]))
        p = tm_points(self.tb.base, 8)
        cov = th.covector(p)
        F = lift_frame(self.tb.base, p)
        on_frame = np.einsum("nA,nAb->nb", cov, F)
        assert np.max(np.abs(on_frame[:, :2])) < 1e-12
        assert np.allclose(on_frame[:, 2:], [1.0, -2.0])
        assert np.allclose(th(p), [1.0, -2.0])

    def test_callable_coefficients(self):
        th = canonical_vertical_form(self.tb, lambda p: p[..., 2:])
        p = tm_points(self.tb.base, 4)
        assert np.allclose(th(p), p[:, 2:])


class TestCovariantDerivative:
    @pytest.mark.parametrize("name", ["mixed-field", "cos-field", "coordinate-e1", "coordinate-e2"])
    def test_equals_vertical_differential(self, name):
        tb = bundle("sphere-tm-sasaki")
        y = tb.base.random_points(np.random.default_rng(4), 20)
        s = tm_section(name)
        assert np.max(np.abs(covariant_derivative_field(tb.base, s, y) - vertical_differential(s, tb.sub, y))) < 1e-12

    def test_killing_field_not_parallel(self):
        S = sphere_chart()
        y = S.random_points(np.random.default_rng(5), 20)
        nabla = covariant_derivative_field(S, tm_section("coordinate-e2"), y)
        assert np.min(np.abs(nabla).max(axis=(-1, -2))) > 1e-3


def rough_laplacian(base, s, y):
    """g^{ij}(∇²V)_ij from finite differences of ∇V."""
    nabla = lambda q: covariant_derivative_field(base, s, q)  # [a, i]
    d = partial_derivatives(nabla, y, 1e-5)  # [j, a, i]
    gam = base.christoffels(y)
    hess = (np.moveaxis(d, -3, -1)  # [a, i, j] = ∂_j (∇V)^a_i
            + np.einsum("...ajb,...bi->...aij", gam, nabla(y))
            - np.einsum("...kji,...ak->...aij", gam, nabla(y)))
    return np.einsum("...ij,...aij->...a", base.inverse_metric(y), hess)


@pytest.mark.parametrize("name", ["mixed-field", "cos-field", "coordinate-e1", "coordinate-e2"])
def test_connection_tension_is_rough_laplacian(name):
    S = sphere_chart()
    y = S.random_points(np.random.default_rng(6), 10)
    s = tm_section(name)
    lap = rough_laplacian(S, s, y)
    sas = tension_field(s, sasaki_bundle(S).sub, S, y, "connection")
    assert np.max(np.abs(sas - lap)) < 1e-4
    # complete lift adds Ric(V) = V on the unit sphere
    comp = tension_field(s, tangent_bundle(S, "complete").sub, S, y, "connection")
    assert np.max(np.abs(comp - (lap + s.fiber(y)))) < 1e-4


class TestTMCriterion:
    GRID = TimeGrid(0.0, 1e-2, 100)

    def test_fiber_bm_is_vertical_martingale(self):
        tb = bundle("flat-torus-tm-complete")
        X = ambient_bm(tb.sub, [1.0, 1.0, 0.0, 0.0], self.GRID, 300, 11)
        res = tm_vertical_martingale_criterion(X, tb)
        assert res.passed and all(r.passed for r in res.drift_reports)
        assert res.base_is_martingale and res.defect is not None

    def test_sin_section_image(self):
        tb = bundle("flat-torus-tm-sasaki")
        B = simulate_bm_ensemble(tb.base, [np.pi / 2, 0.0], TimeGrid(0.0, 1e-3, 1000), 500, 12)
        X = image_path(tm_section("sin-field"), tb.sub, B)
        res = tm_vertical_martingale_criterion(X, tb)
        # the combined real process is the vertical Itô integral, so it inherits the drift
        assert not res.passed and not res.drift_reports[0].passed
        assert res.reports[0].estimate == pytest.approx(res.drift_reports[0].estimate, abs=2e-2)
        assert res.reports[1].passed

    def test_sphere_zero_section(self):
        tb = bundle("sphere-tm-sasaki")
        B = simulate_bm_ensemble(tb.base, [np.pi / 2, 0.0], self.GRID, 300, 13)
        res = tm_vertical_martingale_criterion(image_path(tm_section("zero"), tb.sub, B), tb)
        assert res.passed and all(r.passed for r in res.drift_reports)


class TestPrincipalSplit:
    pb = product_principal_bundle(flat_torus(), flat_torus(1))
    GRID = TimeGrid(0.0, 1e-2, 100)

    def test_martingale_agrees(self):
        X = ambient_bm(self.pb.sub, [1.0, 2.0, 0.5], self.GRID, 300, 14)
        v, g = principal_split_test(self.pb, X)
        assert all(r.passed for r in v) and all(r.passed for r in g)

    def test_drift_agrees(self):
        X = ambient_bm(self.pb.sub, [1.0, 2.0, 0.5], self.GRID, 300, 14, drift=[0.0, 0.0, 1.5])
        v, g = principal_split_test(self.pb, X)
        assert not any(r.passed for r in v) and not any(r.passed for r in g)

    def test_base_drift_irrelevant(self):
        X = ambient_bm(self.pb.sub, [1.0, 2.0, 0.5], self.GRID, 300, 14, drift=[3.0, -2.0, 0.0])
        v, g = principal_split_test(self.pb, X)
        assert all(r.passed for r in v) and all(r.passed for r in g)

    def test_sphere_group(self):
        pb = product_principal_bundle(flat_torus(), sphere_chart())
        X = ambient_bm(pb.sub, [1.0, 2.0, np.pi / 2, 0.0], self.GRID, 300, 15)
        v, g = principal_split_test(pb, X)
        assert [r.passed for r in v] == [r.passed for r in g]
        assert np.allclose([r.estimate for r in v], [r.estimate for r in g])
