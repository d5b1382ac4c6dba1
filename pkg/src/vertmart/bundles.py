"""Concrete submersions: TM with the complete-lift or Sasaki connection, and
product principal bundles M × G.

TM charts are (x^1..x^m, v^1..v^m). The adapted frame at (x, v) is

    E_j = ∂_j - Γ^a_jb(x) v^b ∂_{v^a}   (horizontal lift of ∂_j)
    F_j = ∂_{v^j}                        (vertical lift of ∂_j)

Ambient Christoffel symbols are produced from the lift-frame connection
tables by a change of frame, not transcribed from coordinate formulas.
Curvature convention: R(X,Y)Z = ∇_X∇_Y Z - ∇_Y∇_X Z - ∇_[X,Y] Z.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .geometry import ChartedManifold, christoffel_derivatives, riemann_tensor
from .integrals import RealPath, _left, _outer, accumulate, ito_integral, \
    vertical_stratonovich_integral
from .martingale import MartingaleReport, drift_part, martingale_test
from .paths import from_values
from .submersion import AdaptedSubmersion, VerticalForm, product_submersion

CONNECTIONS = ("complete", "sasaki")


def lift_frame(base: ChartedManifold, p) -> np.ndarray:
    """Matrix whose columns are (E_1..E_m, F_1..F_m) in coordinates."""
    p = np.asarray(p, dtype=float)
    m = base.dim
    x, v = p[..., :m], p[..., m:]
    frame = np.zeros(p.shape[:-1] + (2 * m, 2 * m))
    frame[..., :m, :m] = np.eye(m)
    frame[..., m:, m:] = np.eye(m)
    frame[..., m:, :m] = -np.einsum("...ajb,...b->...aj", base.christoffels(x), v)
    return frame


def _lift_frame_derivative(base: ChartedManifold, p, gam, dgam) -> np.ndarray:
    """∂_A (frame)^C_b as ``[..., A, C, b]``."""
    m = base.dim
    v = p[..., m:]
    out = np.zeros(p.shape[:-1] + (2 * m,) * 3)
    out[..., :m, m:, :m] = -np.einsum("...iajb,...b->...iaj", dgam, v)
    out[..., m:, m:, :m] = -np.einsum("...ajc->...caj", gam)
    return out


def lift_frame_connection(base: ChartedManifold, p, kind: str, gam=None, curv=None) -> np.ndarray:
    """ω^c_ab with ∇_{e_a} e_b = ω^c_ab e_c in the lift frame, ``[..., c, a, b]``.

    complete:  ∇_{F}F = 0, ∇_{F}E = 0, ∇_{E_i}F_j = (∇_i ∂_j)^v,
               ∇_{E_i}E_j = (∇_i ∂_j)^h + (R(v, ∂_i)∂_j)^v
    sasaki:    ∇_{F}F = 0, ∇_{F_i}E_j = ½(R(v, ∂_i)∂_j)^h,
               ∇_{E_i}F_j = (∇_i ∂_j)^v + ½(R(v, ∂_j)∂_i)^h,
               ∇_{E_i}E_j = (∇_i ∂_j)^h - ½(R(∂_i, ∂_j)v)^v
    """
    if kind not in CONNECTIONS:
        raise ValueError(f"unknown TM connection {kind!r}")
    p = np.asarray(p, dtype=float)
    m = base.dim
    x, v = p[..., :m], p[..., m:]
    gam = base.christoffels(x) if gam is None else gam
    R = riemann_tensor(base, x) if curv is None else curv  # [k, a, i, j] = R^k_aij
    E, F = slice(0, m), slice(m, 2 * m)
    omega = np.zeros(p.shape[:-1] + (2 * m,) * 3)
    omega[..., E, E, E] = gam
    omega[..., F, E, F] = gam
    R_v_i_j = np.einsum("...kaij,...a->...kij", R, v)  # R(v, ∂_i)∂_j
    if kind == "complete":
        omega[..., F, E, E] = R_v_i_j
    else:
        R_i_j_v = np.einsum("...kija,...a->...kij", R, v)  # R(∂_i, ∂_j)v
        omega[..., F, E, E] = -0.5 * R_i_j_v
        omega[..., E, E, F] = 0.5 * np.swapaxes(R_v_i_j, -1, -2)
        omega[..., E, F, E] = 0.5 * R_v_i_j
    return omega


def frame_change_christoffels(frame, dframe, omega) -> np.ndarray:
    """Coordinate Γ^C_AB from frame connection coefficients.

    With e_a = M^A_a ∂_A:  M^A_a M^B_b Γ^C_AB = M^C_c ω^c_ab - M^A_a ∂_A M^C_b.
    """
    inv = np.linalg.inv(frame)
    n = frame.shape[-1]
    flat = frame.shape[:-2] + (n, n * n)
    T = (frame @ omega.reshape(flat)).reshape(omega.shape)
    T = T - np.swapaxes((np.swapaxes(frame, -1, -2) @ dframe.reshape(flat)).reshape(dframe.shape), -3, -2)
    return np.swapaxes(inv, -1, -2)[..., None, :, :] @ T @ inv[..., None, :, :]


def tm_vertical_projector(base: ChartedManifold) -> Callable:
    """P_v with kernel the horizontal lifts: P_v ∂_j = Γ^a_jb v^b ∂_{v^a}, P_v ∂_{v^a} = ∂_{v^a}."""
    m = base.dim

    def projector(p):
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape[:-1] + (2 * m, 2 * m))
        out[..., m:, m:] = np.eye(m)
        out[..., m:, :m] = np.einsum("...ajb,...b->...aj", base.christoffels(p[..., :m]), p[..., m:])
        return out

    return projector


@dataclass(frozen=True)
class TangentBundleGeometry:
    base: ChartedManifold
    kind: str
    sub: AdaptedSubmersion

    def frame(self, p) -> np.ndarray:
        return lift_frame(self.base, p)

    def curvature(self, x) -> np.ndarray:
        return riemann_tensor(self.base, x)

    def christoffels(self, p) -> np.ndarray:
        return self.sub.christoffels(p)

    def sasaki_metric(self, p) -> np.ndarray:
        """g ⊕ g in the lift frame, expressed in coordinates."""
        p = np.asarray(p, dtype=float)
        m = self.base.dim
        g = self.base.metric(p[..., :m])
        eta = np.zeros(p.shape[:-1] + (2 * m, 2 * m))
        eta[..., :m, :m] = g
        eta[..., m:, m:] = g
        inv = np.linalg.inv(self.frame(p))
        return np.einsum("...aA,...ab,...bB->...AB", inv, eta, inv, optimize=True)


def tangent_bundle(base: ChartedManifold, kind: str = "complete") -> TangentBundleGeometry:
    if kind not in CONNECTIONS:
        raise ValueError(f"unknown TM connection {kind!r}")
    m = base.dim

    def christoffel(p):
        p = np.asarray(p, dtype=float)
        x = p[..., :m]
        gam = base.christoffels(x)
        dgam = christoffel_derivatives(base, x)
        frame = lift_frame(base, p)
        dframe = _lift_frame_derivative(base, p, gam, dgam)
        omega = lift_frame_connection(base, p, kind, gam=gam, curv=riemann_tensor(base, x))
        out = frame_change_christoffels(frame, dframe, omega)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    sub = AdaptedSubmersion(base, m, christoffel, tm_vertical_projector(base),
                            name=f"{base.name}-tm-{kind}")
    return TangentBundleGeometry(base, kind, sub)


def complete_lift_bundle(base: ChartedManifold) -> TangentBundleGeometry:
    return tangent_bundle(base, "complete")


def sasaki_bundle(base: ChartedManifold) -> TangentBundleGeometry:
    return tangent_bundle(base, "sasaki")


def complete_lift_coordinates(base: ChartedManifold, p) -> np.ndarray:
    """Coordinate complete lift of a symmetric connection (textbook formula, used as an oracle):
    Γ̃^h_ji = Γ^h_ji, Γ̃^{h̄}_ji = v^a ∂_a Γ^h_ji, Γ̃^{h̄}_{j̄ i} = Γ̃^{h̄}_{j ī} = Γ^h_ji."""
    p = np.asarray(p, dtype=float)
    m = base.dim
    x, v = p[..., :m], p[..., m:]
    gam = base.christoffels(x)
    out = np.zeros(p.shape[:-1] + (2 * m,) * 3)
    out[..., :m, :m, :m] = gam
    out[..., m:, :m, :m] = np.einsum("...a,...ahji->...hji", v, christoffel_derivatives(base, x))
    out[..., m:, m:, :m] = gam
    out[..., m:, :m, m:] = gam
    return out


def covariant_derivative_field(base: ChartedManifold, sigma, y) -> np.ndarray:
    """∇V as ``[..., a, i]`` = ∂_i V^a + Γ^a_ib V^b for a section jet of TM."""
    y = np.asarray(y, dtype=float)
    m = base.dim
    V = sigma(y)[..., m:]
    dV = sigma.jacobian(y)[..., m:, :]
    return dV + np.einsum("...aib,...b->...ai", base.christoffels(y), V)


def canonical_vertical_form(tb: TangentBundleGeometry, coeffs: Union[Callable, np.ndarray]) -> VerticalForm:
    """Vertical form restricting to ``coeffs`` on vertical lifts and vanishing on E_j.

    The returned VerticalForm carries the dv^α coefficients; its full covector
    (including the dx^j part forced by the horizontal complement) is available
    as ``.covector(p)``.
    """
    m = tb.base.dim
    if callable(coeffs):
        fn = coeffs
        name = getattr(coeffs, "__name__", "theta")
        deriv = None
    else:
        c = np.asarray(coeffs, dtype=float)
        form = VerticalForm.constant(c, 2 * m)
        fn, deriv, name = form.coeffs, form._derivative, f"canonical{c.tolist()}"

    def covector(p):
        p = np.asarray(p, dtype=float)
        rhs = np.zeros(p.shape[:-1] + (2 * m,))
        rhs[..., m:] = fn(p)
        return np.linalg.solve(np.swapaxes(tb.frame(p), -1, -2), rhs[..., None])[..., 0]

    def dv_coeffs(p):
        return covector(p)[..., m:]

    theta = VerticalForm(dv_coeffs, deriv, name=name)
    theta.covector = covector
    return theta


@dataclass
class TMCriterionResult:
    reports: list
    drift_reports: list
    base_is_martingale: bool
    defect: Optional[float]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def _lifted_stratonovich(theta: VerticalForm, X, m: int) -> RealPath:
    """∫θ(δJ)^v = Σ θ_α(X) ΔJ^α + ½ (D_R θ_α ΔX^R) ΔJ^α."""
    p = _left(X)
    dJ = X.increments[..., :m]
    steps = (np.einsum("...a,...a->...", theta(p), dJ)
             + 0.5 * np.einsum("...Ra,...R,...a->...", theta.derivative(p), X.increments, dJ, optimize=True))
    return accumulate(steps, X)


def _lifted_ito(theta: VerticalForm, X, base: ChartedManifold) -> RealPath:
    """∫θ^{v*} d^M J = Σ θ_α(X) (ΔJ^α + ½Γ^α_ij(J) ΔJ^i ΔJ^j)."""
    m = base.dim
    p = _left(X)
    dJ = X.increments[..., :m]
    corrected = dJ + 0.5 * np.einsum("...kij,...i,...j->...k", base.christoffels(p[..., :m]), dJ, dJ, optimize=True)
    return accumulate(np.einsum("...a,...a->...", theta(p), corrected), X)


def tm_vertical_martingale_criterion(X, tb: TangentBundleGeometry, forms=None, z_crit: float = 3.0,
                                     partitions: int = 4) -> TMCriterionResult:
    """Test ∫θδ^vX - ∫θ(δJ)^v + ∫θ^{v*}d^M J for a basis of vertical forms.

    When every coordinate Itô integral of J = π(X) passes the martingale test,
    also reports the mean terminal |δ^vX - (δJ)^v| over the ensemble.
    """
    m = tb.base.dim
    sub = tb.sub
    if forms is None:
        forms = [VerticalForm.basis(a, m, 2 * m) for a in range(m)]
    reports = []
    for i, th in enumerate(forms):
        combo = (vertical_stratonovich_integral(th, sub, X) - _lifted_stratonovich(th, X, m)
                 + _lifted_ito(th, X, tb.base))
        reports.append(martingale_test(combo, z_crit, partitions, name=f"tm-{th.name or i}"))
    drift_reports = [martingale_test(rp, z_crit, partitions, name=f"M{a + 1}")
                     for a, rp in enumerate(drift_part(X, sub))]
    J = from_values(X.values[..., :m], X.grid, tb.base.displacement)
    base_reports = [
        martingale_test(ito_integral(lambda x, k=k: np.eye(m)[k] + 0 * x, tb.base.christoffels, J),
                        z_crit, partitions)
        for k in range(m)]
    base_ok = all(r.passed for r in base_reports)
    defect = None
    if base_ok:
        cum = np.cumsum(X.increments[..., m:] - X.increments[..., :m], axis=-2)
        defect = float(np.mean(np.linalg.norm(cum[..., -1, :], axis=-1)))
    return TMCriterionResult(reports, drift_reports, base_ok, defect)


@dataclass(frozen=True)
class ProductPrincipalBundle:
    base: ChartedManifold
    group: ChartedManifold
    sub: AdaptedSubmersion


def product_principal_bundle(base: ChartedManifold, group: ChartedManifold) -> ProductPrincipalBundle:
    return ProductPrincipalBundle(base, group, product_submersion(base, group))


def principal_split_test(pb: ProductPrincipalBundle, X, z_crit: float = 3.0, partitions: int = 4):
    """Vertical-martingale test on X and ∇^G-martingale test on its group part V.

    Returns ``(vertical_reports, group_reports)``; the verdicts should agree.
    """
    m, k = pb.base.dim, pb.group.dim
    vertical = [martingale_test(rp, z_crit, partitions, name=f"vertical-{a + 1}")
                for a, rp in enumerate(drift_part(X, pb.sub))]
    V = from_values(X.values[..., m:], X.grid, pb.group.displacement)
    V = type(V)(*[getattr(V, f) for f in ("grid", "values", "increments")],
                np.minimum(np.asarray(V.alive_until), np.asarray(X.alive_until)))
    group = [martingale_test(ito_integral(lambda g, a=a: np.broadcast_to(np.eye(k)[a], g.shape),
                                          pb.group.christoffels, V),
                             z_crit, partitions, name=f"group-{a + 1}")
             for a in range(k)]
    return vertical, group
