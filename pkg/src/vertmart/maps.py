"""Smooth maps into a submersion: vertical second fundamental form, tension
field, harmonic sections and the geometric Itô / Stratonovich transfer checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import ChartedManifold, GeometryError, SecondOrderVector, partial_derivatives, \
    pushforward_second_order
from .integrals import RealPath, _left, _outer, accumulate, ito_integral, vertical_ito_integral, \
    vertical_stratonovich_integral
from .martingale import MartingaleReport, drift_part, martingale_test, mean_and_se
from .paths import Ensemble, TimeGrid, map_path, simulate_bm_ensemble
from .submersion import AdaptedSubmersion, VerticalForm, apply_vertical_connection, \
    project_second_order, vertical_christoffels


class NotASectionError(GeometryError):
    pass


class SmoothMapJet:
    """φ: N → E with value, Jacobian ∂φ^A/∂y^i and Hessian ∂²φ^A/∂y^i∂y^j.

    Missing derivatives fall back to central differences.
    """

    def __init__(self, value: Callable, jacobian: Optional[Callable] = None,
                 hessian: Optional[Callable] = None, h: float = 1e-5, name: str = ""):
        self.value = value
        self._jacobian = jacobian
        self._hessian = hessian
        self.h = h
        self.name = name

    def __call__(self, y):
        return self.value(np.asarray(y, dtype=float))

    def jacobian(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self._jacobian is not None:
            return self._jacobian(y)
        return np.swapaxes(partial_derivatives(self.value, y, self.h), -1, -2)

    def hessian(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self._hessian is not None:
            hess = self._hessian(y)
        else:
            # [..., j, A, i] = ∂_j ∂_i φ^A
            hess = np.moveaxis(partial_derivatives(self.jacobian, y, 10 * self.h), -3, -1)
        return 0.5 * (hess + np.swapaxes(hess, -1, -2))


def section(V: Callable, V_jacobian: Optional[Callable] = None, V_hessian: Optional[Callable] = None,
            name: str = "", h: float = 1e-5) -> SmoothMapJet:
    """Jet of y ↦ (y, V(y)); only the fiber map is supplied, the base block is the identity."""
    fiber = SmoothMapJet(V, V_jacobian, V_hessian, h=h)

    def value(y):
        return np.concatenate([y, fiber.value(y)], axis=-1)

    def jacobian(y):
        n = y.shape[-1]
        eye = np.broadcast_to(np.eye(n), y.shape[:-1] + (n, n))
        return np.concatenate([eye, fiber.jacobian(y)], axis=-2)

    def hessian(y):
        n = y.shape[-1]
        fh = fiber.hessian(y)
        return np.concatenate([np.zeros(y.shape[:-1] + (n, n, n)), fh], axis=-3)

    jet = SmoothMapJet(value, jacobian, hessian, h=h, name=name)
    jet.fiber = fiber
    return jet


def alpha_v(phi: SmoothMapJet, sub: AdaptedSubmersion, N: ChartedManifold, y,
            L: SecondOrderVector) -> np.ndarray:
    """α^v_φ(L) = Γ^v 𝐯φ_*L - 𝐯φ_* Γ^N L at a single point y (fiber vector)."""
    y = np.asarray(y, dtype=float)
    J, H = phi.jacobian(y), phi.hessian(y)
    p = phi(y)
    first = apply_vertical_connection(sub, p, pushforward_second_order(J, H, L))
    gamN_L = L.first + np.einsum("kij,ij->k", N.christoffels(y), L.second)
    pushed = pushforward_second_order(J, H, SecondOrderVector(gamN_L, np.zeros_like(L.second)))
    second = project_second_order(sub, pushed).first[sub.fiber_slice]
    return first - second


def vertical_sff(phi: SmoothMapJet, sub: AdaptedSubmersion, N: ChartedManifold, y,
                 projection: str = "adapted") -> np.ndarray:
    """β^{v,α}_ij as ``[..., α, i, j]`` (batched over y).

    Evaluates α^v on the symmetric basis a = ½(e_i e_jᵀ + e_j e_iᵀ) of second-order
    vectors with zero first-order part, following the same steps as
    :func:`alpha_v`: pushforward, vertical projection, vertical connection,
    minus the pushed-forward base connection.

    Parameters
    ----------
    projection : {"adapted", "connection"}
        ``"adapted"`` drops base components in the adapted chart, so base-base
        brackets never reach the vertical connection. ``"connection"`` applies
        the full projector P_v to every block instead; on TM this turns τ^v into
        the rough Laplacian of V.
    """
    if projection not in ("adapted", "connection"):
        raise ValueError(f"unknown projection {projection!r}")
    y = np.asarray(y, dtype=float)
    n = N.dim
    m, fs = sub.base_dim, sub.fiber_slice
    J, H = phi.jacobian(y), phi.hessian(y)
    p = phi(y)
    basis = 0.5 * (np.einsum("ik,jl->ijkl", np.eye(n), np.eye(n))
                   + np.einsum("jk,il->ijkl", np.eye(n), np.eye(n)))  # [i, j, k, l]
    # φ_* of each basis vector: second block J a Jᵀ, first block H:a
    S = np.einsum("...Ak,ijkl,...Bl->...ijAB", J, basis, J, optimize=True)
    f = np.einsum("...Akl,ijkl->...ijA", H, basis)
    gamN = np.einsum("...kab,ijab->...ijk", N.christoffels(y), basis)
    if projection == "adapted":
        S[..., :m, :m] = 0.0
        gam = vertical_christoffels(sub, p).full()
        connected = f[..., fs] + np.einsum("...aAB,...ijAB->...ija", gam, S)
        pulled = np.einsum("...ak,...ijk->...ija", J[..., fs, :], gamN)
    else:
        P = sub.vertical_projector(p)
        ambient = f + np.einsum("...CAB,...ijAB->...ijC", sub.christoffels(p), S)
        connected = np.einsum("...aC,...ijC->...ija", P[..., fs, :], ambient)
        pulled = np.einsum("...ak,...ijk->...ija", (P @ J)[..., fs, :], gamN)
    beta = np.moveaxis(connected - pulled, -1, -3)
    return 0.5 * (beta + np.swapaxes(beta, -1, -2))


def vertical_sff_coordinates(phi: SmoothMapJet, sub: AdaptedSubmersion, N: ChartedManifold, y):
    """Hand-expanded coordinate formula for β^v, kept as a cross-check."""
    y = np.asarray(y, dtype=float)
    m, fs = sub.base_dim, sub.fiber_slice
    J, H = phi.jacobian(y), phi.hessian(y)
    vc = vertical_christoffels(sub, phi(y))
    Jf, Jb = J[..., fs, :], J[..., :m, :]
    beta = (H[..., fs, :, :]
            + np.einsum("...abc,...bi,...cj->...aij", vc.fiber, Jf, Jf, optimize=True)
            + np.einsum("...abl,...bi,...lj->...aij", vc.mixed, Jf, Jb, optimize=True)
            + np.einsum("...abl,...bj,...li->...aij", vc.mixed, Jf, Jb, optimize=True)
            - np.einsum("...kij,...ak->...aij", N.christoffels(y), Jf))
    return beta


def tension_field(phi: SmoothMapJet, sub: AdaptedSubmersion, N: ChartedManifold, y,
                  projection: str = "adapted") -> np.ndarray:
    """τ^{v,α} = g_N^{ij} β^{v,α}_ij."""
    y = np.asarray(y, dtype=float)
    beta = vertical_sff(phi, sub, N, y, projection)
    return np.einsum("...ij,...aij->...a", N.inverse_metric(y), beta)


def check_section(sigma: SmoothMapJet, sub: AdaptedSubmersion, y, atol: float = 1e-12):
    y = np.asarray(y, dtype=float)
    if not np.allclose(sub.project(sigma(y)), y, atol=atol, rtol=0):
        raise NotASectionError("π∘σ differs from the identity")


def is_harmonic_section(sigma: SmoothMapJet, sub: AdaptedSubmersion, N: ChartedManifold,
                        samples: int = 100, tol: float = 1e-6, seed: int = 0,
                        projection: str = "adapted") -> tuple[bool, float]:
    """Sample ‖τ^v‖ at random base points; returns (harmonic, max norm)."""
    y = N.random_points(np.random.default_rng(seed), samples)
    check_section(sigma, sub, y)
    tau = tension_field(sigma, sub, N, y, projection)
    worst = float(np.max(np.linalg.norm(tau, axis=-1)))
    return worst <= tol, worst


def vertical_differential(sigma: SmoothMapJet, sub: AdaptedSubmersion, y) -> np.ndarray:
    """𝐯σ_* = fiber rows of P_v J, shape ``[..., k, n]``."""
    y = np.asarray(y, dtype=float)
    PJ = np.einsum("...AB,...Bi->...Ai", sub.vertical_projector(sigma(y)), sigma.jacobian(y))
    return PJ[..., sub.fiber_slice, :]


def pullback(phi: SmoothMapJet, theta: VerticalForm, y) -> np.ndarray:
    """(φ*θ)_i = θ_α(φ(y)) ∂_i φ^α."""
    y = np.asarray(y, dtype=float)
    th = theta(phi(y))
    k = th.shape[-1]
    return np.einsum("...a,...ai->...i", th, phi.jacobian(y)[..., -k:, :])


def image_path(phi: SmoothMapJet, sub: AdaptedSubmersion, X):
    return map_path(X, phi, sub.displacement, sub.inside)


def _pullback_stratonovich(phi: SmoothMapJet, theta: VerticalForm, X) -> RealPath:
    """Σ ω_i ΔX^i + ½ ∂_j ω_i ΔX^j ΔX^i with ω = φ*θ, derivatives from the jets."""
    y = _left(X)
    p = phi(y)
    J, H = phi.jacobian(y), phi.hessian(y)
    th = theta(p)
    k = th.shape[-1]
    omega = np.einsum("...a,...ai->...i", th, J[..., -k:, :])
    d_omega = (np.einsum("...Ra,...Rj,...ai->...ji", theta.derivative(p), J, J[..., -k:, :], optimize=True)
               + np.einsum("...a,...aij->...ji", th, H[..., -k:, :, :]))
    steps = (np.einsum("...i,...i->...", omega, X.increments)
             + 0.5 * np.einsum("...ji,...ji->...", d_omega, _outer(X)))
    return accumulate(steps, X)


def _restrict(rp: RealPath, alive) -> RealPath:
    return RealPath(rp.grid, rp.values, np.minimum(rp.alive_until, alive))


def geometric_ito_residual(phi: SmoothMapJet, theta: VerticalForm, X, sub: AdaptedSubmersion,
                           N: ChartedManifold) -> RealPath:
    """∫θ d^vφ(X) - ∫φ*θ d^N X - ½∫β^{v*}θ(dX, dX)."""
    Y = image_path(phi, sub, X)
    lhs = vertical_ito_integral(theta, sub, Y)
    y = _left(X)
    th = theta(phi(y))
    rhs_ito = ito_integral(lambda q: pullback(phi, theta, q), N.christoffels, X)
    beta_theta = np.einsum("...a,...aij->...ij", th, vertical_sff(phi, sub, N, y))
    rhs_quad = accumulate(0.5 * np.einsum("...ij,...ij->...", beta_theta, _outer(X)), X)
    return _restrict(lhs - rhs_ito - rhs_quad, Y.alive_until)


def stratonovich_transfer_residual(phi: SmoothMapJet, theta: VerticalForm, X,
                                   sub: AdaptedSubmersion) -> RealPath:
    """∫θ δ^vφ(X) - ∫(𝐯φ)*θ δX."""
    Y = image_path(phi, sub, X)
    lhs = vertical_stratonovich_integral(theta, sub, Y)
    return _restrict(lhs - _pullback_stratonovich(phi, theta, X), Y.alive_until)


@dataclass
class HarmonicityResult:
    reports: list
    measured_drift: np.ndarray
    predicted_drift: np.ndarray
    predicted_se: np.ndarray
    matching: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    @property
    def max_abs_z(self) -> float:
        return max(r.max_abs_z for r in self.reports)


def stochastic_harmonicity_test(sigma: SmoothMapJet, sub: AdaptedSubmersion, N: ChartedManifold,
                                x0, grid: TimeGrid, n_paths: int, master_seed: int,
                                z_crit: float = 3.0, partitions: int = 4, jobs: int = 1,
                                base: Optional[Ensemble] = None) -> HarmonicityResult:
    """Map base g-Brownian paths through σ and test the drift parts of σ(B).

    ``matching`` holds one martingale report per fiber index for the paired
    difference M^α - ½∫τ^{v,α}(B_s)ds, which should be centred whatever σ is.
    """
    B = base if base is not None else simulate_bm_ensemble(N, x0, grid, n_paths, master_seed, jobs)
    Y = image_path(sigma, sub, B)
    parts = drift_part(Y, sub)
    reports = [martingale_test(rp, z_crit, partitions, name=f"M{a + 1}")
               for a, rp in enumerate(parts)]
    tau = tension_field(sigma, sub, N, _left(B))
    half_tau = [accumulate(0.5 * tau[..., a] * grid.dt, B) for a in range(sub.fiber_dim)]
    ok = np.asarray(Y.alive_until) >= grid.n_steps
    measured = np.array([mean_and_se(rp.terminal[ok])[0] for rp in parts])
    pred = np.array([mean_and_se(rp.terminal[ok]) for rp in half_tau])
    matching = [martingale_test(_restrict(rp - ht, Y.alive_until), z_crit, partitions,
                                name=f"M{a + 1}-tau") for a, (rp, ht) in enumerate(zip(parts, half_tau))]
    return HarmonicityResult(reports, measured, pred[:, 0], pred[:, 1], matching)
