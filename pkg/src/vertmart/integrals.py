"""Stochastic integrals along discretized paths.

All coefficient fields are evaluated at the left end point of each step, so
every running value at step ``n`` depends on ``X[0..n]`` only. Brackets are
the realized products of increments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .paths import TimeGrid
from .submersion import AdaptedSubmersion, VerticalForm, vertical_christoffels


@dataclass(frozen=True)
class RealPath:
    """Running values of a real integral, ``values[..., 0] == 0``."""

    grid: TimeGrid
    values: np.ndarray
    alive_until: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.values[..., -1]

    def __sub__(self, other: "RealPath") -> "RealPath":
        return RealPath(self.grid, self.values - other.values,
                        np.minimum(self.alive_until, other.alive_until))

    def __add__(self, other: "RealPath") -> "RealPath":
        return RealPath(self.grid, self.values + other.values,
                        np.minimum(self.alive_until, other.alive_until))

    def scale(self, a: float) -> "RealPath":
        return RealPath(self.grid, a * self.values, self.alive_until)


def accumulate(steps: np.ndarray, X) -> RealPath:
    zero = np.zeros(steps.shape[:-1] + (1,))
    return RealPath(X.grid, np.concatenate([zero, np.cumsum(steps, axis=-1)], axis=-1),
                    np.asarray(X.alive_until))


def _left(X) -> np.ndarray:
    return X.values[..., :-1, :]


def _outer(X) -> np.ndarray:
    return np.einsum("...i,...j->...ij", X.increments, X.increments)


def integrate_second_order(theta: Callable, X) -> RealPath:
    """∫Θ d²X = Σ Θ_i ΔX^i + Θ_ij ΔX^i ΔX^j.

    ``theta(x)`` returns the pair ``(Θ_i, Θ_ij)``.
    """
    first, second = theta(_left(X))
    steps = (np.einsum("...i,...i->...", first, X.increments)
             + np.einsum("...ij,...ij->...", second, _outer(X)))
    return accumulate(steps, X)


def integrate_quadratic(b: Callable, X) -> RealPath:
    """∫b(dX, dX) = Σ b_ij ΔX^i ΔX^j."""
    steps = np.einsum("...ij,...ij->...", b(_left(X)), _outer(X))
    return accumulate(steps, X)


def ito_integral(theta: Callable, christoffels: Callable, X) -> RealPath:
    """∫θ d^∇X = Σ θ_k (ΔX^k + ½ Γ^k_ij ΔX^i ΔX^j)."""
    x = _left(X)
    corrected = X.increments + 0.5 * np.einsum("...kij,...ij->...k", christoffels(x), _outer(X))
    steps = np.einsum("...k,...k->...", theta(x), corrected)
    return accumulate(steps, X)


def _vertical_ito_steps(theta: VerticalForm, sub: AdaptedSubmersion, X) -> np.ndarray:
    p = _left(X)
    fs = sub.fiber_slice
    gam = vertical_christoffels(sub, p).full()
    # mixed brackets enter through both (β, j) and (j, β) slots of the symmetric embedding
    corrected = X.increments[..., fs] + 0.5 * np.einsum("...aAB,...AB->...a", gam, _outer(X))
    return np.einsum("...a,...a->...", theta(p), corrected)


def vertical_ito_integral(theta: VerticalForm, sub: AdaptedSubmersion, X) -> RealPath:
    """Σ θ_α(ΔX^α + ½Γ^{v,α}_βγ ΔX^β ΔX^γ + ½Γ^{v,α}_βj (ΔX^β ΔX^j + ΔX^j ΔX^β))."""
    return accumulate(_vertical_ito_steps(theta, sub, X), X)


def vertical_stratonovich_integral(theta: VerticalForm, sub: AdaptedSubmersion, X) -> RealPath:
    """Σ θ_α ΔX^α + ½ D_R θ_α ΔX^R ΔX^α, R over base and fiber indices."""
    p = _left(X)
    fs = sub.fiber_slice
    inc = X.increments
    steps = (np.einsum("...a,...a->...", theta(p), inc[..., fs])
             + 0.5 * np.einsum("...Ra,...R,...a->...", theta.derivative(p), inc, inc[..., fs], optimize=True))
    return accumulate(steps, X)


def vertical_stratonovich_trapezoid(theta: VerticalForm, sub: AdaptedSubmersion, X) -> RealPath:
    """Σ ½(θ_α(X_n) + θ_α(X_{n+1})) ΔX^α: the Stratonovich sum taken as a limit.

    Uses no derivatives of θ; it is the independent route against which the
    local Itô-form expressions are checked.
    """
    fs = sub.fiber_slice
    th = theta(X.values)
    mid = 0.5 * (th[..., :-1, :] + th[..., 1:, :])
    return accumulate(np.einsum("...a,...a->...", mid, X.increments[..., fs]), X)


def vertical_covariant_derivative(theta: VerticalForm, sub: AdaptedSubmersion, p) -> np.ndarray:
    """∇^vθ as ``[..., A, B]``: D_A θ_B - θ_γ Γ^{v,γ}_AB (θ_B = 0 on base B)."""
    p = np.asarray(p, dtype=float)
    m, fs = sub.base_dim, sub.fiber_slice
    n = sub.total_dim
    out = np.zeros(p.shape[:-1] + (n, n))
    out[..., :, fs] = theta.derivative(p)
    gam = vertical_christoffels(sub, p).full()
    out -= np.einsum("...c,...cAB->...AB", theta(p), gam)
    return out


def vertical_hessian_integral(theta: VerticalForm, sub: AdaptedSubmersion, X) -> RealPath:
    """∫∇^vθ(dX, dX) = Σ ∇^vθ_AB ΔX^A ΔX^B."""
    steps = np.einsum("...AB,...AB->...", vertical_covariant_derivative(theta, sub, _left(X)),
                      _outer(X))
    return accumulate(steps, X)


def conversion_residual(theta: VerticalForm, sub: AdaptedSubmersion, X) -> RealPath:
    """Stratonovich - (Itô + ½∫∇^vθ(dX, dX)).

    The Stratonovich side is the trapezoidal sum, so the residual measures
    discretization error of the conversion rather than an algebraic identity.
    """
    strat = vertical_stratonovich_trapezoid(theta, sub, X)
    ito = vertical_ito_integral(theta, sub, X)
    hess = vertical_hessian_integral(theta, sub, X)
    return strat - (ito + hess.scale(0.5))
