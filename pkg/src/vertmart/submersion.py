"""Adapted charts for a submersion π: E → M and the vertical connection.

Total-space coordinates are ``p = (x^1..x^m, v^1..v^k)`` with π(x, v) = x.
Base indices come first, fiber indices last.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geometry import (
    DEFAULT_FD_STEP,
    ChartedManifold,
    Field,
    SecondOrderVector,
    partial_derivatives,
)


def coordinate_vertical_projector(m: int, k: int) -> Field:
    """Projector onto the fiber coordinate directions along the base ones."""
    P = np.zeros((m + k, m + k))
    P[m:, m:] = np.eye(k)

    def projector(p):
        return np.broadcast_to(P, np.shape(p)[:-1] + P.shape).copy()

    return projector


@dataclass(frozen=True)
class AdaptedSubmersion:
    """Submersion datum in an adapted chart.

    ``christoffel_fn`` gives the ambient symmetric connection on E,
    ``vertical_projector`` the matrix of 𝐯: TE → VE (its kernel is the
    chosen horizontal complement).
    """

    base: ChartedManifold
    fiber_dim: int
    christoffel_fn: Field
    vertical_projector: Field
    guard: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = ""
    fiber_periods: tuple = ()

    @property
    def base_dim(self) -> int:
        return self.base.dim

    @property
    def total_dim(self) -> int:
        return self.base.dim + self.fiber_dim

    @property
    def fiber_slice(self) -> slice:
        return slice(self.base.dim, self.total_dim)

    @property
    def base_slice(self) -> slice:
        return slice(0, self.base.dim)

    def project(self, p) -> np.ndarray:
        """π(x, v) = x."""
        return np.asarray(p, dtype=float)[..., : self.base.dim]

    def inside(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        ok = self.base.inside(self.project(p))
        if self.guard is not None:
            ok = ok & np.asarray(self.guard(p), dtype=bool)
        return ok

    def christoffels(self, p) -> np.ndarray:
        return self.christoffel_fn(np.asarray(p, dtype=float))

    def displacement(self, p_from, p_to) -> np.ndarray:
        d = np.asarray(p_to, dtype=float) - np.asarray(p_from, dtype=float)
        d[..., : self.base.dim] = self.base.displacement(
            np.asarray(p_from)[..., : self.base.dim], np.asarray(p_to)[..., : self.base.dim])
        for a, period in enumerate(self.fiber_periods):
            if period is not None:
                i = self.base.dim + a
                d[..., i] = d[..., i] - period * np.round(d[..., i] / period)
        return d

    def random_points(self, rng: np.random.Generator, n: int, fiber_scale: float = 1.0):
        x = self.base.random_points(rng, n)
        v = rng.uniform(-fiber_scale, fiber_scale, size=(n, self.fiber_dim))
        return np.concatenate([x, v], axis=-1)


@dataclass(frozen=True)
class VerticalChristoffels:
    """Γ^{v,α}_{βγ} as ``fiber[..., α, β, γ]`` and Γ^{v,α}_{βj} as ``mixed[..., α, β, j]``."""

    fiber: np.ndarray
    mixed: np.ndarray

    def full(self) -> np.ndarray:
        """Embed into ``[..., α, A, B]`` over all total indices, symmetric in (A, B).

        The pure-base block is zero: Γ^v only acts on 𝔙E.
        """
        k = self.fiber.shape[-1]
        m = self.mixed.shape[-1]
        out = np.zeros(self.fiber.shape[:-2] + (m + k, m + k))
        out[..., m:, m:] = self.fiber
        out[..., m:, :m] = self.mixed
        out[..., :m, m:] = np.swapaxes(self.mixed, -1, -2)
        return out


def vertical_christoffels(sub: AdaptedSubmersion, p) -> VerticalChristoffels:
    """Fiber components of 𝐯 Γ^E(D_βγ) and 𝐯 Γ^E(D_βj)."""
    p = np.asarray(p, dtype=float)
    m, fs = sub.base_dim, sub.fiber_slice
    projected = np.einsum("...AC,...CBD->...ABD", sub.vertical_projector(p), sub.christoffels(p))
    fiber = projected[..., fs, fs, fs]
    mixed = projected[..., fs, fs, :m]
    fiber = 0.5 * (fiber + np.swapaxes(fiber, -1, -2))
    return VerticalChristoffels(fiber, mixed)


def project_second_order(sub: AdaptedSubmersion, L: SecondOrderVector) -> SecondOrderVector:
    """𝐯: τE → 𝔙E in the adapted chart.

    Drops the pure-base block a_ij and the base first-order components; keeps
    a_αβ, a_αj and the fiber first-order components.
    """
    m = sub.base_dim
    first = L.first.copy()
    first[..., :m] = 0.0
    second = L.second.copy()
    second[..., :m, :m] = 0.0
    return SecondOrderVector(first, second)


def apply_vertical_connection(sub: AdaptedSubmersion, p, L: SecondOrderVector) -> np.ndarray:
    """Γ^v(𝐯L): fiber vector a_α + Γ^{v,α}_{AB} a_AB."""
    vL = project_second_order(sub, L)
    gam = vertical_christoffels(sub, p).full()
    return vL.first[..., sub.fiber_slice] + np.einsum("...aAB,...AB->...a", gam, vL.second)


def horizontal_frame(sub: AdaptedSubmersion, p) -> np.ndarray:
    """Columns H(∂_j) = (I - P_v) ∂_j, shape ``[..., m+k, m]``."""
    p = np.asarray(p, dtype=float)
    n = sub.total_dim
    h = np.eye(n) - sub.vertical_projector(p)
    return h[..., :, : sub.base_dim]


def affine_submersion_defect(sub: AdaptedSubmersion, p, X, Y, h: float = DEFAULT_FD_STEP):
    """|𝐡∇^E_{H(X)}H(Y) - H(∇^M_X Y)| for constant-coefficient base vectors X, Y.

    Derivative terms of Y cancel between the two sides, so it suffices to
    compare X^i Y^j (𝐡∇_{H_i}H_j - Γ^k_{ij} H_k).
    """
    p = np.asarray(p, dtype=float)
    H = horizontal_frame(sub, p)
    dH = partial_derivatives(lambda q: horizontal_frame(sub, q), p, h)  # [..., A, C, j]
    gamE = sub.christoffels(p)
    # ∇_{H_i} H_j = H_i^A (∂_A H_j^C + H_j^B Γ^C_{AB})
    nabla = (np.einsum("...Ai,...ACj->...Cij", H, dH)
             + np.einsum("...Ai,...Bj,...CAB->...Cij", H, H, gamE, optimize=True))
    hproj = np.eye(sub.total_dim) - sub.vertical_projector(p)
    lhs = np.einsum("...DC,...Cij->...Dij", hproj, nabla)
    gamM = sub.base.christoffels(sub.project(p))
    rhs = np.einsum("...Dk,...kij->...Dij", H, gamM)
    diff = np.einsum("...Dij,...i,...j->...D", lhs - rhs, np.asarray(X), np.asarray(Y), optimize=True)
    return np.max(np.abs(diff), axis=-1)


def validate_affine_submersion(sub: AdaptedSubmersion, samples: int = 100, tol: float = 1e-5,
                               seed: int = 0) -> tuple[bool, float]:
    """Sample the affine-submersion identity; returns (holds, max defect)."""
    rng = np.random.default_rng(seed)
    p = sub.random_points(rng, samples)
    X = rng.normal(size=(samples, sub.base_dim))
    Y = rng.normal(size=(samples, sub.base_dim))
    defect = float(np.max(affine_submersion_defect(sub, p, X, Y)))
    return defect <= tol, defect


def product_submersion(base: ChartedManifold, fiber: ChartedManifold, name: str = "") -> AdaptedSubmersion:
    """E = M × F with the product Levi-Civita connection and metric-orthogonal splitting."""
    m, k = base.dim, fiber.dim

    def christoffel(p):
        out = np.zeros(np.shape(p)[:-1] + (m + k,) * 3)
        out[..., :m, :m, :m] = base.christoffels(p[..., :m])
        out[..., m:, m:, m:] = fiber.christoffels(p[..., m:])
        return out

    def guard(p):
        return fiber.inside(p[..., m:])

    return AdaptedSubmersion(base, k, christoffel, coordinate_vertical_projector(m, k),
                             guard=guard, name=name or f"{base.name}x{fiber.name}",
                             fiber_periods=tuple(fiber.periods))


class VerticalForm:
    """θ = θ_α(x, v) dv^α, stored as adapted-chart fiber coefficients.

    ``derivative`` may supply ∂_R θ_α as ``[..., R, α]`` over all total
    indices; otherwise central differences with step ``h`` are used.
    """

    def __init__(self, coeffs: Field, derivative: Optional[Field] = None,
                 h: float = DEFAULT_FD_STEP, name: str = ""):
        self.coeffs = coeffs
        self._derivative = derivative
        self.h = h
        self.name = name

    def __call__(self, p) -> np.ndarray:
        return self.coeffs(np.asarray(p, dtype=float))

    def derivative(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self._derivative is not None:
            return self._derivative(p)
        return partial_derivatives(self.coeffs, p, self.h)

    def __repr__(self):
        return f"VerticalForm({self.name or self.coeffs!r})"

    @classmethod
    def constant(cls, coeffs, total_dim: int, name: str = "") -> "VerticalForm":
        c = np.asarray(coeffs, dtype=float)

        def fn(p):
            return np.broadcast_to(c, np.shape(p)[:-1] + c.shape).copy()

        def deriv(p):
            return np.zeros(np.shape(p)[:-1] + (total_dim,) + c.shape)

        return cls(fn, deriv, name=name or f"const{c.tolist()}")

    @classmethod
    def basis(cls, alpha: int, fiber_dim: int, total_dim: int) -> "VerticalForm":
        """dv^α."""
        return cls.constant(np.eye(fiber_dim)[alpha], total_dim, name=f"dv{alpha + 1}")

    def scaled(self, a: float, other: "VerticalForm" = None, b: float = 0.0) -> "VerticalForm":
        """a·θ (+ b·other)."""
        if other is None:
            return VerticalForm(lambda p: a * self(p), lambda p: a * self.derivative(p), self.h)
        return VerticalForm(lambda p: a * self(p) + b * other(p),
                            lambda p: a * self.derivative(p) + b * other.derivative(p), self.h)
