"""Charted Riemannian manifolds, Christoffel symbols and second-order vectors.

Every field evaluator in this package is batched: it accepts points of shape
``(..., dim)`` and returns arrays with the leading batch shape preserved.
Christoffel arrays are indexed ``gamma[..., k, i, j]`` for Γ^k_{ij}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_FD_STEP = 1e-5


class GeometryError(ValueError):
    """Base class for geometric precondition failures."""


class DegenerateMetricError(GeometryError):
    pass


class ChartBoundaryError(GeometryError):
    pass


Field = Callable[[np.ndarray], np.ndarray]


def _always_inside(x: np.ndarray) -> np.ndarray:
    return np.ones(np.shape(x)[:-1], dtype=bool)


@dataclass(frozen=True)
class SecondOrderVector:
    """L = a_ij D_ij + a_i D_i at a point."""

    first: np.ndarray
    second: np.ndarray

    def __post_init__(self):
        first = np.asarray(self.first, dtype=float)
        second = np.asarray(self.second, dtype=float)
        if second.shape != first.shape + first.shape[-1:]:
            raise GeometryError(
                f"second block shape {second.shape} does not match first {first.shape}")
        object.__setattr__(self, "first", first)
        object.__setattr__(self, "second", 0.5 * (second + np.swapaxes(second, -1, -2)))

    @property
    def dim(self) -> int:
        return self.first.shape[-1]

    @classmethod
    def zeros(cls, dim: int) -> "SecondOrderVector":
        return cls(np.zeros(dim), np.zeros((dim, dim)))


def square_operator(L: SecondOrderVector) -> np.ndarray:
    """Q(L): the symmetric a_ij block; first-order part is discarded."""
    return L.second.copy()


def pushforward_second_order(jacobian, hessian, L: SecondOrderVector) -> SecondOrderVector:
    """Push L forward through a map with jet (J, H) at the base point.

    ``jacobian`` has shape (n_out, n_in) and ``hessian`` (n_out, n_in, n_in).
    """
    J = np.asarray(jacobian, dtype=float)
    H = np.asarray(hessian, dtype=float)
    if J.ndim != 2 or J.shape[1] != L.dim or H.shape != (J.shape[0], L.dim, L.dim):
        raise GeometryError(
            f"jet shapes J{J.shape}, H{H.shape} incompatible with dim {L.dim}")
    second = J @ L.second @ J.T
    first = J @ L.first + np.einsum("aij,ij->a", H, L.second)
    return SecondOrderVector(first, second)


@dataclass(frozen=True)
class ChartedManifold:
    """A Riemannian manifold living in a single chart.

    Parameters
    ----------
    dim : int
    metric : callable
        Batched ``x -> g(x)`` returning ``(..., dim, dim)``.
    christoffel_fn : callable, optional
        Closed-form ``x -> Γ(x)`` of shape ``(..., dim, dim, dim)``. When
        omitted, symbols are obtained from the metric by central differences.
    periods : sequence of float or None
        Per-coordinate period; ``None`` entries are non-periodic.
    guard : callable, optional
        Batched chart-validity predicate.
    """

    dim: int
    metric: Field
    christoffel_fn: Optional[Field] = None
    inverse_metric_fn: Optional[Field] = None
    periods: Sequence[Optional[float]] = ()
    guard: Callable[[np.ndarray], np.ndarray] = _always_inside
    name: str = ""
    fd_step: float = DEFAULT_FD_STEP
    sample_box: Optional[tuple] = field(default=None, compare=False)
    christoffel_derivative_fn: Optional[Field] = None

    def __post_init__(self):
        if not self.periods:
            object.__setattr__(self, "periods", (None,) * self.dim)
        if len(self.periods) != self.dim:
            raise GeometryError("periods must have one entry per coordinate")

    def inverse_metric(self, x) -> np.ndarray:
        if self.inverse_metric_fn is not None:
            return self.inverse_metric_fn(np.asarray(x, dtype=float))
        return np.linalg.inv(self.metric(np.asarray(x, dtype=float)))

    def christoffels(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.christoffel_fn is not None:
            return self.christoffel_fn(x)
        return levi_civita(self.metric, x, self.fd_step, guard=self.guard)

    def inside(self, x) -> np.ndarray:
        return np.asarray(self.guard(np.asarray(x, dtype=float)), dtype=bool)

    def wrap(self, x) -> np.ndarray:
        """Map coordinates into the fundamental domain of periodic axes."""
        x = np.array(x, dtype=float, copy=True)
        for i, p in enumerate(self.periods):
            if p is not None:
                x[..., i] = np.mod(x[..., i], p)
        return x

    def displacement(self, x_from, x_to) -> np.ndarray:
        """Coordinate increment x_to - x_from with minimal-image periodic axes."""
        d = np.asarray(x_to, dtype=float) - np.asarray(x_from, dtype=float)
        for i, p in enumerate(self.periods):
            if p is not None:
                d[..., i] = d[..., i] - p * np.round(d[..., i] / p)
        return d

    def random_points(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Uniform samples from ``sample_box`` (defaults to [0.1, 1]^dim)."""
        lo, hi = self.sample_box if self.sample_box is not None else (
            np.full(self.dim, 0.1), np.ones(self.dim))
        return rng.uniform(lo, hi, size=(n, self.dim))


def _stencil(x: np.ndarray, h: float):
    """Points x ± h e_l, shaped (2, ..., dim(l), dim)."""
    dim = x.shape[-1]
    eye = np.eye(dim) * h
    xe = x[..., None, :]
    return xe + eye, xe - eye


def partial_derivatives(fn: Field, x, h: float = DEFAULT_FD_STEP, guard=None) -> np.ndarray:
    """Central differences of a batched field.

    Returns an array with the coordinate-derivative index appended *first*
    after the batch axes: ``out[..., l, *field_shape] = ∂_l fn(x)``.
    """
    x = np.asarray(x, dtype=float)
    plus, minus = _stencil(x, h)
    if guard is not None and not (np.all(guard(plus)) and np.all(guard(minus))):
        raise ChartBoundaryError("finite-difference stencil leaves the chart domain")
    return (fn(plus) - fn(minus)) / (2.0 * h)


def levi_civita(metric: Field, x, h: float = DEFAULT_FD_STEP, guard=None) -> np.ndarray:
    """Γ^k_{ij} = ½ g^{kl}(∂_i g_jl + ∂_j g_il - ∂_l g_ij) by central differences."""
    if h <= 0:
        raise GeometryError("finite-difference step must be positive")
    x = np.asarray(x, dtype=float)
    g = metric(x)
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise DegenerateMetricError("metric is not positive definite") from exc
    dg = partial_derivatives(metric, x, h, guard=guard)  # [..., l, i, j] = ∂_l g_ij
    ginv = np.linalg.inv(g)
    # lowered[..., l, i, j] = ½(∂_i g_jl + ∂_j g_il - ∂_l g_ij)
    d_i_gjl = np.einsum("...ijl->...lij", dg)
    d_j_gil = np.einsum("...jil->...lij", dg)
    lowered = 0.5 * (d_i_gjl + d_j_gil - dg)
    gamma = np.einsum("...kl,...lij->...kij", ginv, lowered)
    return 0.5 * (gamma + np.swapaxes(gamma, -1, -2))


def christoffel_derivatives(man: ChartedManifold, x, h: float = 1e-4) -> np.ndarray:
    """∂_a Γ^k_{ij}, returned as ``[..., a, k, i, j]``."""
    if man.christoffel_derivative_fn is not None:
        return man.christoffel_derivative_fn(np.asarray(x, dtype=float))
    return partial_derivatives(man.christoffels, x, h)


def riemann_tensor(man: ChartedManifold, x, h: float = 1e-4) -> np.ndarray:
    """R^l_{ijk} with R(∂_i, ∂_j)∂_k = R^l_{ijk} ∂_l.

    Convention R(X,Y)Z = ∇_X∇_Y Z - ∇_Y∇_X Z - ∇_[X,Y] Z, i.e.
    R^l_{ijk} = ∂_iΓ^l_{jk} - ∂_jΓ^l_{ik} + Γ^l_{im}Γ^m_{jk} - Γ^l_{jm}Γ^m_{ik}.
    Returned as ``[..., l, i, j, k]``.
    """
    x = np.asarray(x, dtype=float)
    gam = man.christoffels(x)
    dgam = christoffel_derivatives(man, x, h)  # [..., a, l, j, k]
    term1 = np.einsum("...iljk->...lijk", dgam)
    term2 = np.einsum("...jlik->...lijk", dgam)
    quad = np.einsum("...lim,...mjk->...lijk", gam, gam)
    return term1 - term2 + quad - np.swapaxes(quad, -3, -2)


def metric_compatibility_defect(man: ChartedManifold, x, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """max |∂_k g_ij - Γ^l_{ki} g_lj - Γ^l_{kj} g_il| per point."""
    x = np.asarray(x, dtype=float)
    g = man.metric(x)
    dg = partial_derivatives(man.metric, x, h)
    gam = man.christoffels(x)
    t1 = np.einsum("...lki,...lj->...kij", gam, g)
    t2 = np.einsum("...lkj,...il->...kij", gam, g)
    return np.max(np.abs(dg - t1 - t2), axis=(-3, -2, -1))


def brownian_drift(man: ChartedManifold, x) -> np.ndarray:
    """-½ g^{jk} Γ^i_{jk}: the Itô drift of g-Brownian motion in coordinates."""
    return -0.5 * np.einsum("...jk,...ijk->...i", man.inverse_metric(x), man.christoffels(x))


# --- corpus manifolds --------------------------------------------------------

def euclidean(dim: int = 2) -> ChartedManifold:
    def metric(x):
        return np.broadcast_to(np.eye(dim), np.shape(x)[:-1] + (dim, dim)).copy()

    def christoffel(x):
        return np.zeros(np.shape(x)[:-1] + (dim, dim, dim))

    def dchristoffel(x):
        return np.zeros(np.shape(x)[:-1] + (dim,) * 4)

    return ChartedManifold(dim, metric, christoffel, inverse_metric_fn=metric,
                           christoffel_derivative_fn=dchristoffel, name=f"euclidean-{dim}",
                           sample_box=(np.full(dim, -1.0), np.full(dim, 1.0)))


def flat_torus(dim: int = 2, period: float = 2 * np.pi) -> ChartedManifold:
    base = euclidean(dim)
    return ChartedManifold(dim, base.metric, base.christoffel_fn,
                           inverse_metric_fn=base.metric,
                           christoffel_derivative_fn=base.christoffel_derivative_fn,
                           periods=(period,) * dim, name="flat-torus",
                           sample_box=(np.zeros(dim), np.full(dim, period)))


def sphere_chart(eps: float = 0.05) -> ChartedManifold:
    """Unit sphere in (θ, φ); θ kept inside (eps, π - eps), φ periodic."""

    def metric(x):
        th = x[..., 0]
        g = np.zeros(np.shape(x)[:-1] + (2, 2))
        g[..., 0, 0] = 1.0
        g[..., 1, 1] = np.sin(th) ** 2
        return g

    def inverse(x):
        th = x[..., 0]
        g = np.zeros(np.shape(x)[:-1] + (2, 2))
        g[..., 0, 0] = 1.0
        g[..., 1, 1] = 1.0 / np.sin(th) ** 2
        return g

    def christoffel(x):
        th = x[..., 0]
        gam = np.zeros(np.shape(x)[:-1] + (2, 2, 2))
        gam[..., 0, 1, 1] = -np.sin(th) * np.cos(th)
        gam[..., 1, 0, 1] = gam[..., 1, 1, 0] = np.cos(th) / np.sin(th)
        return gam

    def dchristoffel(x):
        th = x[..., 0]
        out = np.zeros(np.shape(x)[:-1] + (2, 2, 2, 2))
        out[..., 0, 0, 1, 1] = -np.cos(2 * th)
        out[..., 0, 1, 0, 1] = out[..., 0, 1, 1, 0] = -1.0 / np.sin(th) ** 2
        return out

    def guard(x):
        th = x[..., 0]
        return (th > eps) & (th < np.pi - eps)

    return ChartedManifold(2, metric, christoffel, inverse_metric_fn=inverse,
                           christoffel_derivative_fn=dchristoffel,
                           periods=(None, 2 * np.pi), guard=guard, name="sphere",
                           sample_box=(np.array([0.3, 0.0]), np.array([np.pi - 0.3, 2 * np.pi])))


def hyperbolic_half_plane(y_min: float = 1e-3) -> ChartedManifold:
    def metric(x):
        y = x[..., 1]
        return np.eye(2) * (1.0 / y ** 2)[..., None, None]

    def inverse(x):
        y = x[..., 1]
        return np.eye(2) * (y ** 2)[..., None, None]

    def christoffel(x):
        y = x[..., 1]
        gam = np.zeros(np.shape(x)[:-1] + (2, 2, 2))
        gam[..., 0, 0, 1] = gam[..., 0, 1, 0] = -1.0 / y
        gam[..., 1, 0, 0] = 1.0 / y
        gam[..., 1, 1, 1] = -1.0 / y
        return gam

    def dchristoffel(x):
        y = x[..., 1]
        out = np.zeros(np.shape(x)[:-1] + (2, 2, 2, 2))
        out[..., 1, 0, 0, 1] = out[..., 1, 0, 1, 0] = 1.0 / y ** 2
        out[..., 1, 1, 0, 0] = -1.0 / y ** 2
        out[..., 1, 1, 1, 1] = 1.0 / y ** 2
        return out

    return ChartedManifold(2, metric, christoffel, inverse_metric_fn=inverse,
                           christoffel_derivative_fn=dchristoffel,
                           guard=lambda x: x[..., 1] > y_min, name="half-plane",
                           sample_box=(np.array([-1.0, 0.5]), np.array([1.0, 3.0])))
