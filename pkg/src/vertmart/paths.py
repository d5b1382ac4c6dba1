"""Discretized semimartingales: Euler–Maruyama paths and ensembles.

Path values are stored as ``(..., n_steps + 1, dim)`` arrays; a single
:class:`SamplePath` and a batched :class:`Ensemble` expose the same
``values`` / ``increments`` / ``alive_until`` attributes so the integral
routines accept either.

Each path draws its Gaussian increments from its own Philox stream keyed by
``(master_seed, path_index)``; the ensemble is therefore identical whatever
the number of workers used to produce it.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import ChartedManifold, DegenerateMetricError, GeometryError, brownian_drift

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeGrid:
    t0: float = 0.0
    dt: float = 1e-3
    n_steps: int = 1000

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @classmethod
    def until(cls, horizon: float, dt: float, t0: float = 0.0) -> "TimeGrid":
        return cls(t0, dt, int(round(horizon / dt)))


@dataclass(frozen=True)
class SamplePath:
    grid: TimeGrid
    values: np.ndarray
    increments: np.ndarray
    alive_until: int

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def survived(self) -> bool:
        return self.alive_until >= self.grid.n_steps


@dataclass(frozen=True)
class Ensemble:
    """A batch of paths sharing a grid; ``values`` is ``(n_paths, n_steps + 1, dim)``."""

    grid: TimeGrid
    values: np.ndarray
    increments: np.ndarray
    alive_until: np.ndarray
    master_seed: Optional[int] = None

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def survived(self) -> np.ndarray:
        return self.alive_until >= self.grid.n_steps

    @property
    def truncation_fraction(self) -> float:
        return float(1.0 - np.mean(self.survived))

    @property
    def paths(self) -> list[SamplePath]:
        return [self[i] for i in range(self.n_paths)]

    def __getitem__(self, i: int) -> SamplePath:
        return SamplePath(self.grid, self.values[i], self.increments[i], int(self.alive_until[i]))

    @classmethod
    def stack(cls, paths: Sequence[SamplePath], master_seed=None) -> "Ensemble":
        return cls(paths[0].grid,
                   np.stack([p.values for p in paths]),
                   np.stack([p.increments for p in paths]),
                   np.array([p.alive_until for p in paths]),
                   master_seed)


def path_stream(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based generator for path ``index`` of an ensemble."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([master_seed, index])))


def gaussian_increments(master_seed: int, indices, n_steps: int, dim: int) -> np.ndarray:
    return np.stack([path_stream(master_seed, int(i)).standard_normal((n_steps, dim))
                     for i in indices])


def _euler(x0, grid, noise, drift, diffusion, wrap, inside):
    """Vectorized Euler–Maruyama over the leading batch axis of ``x0``."""
    n_paths, dim = x0.shape
    values = np.empty((n_paths, grid.n_steps + 1, dim))
    increments = np.zeros((n_paths, grid.n_steps, dim))
    alive_until = np.full(n_paths, grid.n_steps)
    alive = np.ones(n_paths, dtype=bool)
    sqdt = np.sqrt(grid.dt)
    x = x0.copy()
    values[:, 0] = x
    for n in range(grid.n_steps):
        t = grid.t0 + n * grid.dt
        step = drift(x, t) * grid.dt + np.einsum("...ir,...r->...i", diffusion(x, t), noise[:, n] * sqdt)
        step[~alive] = 0.0
        x_new = wrap(x + step)
        exited = alive & ~inside(x_new)
        if np.any(exited):
            alive_until[exited] = n
            alive &= ~exited
            step[exited] = 0.0
            x_new[exited] = x[exited]
        if not np.all(np.isfinite(x_new)):
            raise FloatingPointError("non-finite value in Euler step")
        increments[:, n] = step
        values[:, n + 1] = x_new
        x = x_new
    return values, increments, alive_until


def _run_chunks(fn, n_paths: int, jobs: int):
    """Evaluate ``fn(indices)`` over contiguous chunks and concatenate by index."""
    jobs = max(1, int(jobs))
    chunks = [c for c in np.array_split(np.arange(n_paths), jobs) if len(c)]
    if jobs == 1 or len(chunks) == 1:
        parts = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(fn, chunks))
    return tuple(np.concatenate(arrs) for arrs in zip(*parts))


def _broadcast_start(x0, n_paths, dim):
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (n_paths, dim))
    if x0.shape != (n_paths, dim):
        raise ValueError(f"start points have shape {x0.shape}, expected ({n_paths}, {dim})")
    return x0


def bm_coefficients(man: ChartedManifold):
    """Drift -½ g^{jk}Γ^i_{jk} and diffusion chol(g⁻¹) as batched (x, t) fields."""

    def drift(x, t):
        return brownian_drift(man, x)

    def diffusion(x, t):
        try:
            return np.linalg.cholesky(man.inverse_metric(x))
        except np.linalg.LinAlgError as exc:
            raise DegenerateMetricError("inverse metric is not positive definite") from exc

    return drift, diffusion


def simulate_bm_ensemble(man: ChartedManifold, x0, grid: TimeGrid, n_paths: int,
                         master_seed: int, jobs: int = 1) -> Ensemble:
    """g-Brownian motion from ``x0`` (one point, or one per path)."""
    x0 = _broadcast_start(x0, n_paths, man.dim)
    if not np.all(man.inside(x0)):
        raise GeometryError("start point outside the chart domain")
    drift, diffusion = bm_coefficients(man)

    def chunk(idx):
        noise = gaussian_increments(master_seed, idx, grid.n_steps, man.dim)
        return _euler(man.wrap(x0[idx]), grid, noise, drift, diffusion, man.wrap, man.inside)

    values, increments, alive = _run_chunks(chunk, n_paths, jobs)
    ens = Ensemble(grid, values, increments, alive, master_seed)
    if ens.truncation_fraction > 0:
        log.info("%s: %.1f%% of paths left the chart", man.name, 100 * ens.truncation_fraction)
    return ens


def simulate_bm(man: ChartedManifold, x0, grid: TimeGrid, seed: int) -> SamplePath:
    return simulate_bm_ensemble(man, np.asarray(x0, dtype=float)[None], grid, 1, seed)[0]


def simulate_sde_ensemble(drift: Callable, diffusion: Callable, x0, grid: TimeGrid, n_paths: int,
                          master_seed: int, noise_dim: Optional[int] = None,
                          inside: Optional[Callable] = None, wrap: Optional[Callable] = None,
                          jobs: int = 1) -> Ensemble:
    """Euler–Maruyama for dX = b(X, t)dt + s(X, t)dW.

    ``drift(x, t)`` returns ``(..., d)`` and ``diffusion(x, t)`` returns
    ``(..., d, r)`` with ``r = noise_dim`` (defaults to d).
    """
    x0 = np.asarray(x0, dtype=float)
    dim = x0.shape[-1]
    x0 = _broadcast_start(x0, n_paths, dim)
    r = dim if noise_dim is None else noise_dim
    inside = inside or (lambda x: np.ones(x.shape[:-1], dtype=bool))
    wrap = wrap or (lambda x: x)

    def chunk(idx):
        noise = gaussian_increments(master_seed, idx, grid.n_steps, r)
        return _euler(x0[idx].copy(), grid, noise, drift, diffusion, wrap, inside)

    values, increments, alive = _run_chunks(chunk, n_paths, jobs)
    return Ensemble(grid, values, increments, alive, master_seed)


def simulate_sde(drift, diffusion, x0, grid: TimeGrid, seed: int, noise_dim=None, **kw) -> SamplePath:
    return simulate_sde_ensemble(drift, diffusion, np.asarray(x0, dtype=float)[None], grid, 1,
                                 seed, noise_dim=noise_dim, **kw)[0]


def constant_field(value) -> Callable:
    value = np.asarray(value, dtype=float)

    def field(x, t):
        return np.broadcast_to(value, np.shape(x)[:-1] + value.shape).copy()

    return field


def from_values(values, grid: TimeGrid, displacement: Optional[Callable] = None,
                inside: Optional[Callable] = None):
    """Build a path or ensemble from sampled coordinates.

    Increments use ``displacement`` (periodic-aware differences) when given.
    Points failing ``inside`` truncate the path at the previous index.
    """
    values = np.asarray(values, dtype=float)
    if displacement is None:
        increments = np.diff(values, axis=-2)
    else:
        increments = displacement(values[..., :-1, :], values[..., 1:, :])
    n = grid.n_steps
    if inside is None:
        alive = np.full(values.shape[:-2], n)
    else:
        ok = np.asarray(inside(values), dtype=bool)
        first_bad = np.where(ok.all(axis=-1), n + 1, np.argmin(ok, axis=-1))
        alive = np.minimum(first_bad - 1, n)
        steps = np.arange(n)
        dead = steps >= alive[..., None]
        increments = np.where(dead[..., None], 0.0, increments)
        values = values.copy()
        idx = np.minimum(np.arange(n + 1), np.maximum(alive, 0)[..., None])
        values = np.take_along_axis(values, idx[..., None], axis=-2)
    if values.ndim == 2:
        return SamplePath(grid, values, increments, int(alive))
    return Ensemble(grid, values, increments, np.asarray(alive))


def map_path(X, phi: Callable, displacement: Optional[Callable] = None,
             inside: Optional[Callable] = None):
    """Image path φ(X); truncated where either X died or φ(X) leaves ``inside``."""
    values = phi(X.values)
    out = from_values(values, X.grid, displacement, inside)
    alive = np.minimum(np.asarray(out.alive_until), np.asarray(X.alive_until))
    if np.any(alive < np.asarray(out.alive_until)):
        steps = np.arange(X.grid.n_steps)
        dead = steps >= np.asarray(alive)[..., None]
        increments = np.where(dead[..., None], 0.0, out.increments)
    else:
        increments = out.increments
    if isinstance(out, SamplePath):
        return SamplePath(X.grid, out.values, increments, int(alive))
    return Ensemble(X.grid, out.values, increments, np.asarray(alive), getattr(X, "master_seed", None))


@dataclass(frozen=True)
class QuadraticCovariation:
    cumulative: np.ndarray  # (..., n_steps + 1, dim, dim)

    def at(self, n: int) -> np.ndarray:
        return self.cumulative[..., n, :, :]


def quadratic_covariation(path) -> QuadraticCovariation:
    """Running Σ_{s<n} ΔX^A_s ΔX^B_s (realized covariation)."""
    inc = path.increments
    outer = np.einsum("...ni,...nj->...nij", inc, inc)
    zero = np.zeros(outer.shape[:-3] + (1,) + outer.shape[-2:])
    return QuadraticCovariation(np.concatenate([zero, np.cumsum(outer, axis=-3)], axis=-3))
