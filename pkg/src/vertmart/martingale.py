"""Drift extraction and Monte-Carlo martingale verdicts."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import ChartedManifold
from .integrals import RealPath, _left, _outer, accumulate, integrate_quadratic
from .submersion import AdaptedSubmersion, VerticalForm, vertical_christoffels

MIN_PATHS = 100
MAX_TRUNCATION = 0.2


class InsufficientSampleError(RuntimeError):
    pass


@dataclass
class MartingaleReport:
    estimate: float
    std_error: float
    z_score: float
    interval_z: list = field(default_factory=list)
    z_crit: float = 3.0
    n_used: int = 0
    truncation_fraction: float = 0.0
    name: str = ""
    checkpoints: list = field(default_factory=list)  # (t, ensemble mean) at slice ends

    @property
    def max_abs_z(self) -> float:
        return float(max([abs(self.z_score)] + [abs(z) for z in self.interval_z]))

    @property
    def passed(self) -> bool:
        return self.max_abs_z <= self.z_crit

    @property
    def low_confidence(self) -> bool:
        return self.truncation_fraction >= MAX_TRUNCATION

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(passed=self.passed, max_abs_z=self.max_abs_z, low_confidence=self.low_confidence)
        return d

    def __str__(self):
        verdict = "pass" if self.passed else "FAIL"
        return (f"{self.name or 'martingale'}: mean={self.estimate:+.4g} se={self.std_error:.3g} "
                f"z={self.z_score:+.2f} max|z|={self.max_abs_z:.2f} -> {verdict}")


def _z(mean: float, se: float) -> float:
    if se > 0:
        return mean / se
    return 0.0 if mean == 0 else float(np.copysign(np.inf, mean))


def mean_and_se(samples: np.ndarray) -> tuple[float, float]:
    samples = np.asarray(samples, dtype=float)
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / np.sqrt(len(samples))) if len(samples) > 1 else 0.0
    return mean, se


def martingale_test(paths: RealPath, z_crit: float = 3.0, partitions: int = 4,
                    min_paths: int = MIN_PATHS, name: str = "",
                    truncation: str = "drop") -> MartingaleReport:
    """z-tests on the terminal value and on each of ``partitions`` equal time slices.

    Parameters
    ----------
    truncation : {"drop", "stop"}
        ``"drop"`` keeps only paths alive to the horizon. ``"stop"`` keeps every
        path frozen at its exit value, i.e. tests the stopped process, which
        avoids conditioning on survival. Either way the report records the
        exited fraction and flags low confidence at 20 % or more.
    """
    if truncation not in ("drop", "stop"):
        raise ValueError(f"unknown truncation mode {truncation!r}")
    values = np.atleast_2d(paths.values)
    n_steps = values.shape[-1] - 1
    alive = np.broadcast_to(np.asarray(paths.alive_until), values.shape[:-1])
    survived = alive >= n_steps
    if truncation == "drop":
        usable = values[survived]
    else:
        steps = np.arange(n_steps + 1)
        idx = np.minimum(steps, np.maximum(alive, 0)[..., None])
        usable = np.take_along_axis(values, idx, axis=-1).reshape(-1, n_steps + 1)
    if len(usable) < min_paths:
        raise InsufficientSampleError(
            f"{len(usable)} usable paths, at least {min_paths} required")
    mean, se = mean_and_se(usable[:, -1] - usable[:, 0])
    cuts = np.round(np.linspace(0, n_steps, partitions + 1)).astype(int)
    interval_z = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        m_i, se_i = mean_and_se(usable[:, b] - usable[:, a])
        interval_z.append(_z(m_i, se_i))
    times = paths.grid.times
    checkpoints = [(float(times[c]), float(np.mean(usable[:, c] - usable[:, 0]))) for c in cuts]
    return MartingaleReport(mean, se, _z(mean, se), interval_z, z_crit, len(usable),
                            1.0 - float(np.mean(survived)), name, checkpoints)


def drift_part(X, sub: AdaptedSubmersion) -> list[RealPath]:
    """M^α = X^α_t - X^α_0 + ½ Σ Γ^{v,α}_AB ΔX^A ΔX^B, one RealPath per fiber index.

    This is the vertical Itô integral of dv^α; X is a vertical martingale
    exactly when every M^α is a local martingale.
    """
    p = _left(X)
    gam = vertical_christoffels(sub, p).full()
    steps = X.increments[..., sub.fiber_slice] + 0.5 * np.einsum("...aAB,...AB->...a", gam, _outer(X))
    return [accumulate(steps[..., a], X) for a in range(sub.fiber_dim)]


def vertical_martingale_test(X, sub: AdaptedSubmersion, z_crit: float = 3.0,
                             partitions: int = 4, forms: Optional[list] = None) -> list[MartingaleReport]:
    """Martingale test of the drift parts, or of given vertical forms' Itô integrals."""
    if forms is None:
        parts = drift_part(X, sub)
        names = [f"M{a + 1}" for a in range(sub.fiber_dim)]
    else:
        from .integrals import vertical_ito_integral
        parts = [vertical_ito_integral(th, sub, X) for th in forms]
        names = [getattr(th, "name", "") or f"theta{i}" for i, th in enumerate(forms)]
    return [martingale_test(rp, z_crit, partitions, name=nm) for rp, nm in zip(parts, names)]


def brownian_check(X, man: ChartedManifold, b: Callable) -> RealPath:
    """∫b(dX, dX) - ∫ g^{ij} b_ij(X_s) ds; centred for genuine g-Brownian motion."""
    x = _left(X)
    trace = np.einsum("...ij,...ij->...", man.inverse_metric(x), b(x))
    return integrate_quadratic(b, X) - accumulate(trace * X.grid.dt, X)
