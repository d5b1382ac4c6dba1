import numpy as np

from vertmart.paths import TimeGrid, simulate_sde_ensemble


def ambient_bm(sub, p0, grid: TimeGrid, n_paths: int, seed: int, drift=None):
    """Coordinate Brownian motion on the total space, optionally with constant drift."""
    n = sub.total_dim
    b = np.zeros(n) if drift is None else np.asarray(drift, dtype=float)
    return simulate_sde_ensemble(lambda x, t: np.broadcast_to(b, x.shape).copy(),
                                 lambda x, t: np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)),
                                 np.asarray(p0, dtype=float), grid, n_paths, seed, inside=sub.inside)
