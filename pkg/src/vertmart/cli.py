"""Config-driven experiment runner.

    vertmart run <config.toml> [--jobs N] [--out DIR] [--seed OVERRIDE]
    vertmart list

A run writes ``<prefix>.csv`` (one row per path and quantity) and
``<prefix>.json`` (summary) and exits with 0 when every verdict passes,
2 when a verdict fails and 1 on configuration or sampling errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import tomli

from . import __version__, corpus
from .bundles import ProductPrincipalBundle, TangentBundleGeometry, principal_split_test, \
    tm_vertical_martingale_criterion
from .geometry import GeometryError
from .integrals import conversion_residual
from .maps import geometric_ito_residual, image_path, is_harmonic_section, \
    stochastic_harmonicity_test, stratonovich_transfer_residual, tension_field
from .martingale import InsufficientSampleError, MartingaleReport, brownian_check, \
    martingale_test, mean_and_se
from .paths import Ensemble, TimeGrid, simulate_bm_ensemble, simulate_sde_ensemble

log = logging.getLogger("vertmart")

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    geometry: Optional[str] = None
    bundle: Optional[str] = None
    section: dict = field(default_factory=dict)
    form: dict = field(default_factory=dict)
    bilinear: dict = field(default_factory=dict)
    start: Optional[list] = None
    grid: TimeGrid = field(default_factory=lambda: TimeGrid(0.0, 1e-3, 1000))
    dt_levels: list = field(default_factory=list)
    n_paths: int = 500
    master_seed: int = 0
    tolerances: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    out_dir: Path = Path(".")
    prefix: str = ""
    jobs: int = 1

    @property
    def z_crit(self) -> float:
        return float(self.tolerances.get("z_crit", 3.0))

    @property
    def partitions(self) -> int:
        return int(self.tolerances.get("partitions", 4))

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path = Path(".")) -> "ExperimentConfig":
        raw = dict(raw)
        try:
            experiment = raw.pop("experiment")
        except KeyError:
            raise ConfigError("config has no 'experiment' key") from None
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {experiment!r}")
        g = raw.pop("grid", {})
        try:
            grid = TimeGrid(float(g.get("t0", 0.0)), float(g.get("dt", 1e-3)),
                            int(g.get("n_steps", 1000)))
        except ValueError as exc:
            raise ConfigError(f"bad grid: {exc}") from None
        out = raw.pop("output", {})
        cfg = cls(
            experiment=experiment,
            geometry=raw.pop("geometry", None),
            bundle=raw.pop("bundle", None),
            section=_named(raw.pop("section", {})),
            form=_named(raw.pop("form", {})),
            bilinear=_named(raw.pop("bilinear", {})),
            start=raw.pop("start", None),
            grid=grid,
            dt_levels=[float(d) for d in raw.pop("dt_levels", [])],
            n_paths=int(raw.pop("n_paths", 500)),
            master_seed=int(raw.pop("master_seed", 0)),
            tolerances=dict(raw.pop("tolerances", {})),
            params=dict(raw.pop("params", {})),
            out_dir=base_dir / out.get("dir", "."),
            prefix=out.get("prefix", experiment),
        )
        if raw:
            raise ConfigError(f"unrecognised config keys: {', '.join(sorted(raw))}")
        if cfg.geometry is not None and cfg.geometry not in corpus.GEOMETRIES:
            raise ConfigError(f"unknown geometry {cfg.geometry!r}")
        if cfg.bundle is not None and cfg.bundle not in corpus.BUNDLES:
            raise ConfigError(f"unknown bundle {cfg.bundle!r}")
        if cfg.section and cfg.section["name"] not in corpus.SECTIONS:
            raise ConfigError(f"unknown section {cfg.section['name']!r}")
        if cfg.form and cfg.form["name"] not in corpus.FORMS:
            raise ConfigError(f"unknown form {cfg.form['name']!r}")
        if cfg.n_paths < 1:
            raise ConfigError("n_paths must be positive")
        return cfg


def _named(entry) -> dict:
    if isinstance(entry, str):
        return {"name": entry}
    entry = dict(entry)
    if entry and "name" not in entry:
        raise ConfigError(f"named entry without 'name': {entry}")
    return entry


def load_config(path, seed: Optional[int] = None, out_dir: Optional[str] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    cfg = ExperimentConfig.from_dict(raw, base_dir=path.parent)
    if seed is not None:
        cfg.master_seed = seed
    if out_dir is not None:
        cfg.out_dir = Path(out_dir)
    return cfg


@dataclass
class RunSummary:
    experiment: str
    estimates: list
    verdict: str
    truncation_fraction: float
    seed: int
    rows: list = field(default_factory=list)
    details: dict = field(default_factory=dict)
    wall_time: float = 0.0
    row_key: str = "path_id"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def as_json(self, timestamp: str) -> dict:
        return {
            "experiment": self.experiment,
            "estimates": self.estimates,
            "verdict": self.verdict,
            "truncation_fraction": self.truncation_fraction,
            "seed": self.seed,
            "version": __version__,
            "details": self.details,
            "timestamp": {"utc": timestamp, "wall_time_s": self.wall_time},
        }


def _estimate(name: str, mean: float, se: float) -> dict:
    z = mean / se if se > 0 else (0.0 if mean == 0 else float(np.copysign(np.inf, mean)))
    return {"name": name, "mean": float(mean), "se": float(se), "z": float(z)}


def _report_estimate(r: MartingaleReport) -> dict:
    out = _estimate(r.name, r.estimate, r.std_error)
    out["max_abs_z"] = r.max_abs_z
    return out


def _checkpoint_rows(reports) -> list:
    return [(t, r.name, m) for r in reports for t, m in r.checkpoints]


def _path_rows(quantity: str, values, alive=None, n_steps=None) -> list:
    rows = []
    for i, v in enumerate(np.asarray(values, dtype=float)):
        if alive is not None and alive[i] < n_steps:
            continue
        rows.append((i, quantity, float(v)))
    return rows


# experiment helpers

def _start(cfg: ExperimentConfig, man) -> np.ndarray:
    if cfg.start is not None:
        x0 = np.asarray(cfg.start, dtype=float)
    elif man.name == "half-plane":
        x0 = np.array([0.0, 1.0])
    else:
        x0 = np.full(man.dim, 0.0)
        x0[0] = np.pi / 2
    if x0.shape != (man.dim,):
        raise ConfigError(f"start must have {man.dim} coordinates")
    return x0


def _tm_bundle(cfg: ExperimentConfig) -> TangentBundleGeometry:
    if cfg.bundle is None:
        raise ConfigError(f"{cfg.experiment} needs a 'bundle'")
    b = corpus.bundle(cfg.bundle)
    if not isinstance(b, TangentBundleGeometry):
        raise ConfigError(f"{cfg.experiment} needs a tangent-bundle corpus entry, got {cfg.bundle!r}")
    return b


def _section(cfg: ExperimentConfig, default: str = "zero"):
    entry = dict(cfg.section or {"name": default})
    name = entry.pop("name")
    try:
        return corpus.tm_section(name, **entry)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for section {name!r}: {exc}") from None


def _form(cfg: ExperimentConfig, sub, default: str = "basis"):
    entry = dict(cfg.form or {"name": default})
    name = entry.pop("name")
    try:
        return corpus.vertical_form(name, sub, **entry)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for form {name!r}: {exc}") from None


def _random_bilinear(dim: int, seed: int) -> Callable:
    """b(x) = A + sin(x¹)B + cos(x^d)C with random symmetric A, B, C."""
    rng = np.random.default_rng(seed)
    A, B, C = (0.5 * (M + M.T) for M in rng.normal(size=(3, dim, dim)))

    def b(x):
        s = np.sin(x[..., 0])[..., None, None]
        c = np.cos(x[..., -1])[..., None, None]
        return A + s * B + c * C

    return b


def _levels(cfg: ExperimentConfig) -> list[TimeGrid]:
    if not cfg.dt_levels:
        return [cfg.grid]
    horizon = cfg.grid.horizon
    return [TimeGrid.until(horizon, dt, cfg.grid.t0) for dt in cfg.dt_levels]


def _residual_study(cfg: ExperimentConfig, residual: Callable, label: str) -> RunSummary:
    """Mean |residual(t)| per dt level, with the ratio of successive levels."""
    tb = _tm_bundle(cfg)
    sigma = _section(cfg, "sin-field")
    x0 = _start(cfg, tb.base)
    tol = float(cfg.tolerances.get("residual", 5e-2))
    lo, hi = cfg.tolerances.get("ratio", [1.5, 3.0])
    estimates, rows, means = [], [], []
    trunc = 0.0
    for grid in _levels(cfg):
        B = simulate_bm_ensemble(tb.base, x0, grid, cfg.n_paths, cfg.master_seed, cfg.jobs)
        res = residual(tb, sigma, B)
        ok = np.asarray(res.alive_until) >= grid.n_steps
        trunc = max(trunc, 1.0 - ok.mean())
        if ok.sum() < 2:
            raise InsufficientSampleError("fewer than two paths stayed in the chart")
        absval = np.abs(res.terminal[ok])
        m, se = mean_and_se(absval)
        means.append(m)
        q = f"abs_{label}[dt={grid.dt:g}]"
        estimates.append(_estimate(q, m, se))
        rows += _path_rows(q, np.abs(res.terminal), res.alive_until, grid.n_steps)
    ratios = [a / b if b > 0 else float("inf") for a, b in zip(means[:-1], means[1:])]
    small = means[-1] <= tol
    ratio_ok = all(lo <= r <= hi for r in ratios)
    verdict = "pass" if small and ratio_ok else "fail"
    details = {"mean_abs_residual": means, "ratios": ratios, "tolerance": tol,
               "ratio_range": [lo, hi], "residual_ok": small, "ratio_ok": ratio_ok}
    return RunSummary(cfg.experiment, estimates, verdict, trunc, cfg.master_seed, rows, details)


# experiments

def run_brownian_check(cfg: ExperimentConfig) -> RunSummary:
    if cfg.geometry is None:
        raise ConfigError("brownian-check needs a 'geometry'")
    man = corpus.geometry(cfg.geometry)
    entry = cfg.bilinear or {"name": "metric"}
    if entry["name"] == "metric":
        b = man.metric
    elif entry["name"] == "random":
        b = _random_bilinear(man.dim, int(entry.get("seed", 0)))
    else:
        raise ConfigError(f"unknown bilinear {entry['name']!r}")
    B = simulate_bm_ensemble(man, _start(cfg, man), cfg.grid, cfg.n_paths, cfg.master_seed, cfg.jobs)
    res = brownian_check(B, man, b)
    report = martingale_test(res, cfg.z_crit, cfg.partitions, name=f"trace_residual[{entry['name']}]")
    rows = _path_rows(report.name, res.terminal, res.alive_until, cfg.grid.n_steps)
    return RunSummary(cfg.experiment, [_report_estimate(report)],
                      "pass" if report.passed else "fail", report.truncation_fraction,
                      cfg.master_seed, rows, {"reports": [report.as_dict()]})


def run_conversion(cfg: ExperimentConfig) -> RunSummary:
    def residual(tb, sigma, B):
        theta = _form(cfg, tb.sub, "linear")
        return conversion_residual(theta, tb.sub, image_path(sigma, tb.sub, B))
    return _residual_study(cfg, residual, "conversion_residual")


def run_geometric_ito(cfg: ExperimentConfig) -> RunSummary:
    def residual(tb, sigma, B):
        theta = _form(cfg, tb.sub, "basis")
        return geometric_ito_residual(sigma, theta, B, tb.sub, tb.base)
    return _residual_study(cfg, residual, "geometric_ito_residual")


def run_transfer(cfg: ExperimentConfig) -> RunSummary:
    def residual(tb, sigma, B):
        theta = _form(cfg, tb.sub, "basis")
        return stratonovich_transfer_residual(sigma, theta, B, tb.sub)
    return _residual_study(cfg, residual, "transfer_residual")


def run_harmonicity(cfg: ExperimentConfig) -> RunSummary:
    tb = _tm_bundle(cfg)
    sigma = _section(cfg, "zero")
    res = stochastic_harmonicity_test(sigma, tb.sub, tb.base, _start(cfg, tb.base), cfg.grid,
                                      cfg.n_paths, cfg.master_seed, cfg.z_crit, cfg.partitions,
                                      cfg.jobs)
    harmonic, worst = is_harmonic_section(sigma, tb.sub, tb.base,
                                          tol=float(cfg.tolerances.get("tension", 1e-6)))
    estimates = [_report_estimate(r) for r in res.reports]
    estimates += [_estimate(f"half_tension_integral{a + 1}", m, s)
                  for a, (m, s) in enumerate(zip(res.predicted_drift, res.predicted_se))]
    trunc = res.reports[0].truncation_fraction
    details = {"reports": [r.as_dict() for r in res.reports],
               "matching": [r.as_dict() for r in res.matching],
               "deterministic_harmonic": harmonic, "max_tension": worst,
               "agrees_with_deterministic": res.passed == harmonic}
    return RunSummary(cfg.experiment, estimates, "pass" if res.passed else "fail", trunc,
                      cfg.master_seed, _checkpoint_rows(res.reports + res.matching), details,
                      row_key="checkpoint_t")


def _fiber_bm(tb: TangentBundleGeometry, x0, cfg: ExperimentConfig) -> Ensemble:
    m = tb.base.dim
    diffusion = np.zeros((2 * m, m))
    diffusion[m:] = np.eye(m)
    p0 = np.concatenate([x0, np.zeros(m)])
    return simulate_sde_ensemble(lambda x, t: np.zeros_like(x),
                                 lambda x, t: np.broadcast_to(diffusion, x.shape[:-1] + diffusion.shape),
                                 p0, cfg.grid, cfg.n_paths, cfg.master_seed, noise_dim=m,
                                 inside=tb.sub.inside, jobs=cfg.jobs)


def run_tm_criterion(cfg: ExperimentConfig) -> RunSummary:
    tb = _tm_bundle(cfg)
    x0 = _start(cfg, tb.base)
    process = cfg.params.get("process", "section")
    if process == "section":
        B = simulate_bm_ensemble(tb.base, x0, cfg.grid, cfg.n_paths, cfg.master_seed, cfg.jobs)
        X = image_path(_section(cfg, "zero"), tb.sub, B)
    elif process == "fiber-bm":
        X = _fiber_bm(tb, x0, cfg)
    else:
        raise ConfigError(f"unknown tm-criterion process {process!r}")
    res = tm_vertical_martingale_criterion(X, tb, z_crit=cfg.z_crit, partitions=cfg.partitions)
    estimates = [_report_estimate(r) for r in res.reports + res.drift_reports]
    details = {"reports": [r.as_dict() for r in res.reports],
               "drift_reports": [r.as_dict() for r in res.drift_reports],
               "base_is_martingale": res.base_is_martingale, "defect": res.defect}
    return RunSummary(cfg.experiment, estimates, "pass" if res.passed else "fail",
                      res.reports[0].truncation_fraction, cfg.master_seed,
                      _checkpoint_rows(res.reports + res.drift_reports), details,
                      row_key="checkpoint_t")


def run_principal_split(cfg: ExperimentConfig) -> RunSummary:
    name = cfg.bundle or "torus-x-circle"
    pb = corpus.bundle(name)
    if not isinstance(pb, ProductPrincipalBundle):
        raise ConfigError(f"principal-split needs a product bundle, got {name!r}")
    drift = float(cfg.params.get("group_drift", 0.0))
    sub = pb.sub
    n, m = sub.total_dim, sub.base_dim
    b = np.zeros(n)
    b[m:] = drift
    p0 = np.concatenate([_start(cfg, pb.base), np.zeros(sub.fiber_dim)])
    X = simulate_sde_ensemble(lambda x, t: np.broadcast_to(b, x.shape).copy(),
                              lambda x, t: np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)),
                              p0, cfg.grid, cfg.n_paths, cfg.master_seed,
                              inside=sub.inside, jobs=cfg.jobs)
    vertical, group = principal_split_test(pb, X, cfg.z_crit, cfg.partitions)
    v_ok = all(r.passed for r in vertical)
    g_ok = all(r.passed for r in group)
    estimates = [_report_estimate(r) for r in vertical + group]
    details = {"vertical_passed": v_ok, "group_passed": g_ok, "agree": v_ok == g_ok,
               "group_drift": drift}
    verdict = "pass" if v_ok and g_ok else "fail"
    return RunSummary(cfg.experiment, estimates, verdict, vertical[0].truncation_fraction,
                      cfg.master_seed, _checkpoint_rows(vertical + group), details,
                      row_key="checkpoint_t")


def run_tension_map(cfg: ExperimentConfig) -> RunSummary:
    tb = _tm_bundle(cfg)
    sigma = _section(cfg, "zero")
    projection = cfg.params.get("projection", "adapted")
    n = int(cfg.params.get("samples", cfg.n_paths))
    y = tb.base.random_points(np.random.default_rng(cfg.master_seed), n)
    tau = tension_field(sigma, tb.sub, tb.base, y, projection)
    tol = float(cfg.tolerances.get("tension", 1e-6))
    rows = []
    for i in range(n):
        for j in range(y.shape[-1]):
            rows.append((i, f"y{j + 1}", float(y[i, j])))
        for a in range(tau.shape[-1]):
            rows.append((i, f"tau{a + 1}", float(tau[i, a])))
    worst = float(np.max(np.linalg.norm(tau, axis=-1)))
    estimates = [_estimate(f"tau{a + 1}", *mean_and_se(tau[:, a])) for a in range(tau.shape[-1])]
    details = {"max_tension": worst, "tolerance": tol, "projection": projection}
    return RunSummary(cfg.experiment, estimates, "pass" if worst <= tol else "fail", 0.0,
                      cfg.master_seed, rows, details)


EXPERIMENTS: dict[str, Callable[[ExperimentConfig], RunSummary]] = {
    "brownian-check": run_brownian_check,
    "conversion": run_conversion,
    "geometric-ito": run_geometric_ito,
    "transfer": run_transfer,
    "harmonicity": run_harmonicity,
    "tm-criterion": run_tm_criterion,
    "principal-split": run_principal_split,
    "tension-map": run_tension_map,
}


def run(cfg: ExperimentConfig, jobs: int = 1) -> RunSummary:
    cfg.jobs = max(1, int(jobs))
    t0 = time.perf_counter()
    try:
        summary = EXPERIMENTS[cfg.experiment](cfg)
    except corpus.UnknownNameError as exc:
        raise ConfigError(str(exc.args[0])) from None
    summary.wall_time = time.perf_counter() - t0
    return summary


def write_outputs(cfg: ExperimentConfig, summary: RunSummary) -> tuple[Path, Path]:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = cfg.out_dir / f"{cfg.prefix}.csv"
    json_path = cfg.out_dir / f"{cfg.prefix}.json"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([summary.row_key, "quantity", "value"])
        for key, q, v in summary.rows:
            w.writerow([key, q, repr(v)])
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    with open(json_path, "w") as fh:
        json.dump(summary.as_json(stamp), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return csv_path, json_path


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def _setup_logging():
    level = os.environ.get("VERTMART_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


def _cmd_list(args) -> int:
    print("experiments:")
    for name in EXPERIMENTS:
        print(f"  {name}")
    for group, items in corpus.names().items():
        print(f"{group}:")
        for name in items:
            print(f"  {name}")
    return EXIT_PASS


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
        summary = run(cfg, jobs=args.jobs)
    except (ConfigError, InsufficientSampleError, GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    csv_path, json_path = write_outputs(cfg, summary)
    for e in summary.estimates:
        print(f"{e['name']}: mean={e['mean']:+.4g} se={e['se']:.3g} z={e['z']:+.2f}")
    print(f"verdict: {summary.verdict}  ({csv_path}, {json_path})")
    return EXIT_PASS if summary.passed else EXIT_FAIL


def main(argv=None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(prog="vertmart", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--out", default=None, help="output directory (overrides config)")
    p_run.add_argument("--seed", type=int, default=None, help="master seed override")
    p_run.set_defaults(func=_cmd_run)
    p_list = sub.add_parser("list", help="list corpus and experiment names")
    p_list.set_defaults(func=_cmd_list)
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
