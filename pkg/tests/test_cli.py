import json
import subprocess
import sys
from pathlib import Path

import pytest

from vertmart import corpus
from vertmart.cli import ConfigError, ExperimentConfig, load_config, main, run

CONFIGS = Path(__file__).parent / "configs"


def run_cli(tmp_path, name, *extra):
    return main(["run", str(CONFIGS / name), "--out", str(tmp_path), *extra])


@pytest.mark.parametrize("name,code", [
    ("brownian_torus.toml", 0),
    ("harmonic_constant.toml", 0),
    ("harmonic_sin.toml", 2),
    ("geometric_ito_levels.toml", 0),
    ("unknown_bundle.toml", 1),
    ("too_few_paths.toml", 1),
])
def test_golden_exit_codes(tmp_path, name, code):
    assert run_cli(tmp_path, name) == code


def test_outputs_schema(tmp_path):
    run_cli(tmp_path, "brownian_torus.toml")
    summary = json.loads((tmp_path / "brownian_torus.json").read_text())
    assert set(summary) == {"experiment", "estimates", "verdict", "truncation_fraction", "seed",
                            "version", "details", "timestamp"}
    assert summary["verdict"] == "pass" and summary["seed"] == 11
    header = (tmp_path / "brownian_torus.csv").read_text().splitlines()[0]
    assert header == "path_id,quantity,value"


def test_checkpoint_rows(tmp_path):
    run_cli(tmp_path, "harmonic_constant.toml")
    lines = (tmp_path / "harmonic_constant.csv").read_text().splitlines()
    assert lines[0] == "checkpoint_t,quantity,value" and len(lines) > 1


def _without_timestamp(path):
    data = json.loads(path.read_text())
    data.pop("timestamp")
    return data


def test_reproducible_modulo_timestamp(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", str(CONFIGS / "harmonic_sin.toml"), "--out", str(a)])
    main(["run", str(CONFIGS / "harmonic_sin.toml"), "--out", str(b)])
    assert (a / "harmonic_sin.csv").read_bytes() == (b / "harmonic_sin.csv").read_bytes()
    assert _without_timestamp(a / "harmonic_sin.json") == _without_timestamp(b / "harmonic_sin.json")


def test_jobs_do_not_change_results(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", str(CONFIGS / "brownian_torus.toml"), "--out", str(a), "--jobs", "1"])
    main(["run", str(CONFIGS / "brownian_torus.toml"), "--out", str(b), "--jobs", "3"])
    assert (a / "brownian_torus.csv").read_bytes() == (b / "brownian_torus.csv").read_bytes()


def test_seed_override(tmp_path):
    run_cli(tmp_path, "brownian_torus.toml", "--seed", "123")
    assert json.loads((tmp_path / "brownian_torus.json").read_text())["seed"] == 123


def test_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    for name in ("tm-criterion", "sphere-tm-sasaki", "sin-field", "trig"):
        assert name in out


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"experiment": "harmonicity", "bundel": "x"})

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"experiment": "nope"})

    def test_bad_grid(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"experiment": "harmonicity", "grid": {"dt": -1.0}})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.toml")

    def test_bad_section_parameter(self):
        cfg = ExperimentConfig.from_dict({"experiment": "harmonicity", "bundle": "flat-torus-tm-complete",
                                          "section": {"name": "sin-field", "frequency": 2}, "n_paths": 100})
        with pytest.raises(ConfigError):
            run(cfg)

    def test_wrong_bundle_kind(self):
        cfg = ExperimentConfig.from_dict({"experiment": "harmonicity", "bundle": "torus-x-circle"})
        with pytest.raises(ConfigError):
            run(cfg)

    def test_form_index_outside_fiber(self):
        cfg = ExperimentConfig.from_dict({"experiment": "geometric-ito", "bundle": "flat-torus-tm-complete",
                                          "form": {"name": "basis", "index": 5}, "n_paths": 100,
                                          "grid": {"dt": 1e-2, "n_steps": 10}})
        with pytest.raises(ConfigError):
            run(cfg)


@pytest.mark.parametrize("experiment,extra", [
    ("tm-criterion", {"bundle": "flat-torus-tm-complete", "params": {"process": "fiber-bm"}}),
    ("principal-split", {"params": {"group_drift": 0.0}}),
    ("tension-map", {"bundle": "sphere-tm-sasaki", "section": "zero", "params": {"samples": 20}}),
    ("transfer", {"bundle": "flat-torus-tm-complete"}),
])
def test_passing_experiments(experiment, extra):
    raw = {"experiment": experiment, "n_paths": 200, "master_seed": 3,
           "grid": {"dt": 1e-2, "n_steps": 100}, **extra}
    assert run(ExperimentConfig.from_dict(raw)).verdict == "pass"


def test_principal_split_with_drift():
    cfg = ExperimentConfig.from_dict({"experiment": "principal-split", "n_paths": 200, "master_seed": 3,
                                      "grid": {"dt": 1e-2, "n_steps": 100}, "params": {"group_drift": 2.0}})
    s = run(cfg)
    assert s.verdict == "fail" and s.details["agree"]


def test_corpus_unknown_names():
    with pytest.raises(corpus.UnknownNameError):
        corpus.bundle("klein-bottle-tm")
    with pytest.raises(corpus.UnknownNameError):
        corpus.tm_section("spiral")


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "vertmart.cli", "list"], capture_output=True, text=True)
    assert proc.returncode == 0 and "experiments:" in proc.stdout
