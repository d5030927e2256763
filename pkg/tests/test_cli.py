"""CLI orchestration: validation, caching, determinism, reporting."""

import json
from pathlib import Path

import numpy as np
import pytest

from hjhomog.cli import main, report_directory, run_config
from hjhomog.config import (
    ConfigError, ORACLES, canonical_hash, load_config, validate_config,
)

CONST_FIELD_1D = {
    "kind": "constant", "seed": 0, "dim": 1, "p": 1.0,
    "diffusion": {"kind": "none"}, "params": {"value": 2.0},
}


def _quick_metric_cfg():
    return {
        "kind": "metric",
        "name": "quick-metric",
        "field": {"kind": "constant", "seed": 0, "dim": 2, "p": 1.0,
                  "diffusion": {"kind": "none"}, "params": {"value": 2.0}},
        "physics": {"mu": 1.0, "e": [1.0, 0.0], "s_offset_ru": 0.0},
        "grid": {"h_ru": 1 / 16, "depth_ru": 2.0, "width_ru": 4.0},
    }


def _quick_corrector_cfg():
    return {
        "kind": "corrector",
        "name": "quick-corrector",
        "field": CONST_FIELD_1D,
        "physics": {"xi": [1.0], "deltas": [0.5, 0.25]},
        "grid": {"h_ru": 1 / 16},
    }


# -- validation --------------------------------------------------------------------


def test_validate_rejects_negative_mu():
    cfg = _quick_metric_cfg()
    cfg["physics"]["mu"] = -1.0
    with pytest.raises(ConfigError):
        validate_config(cfg)


def test_validate_rejects_unknown_keys():
    cfg = _quick_metric_cfg()
    cfg["extra"] = 1
    with pytest.raises(ConfigError):
        validate_config(cfg)
    cfg = _quick_metric_cfg()
    cfg["solver"] = {"tollerance": 1e-6}
    with pytest.raises(ConfigError):
        validate_config(cfg)


def test_malformed_config_exit_code_and_no_artifacts(tmp_path):
    cfg = _quick_metric_cfg()
    cfg["physics"]["mu"] = -1.0
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    code = main(["run", "--config", str(cfg_path), "--out", str(out)])
    assert code == 2
    assert not out.exists() or not any(out.iterdir())


def test_hash_stable_under_key_reordering():
    cfg = validate_config(_quick_metric_cfg())
    reordered = json.loads(json.dumps(cfg, sort_keys=True))
    assert canonical_hash(cfg) == canonical_hash(reordered)


def test_load_config_oracle_and_missing(tmp_path):
    cfg = load_config("constant-plane")
    assert cfg["kind"] == "metric"
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")


def test_list_oracles_verb(capsys):
    assert main(["list-oracles"]) == 0
    out = capsys.readouterr().out
    assert "periodic-1d-harmonic-mean" in out


def test_validate_verb_on_oracle(capsys):
    assert main(["validate", "--config", "constant-plane"]) == 0


# -- run / cache / determinism --------------------------------------------------------


def test_run_metric_and_cache_hit(tmp_path):
    out = tmp_path / "out"
    m1 = run_config(_quick_metric_cfg(), out)
    assert not m1["cache_hit"]
    csvs = list(out.rglob("metric.csv"))
    assert len(csvs) == 1
    row = csvs[0].read_text().splitlines()[1].split(",")
    assert float(row[1]) == pytest.approx(0.5, rel=0.05)  # l_est of a=2, mu=1
    m2 = run_config(_quick_metric_cfg(), out)
    assert m2["cache_hit"]
    assert m2["manifest_hash"] == m1["manifest_hash"]


def test_rerun_byte_identical_csvs(tmp_path):
    cfg = _quick_corrector_cfg()
    m1 = run_config(cfg, tmp_path / "a", cache=False)
    m2 = run_config(cfg, tmp_path / "b", cache=False)
    assert m1["manifest_hash"] == m2["manifest_hash"]
    c1 = next((tmp_path / "a").rglob("corrector.csv")).read_bytes()
    c2 = next((tmp_path / "b").rglob("corrector.csv")).read_bytes()
    assert c1 == c2


def test_run_corrector_outputs(tmp_path):
    m = run_config(_quick_corrector_cfg(), tmp_path)
    outdir = tmp_path / [o["path"] for o in m["outputs"]][0]
    lines = next(tmp_path.rglob("corrector.csv")).read_text().splitlines()
    assert lines[0] == "delta,dvd0,stage"
    final = lines[-1].split(",")
    assert float(final[1]) == pytest.approx(2.0, abs=1e-6)  # a0 |xi|^p


def test_threshold_failure_exit_code(tmp_path):
    cfg = {
        "kind": "evolution",
        "name": "threshold-fail",
        "field": CONST_FIELD_1D,
        "physics": {
            "T": 0.25, "R_ru": 0.5, "epsilons": [0.5, 0.25],
            "g": {"kind": "linear", "e": [1.0], "slope": 1.0},
            "hbar": {"mu_grid": [0.5, 1.0, 2.0, 4.0], "magnitudes": [1.0, 2.0],
                     "t_list_ru": [8.0, 14.0, 20.0], "h_ru": 1 / 16},
        },
        "grid": {"h_ru": 1 / 32},
        "require": {"front_speed": {"target": 99.0, "rtol": 0.01}},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    code = main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
    assert code == 4


def test_nonconvergence_exit_code(tmp_path):
    cfg = _quick_corrector_cfg()
    cfg["field"] = dict(CONST_FIELD_1D)
    cfg["field"]["params"] = {"value": 2.0}
    cfg["physics"] = {"xi": [1.0], "deltas": [0.5, 0.25]}
    cfg["solver"] = {"tol": 1e-12, "max_iters": 3}
    # non-constant field so the constant initial guess does not solve exactly
    cfg["field"] = {
        "kind": "periodic-trig", "seed": 0, "dim": 1, "p": 1.0,
        "diffusion": {"kind": "none"},
        "params": {"base": 2.0, "terms": [[1.0, 0, 1, 0.0, "sin"]], "period": 1.0},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    code = main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
    assert code == 3


# -- report -----------------------------------------------------------------------------


def _fake_manifest(dirpath: Path, kind: str, name: str, table: str, header: str, rows):
    dirpath.mkdir(parents=True, exist_ok=True)
    (dirpath / table).write_text("\n".join([header] + rows) + "\n")
    manifest = {
        "config": {}, "config_hash": canonical_hash({"name": name}),
        "kind": kind, "name": name, "tool_version": "0.1.0", "wall_time_s": 0.0,
        "outputs": [{"path": table,
                     "sha256": "0" * 64, "bytes": 1}],
        "manifest_hash": "x",
    }
    (dirpath / "manifest.json").write_text(json.dumps(manifest))


def test_report_empty_directory_succeeds(tmp_path):
    result = report_directory(tmp_path)
    assert result["tables"] == {} and result["issues"] == []


def test_report_merges_epsilon_ladders_sorted(tmp_path):
    hdr = "epsilon,sup_error,fitted_alpha,front_speed_hom,front_speed_osc"
    _fake_manifest(tmp_path / "run1", "evolution", "ladder-a", "evolution.csv", hdr,
                   ["0.25,0.1,0.5,1.7,1.7", "0.0625,0.05,0.5,1.7,1.7"])
    _fake_manifest(tmp_path / "run2", "evolution", "ladder-b", "evolution.csv", hdr,
                   ["0.125,0.08,0.6,1.7,1.7"])
    result = report_directory(tmp_path)
    lines = Path(result["tables"]["evolution"]).read_text().splitlines()
    eps = [float(l.split(",")[2]) for l in lines[1:]]
    assert eps == sorted(eps)
    assert len(lines) == 4


def test_report_mixed_kinds_and_corrupt_manifest(tmp_path):
    hdr_e = "epsilon,sup_error,fitted_alpha,front_speed_hom,front_speed_osc"
    hdr_m = "mu,l_est,L_est,lip_est,residual_norm,iters"
    _fake_manifest(tmp_path / "r1", "evolution", "a", "evolution.csv", hdr_e,
                   ["0.5,0.1,0.4,1.7,1.7"])
    _fake_manifest(tmp_path / "r2", "metric", "b", "metric.csv", hdr_m,
                   ["1.0,0.5,0.5,0.5,1e-12,20"])
    bad = tmp_path / "r3"
    bad.mkdir()
    (bad / "manifest.json").write_text("{not json")
    result = report_directory(tmp_path)
    assert set(result["tables"]) == {"evolution", "metric"}
    assert len(result["issues"]) == 1
    for kind, n_rows in (("evolution", 1), ("metric", 1)):
        lines = Path(result["tables"][kind]).read_text().splitlines()
        assert len(lines) == 1 + n_rows


def test_seed_base_flag_changes_hash(tmp_path):
    cfg = {
        "kind": "fluctuation",
        "name": "sb",
        "field": {"kind": "poisson-bump", "seed": 0, "dim": 1, "p": 1.0,
                  "diffusion": {"kind": "none"},
                  "params": {"intensity": 1.0, "bump_height": 0.5, "base": 1.0,
                             "box": [[-2.0], [52.0]], "cap_count": 6}},
        "physics": {"mu": 1.0, "e": [1.0], "t_list_ru": [8.0, 16.0, 32.0]},
        "grid": {"h_ru": 1 / 8},
        "ensemble": {"n_seeds": 32, "seed_base": 0},
    }
    m0 = run_config(json.loads(json.dumps(cfg)), tmp_path, seed_base=0)
    m1 = run_config(json.loads(json.dumps(cfg)), tmp_path, seed_base=1)
    assert m0["config_hash"] != m1["config_hash"]
    assert m0["manifest_hash"] != m1["manifest_hash"]
