"""Experiment orchestration: validate configs, run experiments, emit tables.

Verbs:
  run           execute a config (file path or built-in oracle name)
  validate      parse + schema-check a config, no compute
  report        consolidate result directories into per-kind summary tables
  list-oracles  show the built-in oracle configs

Every run writes its artifacts under <out>/<name>-<hash8>/ together with a
manifest recording the config hash and the output file hashes; reruns with
an unchanged config are cache hits and byte-identical.  Exit codes: 0 ok,
2 config error, 3 solver non-convergence, 4 acceptance-threshold failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ORACLES, canonical_hash, config_text, \
    load_config, validate_config
from .corrector import CorrectorConfig, solve_corrector
from .effective import (
    EffectiveHamiltonianEstimate, HbarInterpolator, SlopeTable, estimate_mbar,
    hbar_from_corrector, invert_to_hbar,
)
from .ensemble import (
    derive_seed, run_additivity_experiment, run_finite_speed_experiment,
    run_fluctuation_experiment, run_localization_experiment, save_record,
)
from .evolution import EvolutionConfig, InitialCondition, front_speed, \
    homogenization_error, solve_homogenized, solve_oscillatory
from .fields import field_from_descriptor
from .metric import (
    NonConvergenceError, SolverConfig, TargetSet, calibrate_constants,
    save_solution, solve_planar_metric,
)

__all__ = ["main", "run_config", "report_directory", "ThresholdError"]


class ThresholdError(RuntimeError):
    """A require-block acceptance threshold failed."""


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if not isinstance(v, str) else v for v in row))
    path.write_text("\n".join(lines) + "\n")


def _solver_cfg(cfg: dict, h: float) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(tol=s["tol"], cfl=s["cfl"], max_iters=int(s["max_iters"]),
                        eps_reg=s["eps_reg_ru"], method=s["method"])


def _family(cfg: dict):
    template = dict(cfg["field"])

    def make(seed: int):
        d = dict(template)
        d["seed"] = int(seed)
        return field_from_descriptor(d)

    return make


# -- runners (one per experiment kind) ------------------------------------------------


def _run_metric(cfg, outdir, workers):
    phys, grid = cfg["physics"], cfg["grid"]
    field = field_from_descriptor(cfg["field"])
    h = grid["h_ru"]
    sol = solve_planar_metric(
        field, phys["mu"], phys["e"], phys.get("s_offset_ru", 0.0),
        cfg=_solver_cfg(cfg, h), h=h,
        depth=grid.get("depth_ru"), width=grid.get("width_ru"),
        t_max=phys.get("t_max_ru"))
    l_est, L_est = calibrate_constants(sol)
    save_solution(sol, outdir / "solution")
    _write_csv(outdir / "metric.csv",
               ["mu", "l_est", "L_est", "lip_est", "residual_norm", "iters"],
               [[sol.mu, l_est, L_est, sol.lip_est, sol.residual_norm, sol.iters]])


def _run_corrector(cfg, outdir, workers):
    phys, grid = cfg["physics"], cfg["grid"]
    field = field_from_descriptor(cfg["field"])
    h = grid["h_ru"]
    ccfg = CorrectorConfig(tol=cfg["solver"]["tol"],
                           max_iters=int(cfg["solver"]["max_iters"]),
                           side_factor=phys.get("side_factor", 8.0))
    pt = hbar_from_corrector(field, phys["xi"], phys["deltas"], h=h, cfg=ccfg)
    rows = [[d, v, "ladder"] for d, v in zip(sorted(set(phys["deltas"]),
                                                    reverse=True), pt.dvd0_ladder)]
    rows.append([0.0, pt.value, "extrapolated"])
    _write_csv(outdir / "corrector.csv", ["delta", "dvd0", "stage"], rows)
    meta = {"xi": list(map(float, np.atleast_1d(phys["xi"]))),
            "extrapolated": pt.value, "uncertainty": pt.uncertainty,
            "fit_exponent": pt.fit_exponent, "fit_residual": pt.fit_residual,
            "low_confidence": pt.low_confidence}
    (outdir / "corrector.meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))


def _run_hbar(cfg, outdir, workers):
    phys, grid = cfg["physics"], cfg["grid"]
    h = grid["h_ru"]
    e = np.asarray(phys["e"], dtype=float)
    e = e / np.linalg.norm(e)
    mags = [float(t) for t in phys["magnitudes"]]
    field = field_from_descriptor(cfg["field"])
    n_seeds = int(cfg["ensemble"].get("n_seeds", 1))
    seeds = None
    fld = field
    if n_seeds > 1:
        base = int(cfg["ensemble"]["seed_base"])
        seeds = [derive_seed(base, cfg["name"], i) for i in range(n_seeds)]
        fld = _family(cfg)

    ecols = [f"e{i}" for i in range(e.shape[0])]
    header = ecols + ["magnitude_or_mu", "estimate", "stderr", "route", "seed_count"]
    rows = []
    results = {}
    if "metric" in phys["routes"]:
        t_list = phys.get("t_list_ru", [8.0, 14.0, 20.0, 26.0, 32.0])
        mu_grid = phys.get("mu_grid")
        if mu_grid is None:
            b = field.bounds
            mu_grid = list(np.geomspace(0.8 * b.c0 * min(mags) ** b.p,
                                        1.25 * b.C0 * max(mags) ** b.p, 7))
        scfg = _solver_cfg(cfg, h)
        table_rows = [estimate_mbar(fld, mu, e, t_list, h=h, cfg=scfg, seeds=seeds)
                      for mu in mu_grid]
        table = SlopeTable(e=tuple(map(float, e)), rows=table_rows)
        for r in table.rows:
            rows.append(list(e) + [r.mu, r.mbar, r.stderr, "metric-mbar", r.n_seeds])
        for t in mags:
            val, unc = invert_to_hbar(table, t)
            rows.append(list(e) + [t, val, unc, "metric-route", n_seeds])
            results.setdefault(t, {})["metric"] = (val, unc)
    if "corrector" in phys["routes"]:
        ccfg = CorrectorConfig(tol=cfg["solver"]["tol"],
                               max_iters=int(cfg["solver"]["max_iters"]))
        for t in mags:
            pt = hbar_from_corrector(field, t * e, phys["deltas"], h=h, cfg=ccfg)
            rows.append(list(e) + [t, pt.value, pt.uncertainty, "corrector-route", 1])
            results.setdefault(t, {})["corrector"] = (pt.value, pt.uncertainty)
    _write_csv(outdir / "hbar.csv", header, rows)

    rtol = cfg["require"].get("cross_route_rtol")
    if rtol is not None:
        for t, by_route in results.items():
            if len(by_route) == 2:
                (v1, u1), (v2, u2) = by_route["metric"], by_route["corrector"]
                if abs(v1 - v2) > u1 + u2 + rtol * abs(v1):
                    raise ThresholdError(
                        f"routes disagree at |xi|={t}: {v1:.5g} vs {v2:.5g}")


def _run_fluctuation(cfg, outdir, workers):
    phys, grid, ens = cfg["physics"], cfg["grid"], cfg["ensemble"]
    rec = run_fluctuation_experiment(
        _family(cfg), phys["mu"], phys["e"], phys["t_list_ru"],
        int(ens.get("n_seeds", 64)), h=grid["h_ru"],
        base_seed=int(ens["seed_base"]), experiment_id=cfg["name"],
        cfg=_solver_cfg(cfg, grid["h_ru"]), workers=workers,
        width=grid.get("width_ru"))
    save_record(rec, outdir)
    s = rec.summary
    rows = [[t, m, sd, s["beta"], s["tail"]["log_tail_slope"],
             s["tail"]["convex_decreasing"]]
            for t, m, sd in zip(s["t_list"], s["mean"], s["std"])]
    _write_csv(outdir / "fluctuation.csv",
               ["t_ru", "mean", "std", "beta", "tail_slope", "tail_convex"], rows)


def _run_additivity(cfg, outdir, workers):
    phys, grid, ens = cfg["physics"], cfg["grid"], cfg["ensemble"]
    rec = run_additivity_experiment(
        _family(cfg), phys["mu"], phys["e"],
        [tuple(p) for p in phys["st_pairs_ru"]],
        int(ens.get("n_seeds", 64)), h=grid["h_ru"],
        base_seed=int(ens["seed_base"]), experiment_id=cfg["name"],
        cfg=_solver_cfg(cfg, grid["h_ru"]), workers=workers,
        width=grid.get("width_ru"))
    save_record(rec, outdir)
    s = rec.summary
    rows = [[p[0], p[1], d, nd]
            for p, d, nd in zip(s["pairs"], s["defect"], s["normalized_defect"])]
    _write_csv(outdir / "additivity.csv",
               ["s_ru", "t_ru", "defect", "normalized_defect"], rows)


def _run_localization(cfg, outdir, workers):
    phys, grid = cfg["physics"], cfg["grid"]
    field = field_from_descriptor(cfg["field"])
    target = TargetSet.from_dict(phys.get("target", {
        "kind": "ball-union", "centers": [[0.0] * field.dim], "radius": 1.0}))
    rec = run_localization_experiment(
        field, phys.get("mu", 1.0), target, phys["t_level"],
        phys.get("buffers_ru", [0.0, 1.0, 2.0, 3.0]), int(phys["new_seed"]),
        h=grid["h_ru"], box=(grid["box_lo_ru"], grid["box_hi_ru"]),
        experiment_id=cfg["name"], cfg=_solver_cfg(cfg, grid["h_ru"]))
    save_record(rec, outdir)
    s = rec.summary
    bstar = s["b_star"] if s["b_star"] is not None else float("nan")
    rows = [[b, d, s["l_est"], bstar]
            for b, d in zip(s["buffers"], s["sup_diff"])]
    _write_csv(outdir / "localization.csv",
               ["buffer_ru", "sup_diff", "l_est", "b_star"], rows)


def _run_finite_speed(cfg, outdir, workers):
    phys, grid = cfg["physics"], cfg["grid"]
    field = field_from_descriptor(cfg["field"])
    rec = run_finite_speed_experiment(
        field, phys.get("mu", 1.0), phys["e"], phys["s_eval"], phys["M"],
        phys["R_list_ru"], h=grid["h_ru"], experiment_id=cfg["name"],
        cfg=_solver_cfg(cfg, grid["h_ru"]), depth=grid.get("depth_ru"))
    save_record(rec, outdir)
    s = rec.summary
    rstar = s["R_star"] if s["R_star"] is not None else float("nan")
    rows = [[R, v, rstar] for R, v in zip(s["R_list"], s["violation"])]
    _write_csv(outdir / "finite_speed.csv", ["R_ru", "violation", "R_star"], rows)


def _run_evolution(cfg, outdir, workers):
    phys, grid = cfg["physics"], cfg["grid"]
    field = field_from_descriptor(cfg["field"])
    h = grid["h_ru"]
    g = InitialCondition.from_dict(phys["g"])
    T, R = phys["T"], phys["R_ru"]

    hb = phys["hbar"]
    e = np.asarray(phys.get("e", [1.0] + [0.0] * (field.dim - 1)), dtype=float)
    dirs = np.stack([e, -e])
    t_list = hb.get("t_list_ru", [8.0, 14.0, 20.0, 26.0, 32.0])
    scfg = _solver_cfg(cfg, hb.get("h_ru", h))
    mags = hb["magnitudes"]
    values = np.empty((2, len(mags)))
    unc = np.empty_like(values)
    for i, d in enumerate(dirs):
        rows = [estimate_mbar(field, mu, d, t_list, h=hb.get("h_ru", h), cfg=scfg)
                for mu in hb["mu_grid"]]
        table = SlopeTable(e=tuple(map(float, d)), rows=rows)
        for j, t in enumerate(mags):
            values[i, j], unc[i, j] = invert_to_hbar(table, float(t))
    est = EffectiveHamiltonianEstimate(dirs, np.asarray(mags, float), values, unc,
                                       route="metric-route")
    hbar = HbarInterpolator(est)

    ecfg = EvolutionConfig(cfl=cfg["solver"]["cfl"],
                           padding=phys.get("padding", "physical"))
    hom = solve_homogenized(hbar, g, T, h=h, R=R, cfg=ecfg)
    runs = [solve_oscillatory(field, eps, g, T, h=h, R=R, cfg=ecfg)
            for eps in sorted(phys["epsilons"], reverse=True)]
    table = homogenization_error(runs, hom)
    speed_hom = front_speed(hom)
    speed_osc = front_speed(runs[-1])
    rows = [[eps, err, table.fitted_alpha, speed_hom, speed_osc]
            for eps, err in table.rows()]
    _write_csv(outdir / "evolution.csv",
               ["epsilon", "sup_error", "fitted_alpha", "front_speed_hom",
                "front_speed_osc"], rows)

    req = cfg["require"]
    if req.get("alpha_positive"):
        decreasing = bool(np.all(np.diff(table.sup_errors) < 0))
        if not (table.fitted_alpha > 0 and decreasing):
            raise ThresholdError(
                f"homogenization error not decreasing (alpha={table.fitted_alpha:.3g})")
    fs = req.get("front_speed")
    if fs is not None:
        if abs(speed_hom - fs["target"]) > fs["rtol"] * abs(fs["target"]):
            raise ThresholdError(
                f"front speed {speed_hom:.5g} misses {fs['target']:.5g}")


_RUNNERS = {
    "metric": _run_metric,
    "corrector": _run_corrector,
    "hbar": _run_hbar,
    "fluctuation": _run_fluctuation,
    "additivity": _run_additivity,
    "localization": _run_localization,
    "finite-speed": _run_finite_speed,
    "evolution": _run_evolution,
}


# -- manifest / cache -------------------------------------------------------------------


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _collect_outputs(outdir: Path):
    files = sorted(p for p in outdir.rglob("*")
                   if p.is_file() and p.name != "manifest.json")
    return [{"path": str(p.relative_to(outdir)), "sha256": _sha256_file(p),
             "bytes": p.stat().st_size} for p in files]


def _manifest_hash(config_hash: str, outputs) -> str:
    return canonical_hash({"config": config_hash,
                           "outputs": [(o["path"], o["sha256"]) for o in outputs]})


def _cache_hit(outdir: Path, config_hash: str) -> bool:
    mpath = outdir / "manifest.json"
    if not mpath.exists():
        return False
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError:
        return False
    if manifest.get("config_hash") != config_hash:
        return False
    for o in manifest.get("outputs", []):
        p = outdir / o["path"]
        if not p.exists() or _sha256_file(p) != o["sha256"]:
            return False
    return True


def run_config(cfg: dict, out: Path, workers: int = 1, cache: bool = True,
               seed_base: int = None) -> dict:
    """Validate, dispatch, persist; returns the manifest dict."""
    cfg = validate_config(cfg)
    if seed_base is not None:
        cfg["ensemble"]["seed_base"] = int(seed_base)
    config_hash = canonical_hash(cfg)
    outdir = Path(out) / f"{cfg['name']}-{config_hash[:8]}"
    if cache and _cache_hit(outdir, config_hash):
        manifest = json.loads((outdir / "manifest.json").read_text())
        manifest["cache_hit"] = True
        return manifest
    outdir.mkdir(parents=True, exist_ok=True)
    for stale in outdir.rglob("*"):
        if stale.is_file():
            stale.unlink()
    t0 = time.time()
    _RUNNERS[cfg["kind"]](cfg, outdir, workers)
    wall = time.time() - t0
    outputs = _collect_outputs(outdir)
    manifest = {
        "config": cfg,
        "config_hash": config_hash,
        "kind": cfg["kind"],
        "name": cfg["name"],
        "tool_version": __version__,
        "wall_time_s": wall,
        "outputs": outputs,
        "manifest_hash": _manifest_hash(config_hash, outputs),
        "cache_hit": False,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return manifest


# -- report ------------------------------------------------------------------------------


_KIND_TABLE = {
    "metric": "metric.csv",
    "corrector": "corrector.csv",
    "hbar": "hbar.csv",
    "fluctuation": "fluctuation.csv",
    "additivity": "additivity.csv",
    "localization": "localization.csv",
    "finite-speed": "finite_speed.csv",
    "evolution": "evolution.csv",
}


def report_directory(results_dir, out_dir=None) -> dict:
    """Merge all manifests under results_dir into one table per kind.

    Returns {"tables": {kind: path}, "issues": [...]}; corrupt manifests are
    listed, never fatal.
    """
    results_dir = Path(results_dir)
    out_dir = Path(out_dir) if out_dir else results_dir / "report"
    manifests = sorted(results_dir.rglob("manifest.json"))
    by_kind = {}
    issues = []
    for mpath in manifests:
        try:
            manifest = json.loads(mpath.read_text())
            kind = manifest["kind"]
            table = _KIND_TABLE[kind]
            csv_path = mpath.parent / table
            lines = csv_path.read_text().splitlines()
            header, rows = lines[0], lines[1:]
        except Exception as exc:
            issues.append(f"{mpath}: {exc}")
            continue
        entry = by_kind.setdefault(kind, {"header": header, "rows": []})
        for r in rows:
            entry["rows"].append(
                f"{manifest['name']},{manifest['config_hash'][:8]},{r}")
    tables = {}
    if by_kind:
        out_dir.mkdir(parents=True, exist_ok=True)
    for kind, entry in sorted(by_kind.items()):
        path = out_dir / f"{kind}_summary.csv"
        rows = entry["rows"]
        if kind == "evolution":  # merged error-vs-epsilon table sorted by epsilon
            rows = sorted(rows, key=lambda r: float(r.split(",")[2]))
        path.write_text("\n".join([f"name,config,{entry['header']}"] + rows) + "\n")
        tables[kind] = str(path)
    if issues:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "issues.txt").write_text("\n".join(issues) + "\n")
    return {"tables": tables, "issues": issues}


# -- entry point --------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hjhomog",
                                     description="homogenization laboratory")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("--config", required=True,
                       help="config file path or built-in oracle name")
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--seed-base", type=int, default=None)
    p_run.add_argument("--cache", choices=("on", "off"), default="on")

    p_val = sub.add_parser("validate", help="schema-check a config")
    p_val.add_argument("--config", required=True)

    p_rep = sub.add_parser("report", help="consolidate result directories")
    p_rep.add_argument("--dir", required=True)
    p_rep.add_argument("--out", default=None)

    sub.add_parser("list-oracles", help="show built-in oracle configs")

    args = parser.parse_args(argv)
    try:
        if args.verb == "list-oracles":
            for name, entry in sorted(ORACLES.items()):
                print(f"{name}: {entry['description']}")
            return 0
        if args.verb == "validate":
            cfg = validate_config(load_config(args.config))
            print(config_text(cfg))
            return 0
        if args.verb == "report":
            result = report_directory(args.dir, args.out)
            for kind, path in sorted(result["tables"].items()):
                print(f"{kind}: {path}")
            for issue in result["issues"]:
                print(f"issue: {issue}", file=sys.stderr)
            return 0
        # run
        cfg = load_config(args.config)
        manifest = run_config(cfg, Path(args.out), workers=args.workers,
                              cache=args.cache == "on",
                              seed_base=args.seed_base)
        status = "cache hit" if manifest.get("cache_hit") else \
            f"done in {manifest['wall_time_s']:.1f}s"
        print(f"{manifest['name']}: {status}; manifest {manifest['manifest_hash'][:12]}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NonConvergenceError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return 3
    except ThresholdError as exc:
        print(f"acceptance threshold failed: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
