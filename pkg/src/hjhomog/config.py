"""Experiment configuration: schema validation, canonical hashing, oracles.

Configs are strict JSON documents; unknown keys are rejected so silent typos
cannot change an experiment.  Length-valued keys carry the `_ru` suffix
(field-range units).  The content hash is computed on the canonical
serialization (sorted keys), so key order never affects caching.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .fields import field_from_descriptor

__all__ = ["ConfigError", "KINDS", "ORACLES", "load_config", "validate_config",
           "canonical_hash", "config_text"]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


KINDS = ("metric", "corrector", "hbar", "fluctuation", "additivity",
         "localization", "finite-speed", "evolution")

_TOP_KEYS = {"kind", "name", "field", "physics", "grid", "solver", "ensemble",
             "require"}

_DEFAULT_SOLVER = {"tol": 1e-6, "cfl": 0.25, "max_iters": 200_000,
                   "eps_reg_ru": None, "method": "auto"}


def canonical_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def config_text(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=1)


def _require(cfg, key, ctx):
    if key not in cfg:
        raise ConfigError(f"missing key {key!r} in {ctx}")
    return cfg[key]


def _positive(val, name):
    if not isinstance(val, (int, float)) or not val > 0:
        raise ConfigError(f"{name} must be a positive number, got {val!r}")
    return float(val)


def validate_config(cfg: dict) -> dict:
    """Normalize and strictly validate; returns a new config with defaults."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kind = _require(cfg, "kind", "config")
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; one of {KINDS}")
    out = {
        "kind": kind,
        "name": cfg.get("name", kind),
        "field": _require(cfg, "field", "config"),
        "physics": dict(cfg.get("physics", {})),
        "grid": dict(cfg.get("grid", {})),
        "solver": {**_DEFAULT_SOLVER, **cfg.get("solver", {})},
        "ensemble": dict(cfg.get("ensemble", {})),
        "require": dict(cfg.get("require", {})),
    }
    # the field descriptor must construct (this also validates its params)
    try:
        field_from_descriptor(out["field"])
    except Exception as exc:
        raise ConfigError(f"bad field descriptor: {exc}") from exc

    unknown = set(out["solver"]) - set(_DEFAULT_SOLVER)
    if unknown:
        raise ConfigError(f"unknown solver keys: {sorted(unknown)}")
    _positive(out["solver"]["tol"], "solver.tol")
    if not 0 < out["solver"]["cfl"] <= 1:
        raise ConfigError("solver.cfl must lie in (0, 1]")

    h = _positive(_require(out["grid"], "h_ru", "grid"), "grid.h_ru")
    phys = out["physics"]
    ens = out["ensemble"]
    ens.setdefault("seed_base", 0)

    if kind in ("metric", "hbar", "fluctuation", "additivity", "finite-speed"):
        mu = phys.get("mu", 1.0)
        if kind != "hbar":
            _positive(mu, "physics.mu")
        e = phys.get("e")
        if e is None:
            raise ConfigError(f"{kind} needs physics.e (direction)")
    if kind == "fluctuation":
        n = ens.get("n_seeds", 64)
        if n < 32:
            raise ConfigError("fluctuation needs ensemble.n_seeds >= 32")
        ens["n_seeds"] = int(n)
        t_list = _require(phys, "t_list_ru", "physics")
        if sorted(t_list) != list(t_list) or len(t_list) < 2:
            raise ConfigError("t_list_ru must be increasing with >= 2 entries")
        if max(t_list) < 4 * min(t_list):
            raise ConfigError("t_list_ru must span at least a factor 4")
    if kind == "additivity":
        ens.setdefault("n_seeds", 64)
        pairs = _require(phys, "st_pairs_ru", "physics")
        for p in pairs:
            if len(p) != 2 or min(p) < 4:
                raise ConfigError("st_pairs_ru entries must be pairs >= 4 ranges")
    if kind == "corrector":
        xi = _require(phys, "xi", "physics")
        if float(np.linalg.norm(xi)) <= 0:
            raise ConfigError("physics.xi must be nonzero")
        deltas = _require(phys, "deltas", "physics")
        if any(not 0 < d <= 1 for d in deltas):
            raise ConfigError("deltas must lie in (0, 1]")
    if kind == "hbar":
        mags = _require(phys, "magnitudes", "physics")
        if any(m <= 0 for m in mags) or sorted(mags) != list(mags):
            raise ConfigError("magnitudes must be positive and increasing")
        routes = phys.get("routes", ["metric", "corrector"])
        if not set(routes) <= {"metric", "corrector"}:
            raise ConfigError("routes must be a subset of {metric, corrector}")
        phys["routes"] = list(routes)
    if kind == "localization":
        _positive(phys.get("t_level", 0), "physics.t_level")
        if "new_seed" not in phys:
            raise ConfigError("localization needs physics.new_seed")
    if kind == "finite-speed":
        _positive(phys.get("s_eval", 0), "physics.s_eval")
        _positive(phys.get("M", 0), "physics.M")
        if not phys.get("R_list_ru"):
            raise ConfigError("finite-speed needs physics.R_list_ru")
    if kind == "evolution":
        _positive(phys.get("T", 0), "physics.T")
        _positive(phys.get("R_ru", 0), "physics.R_ru")
        eps = _require(phys, "epsilons", "physics")
        if any(not 0 < x <= 1 for x in eps):
            raise ConfigError("epsilons must lie in (0, 1]")
        if "g" not in phys:
            raise ConfigError("evolution needs physics.g (initial condition)")
    return out


def load_config(path_or_name) -> dict:
    """Read a config from disk, or fetch a built-in oracle by name."""
    if str(path_or_name) in ORACLES:
        return json.loads(json.dumps(ORACLES[str(path_or_name)]["config"]))
    p = Path(path_or_name)
    if not p.exists():
        raise ConfigError(f"config {path_or_name!r} is neither a file nor a "
                          f"built-in oracle (try list-oracles)")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


_SIN_FIELD_1D = {
    "kind": "periodic-trig", "seed": 0, "dim": 1, "p": 1.0,
    "diffusion": {"kind": "none"},
    "params": {"base": 2.0, "terms": [[1.0, 0, 1, 0.0, "sin"]], "period": 1.0},
}

_CONST_FIELD_2D = {
    "kind": "constant", "seed": 0, "dim": 2, "p": 1.0,
    "diffusion": {"kind": "none"}, "params": {"value": 2.0},
}

_POISSON_FIELD_2D = {
    "kind": "poisson-bump", "seed": 0, "dim": 2, "p": 1.0,
    "diffusion": {"kind": "none"},
    "params": {"intensity": 0.5, "bump_height": 1.0, "base": 1.0,
               "box": [[-2.0, -98.0], [98.0, 98.0]], "cap_count": 6},
}

ORACLES = {
    "periodic-1d-harmonic-mean": {
        "description": "1-d sinusoidal medium: slope 1/sqrt(3), effective "
                       "Hamiltonian sqrt(3) by both routes",
        "config": {
            "kind": "hbar",
            "name": "periodic-1d-harmonic-mean",
            "field": _SIN_FIELD_1D,
            "physics": {
                "e": [1.0], "magnitudes": [1.0],
                "mu_grid": [0.8, 1.0, 1.35, 1.732, 2.2, 2.8, 3.6],
                "t_list_ru": [8.0, 14.0, 20.0, 26.0, 32.0],
                "deltas": [0.2, 0.1, 0.05],
                "routes": ["metric", "corrector"],
            },
            "grid": {"h_ru": 0.015625},
            "solver": {"tol": 1e-7},
            "require": {"cross_route_rtol": 0.02},
        },
    },
    "constant-plane": {
        "description": "constant medium: exact linear planar solution, "
                       "slope mu/a0",
        "config": {
            "kind": "metric",
            "name": "constant-plane",
            "field": _CONST_FIELD_2D,
            "physics": {"mu": 1.0, "e": [1.0, 0.0], "s_offset_ru": 0.0},
            "grid": {"h_ru": 0.015625, "depth_ru": 3.0, "width_ru": 6.0},
        },
    },
    "fluctuation-2d-poisson": {
        "description": "2-d first-order Poisson medium: std growth exponent "
                       "and sub-Gaussian tail signature",
        "config": {
            "kind": "fluctuation",
            "name": "fluctuation-2d-poisson",
            "field": _POISSON_FIELD_2D,
            "physics": {"mu": 1.0, "e": [1.0, 0.0],
                        "t_list_ru": [8.0, 16.0, 32.0, 64.0]},
            "grid": {"h_ru": 0.25},
            "ensemble": {"n_seeds": 64, "seed_base": 0},
        },
    },
    "evolution-1d-periodic": {
        "description": "1-d sinusoidal medium: homogenization error ladder, "
                       "front speed sqrt(3)",
        "config": {
            "kind": "evolution",
            "name": "evolution-1d-periodic",
            "field": _SIN_FIELD_1D,
            "physics": {
                "T": 1.0, "R_ru": 1.0,
                "epsilons": [0.125, 0.0625, 0.03125, 0.015625],
                "g": {"kind": "linear", "e": [1.0], "slope": 1.0},
                "hbar": {"mu_grid": [0.6, 1.0, 1.5, 2.2, 3.0, 4.0],
                         "t_list_ru": [8.0, 14.0, 20.0, 26.0, 32.0],
                         "magnitudes": [0.5, 1.0, 1.5, 2.0],
                         "h_ru": 0.015625},
            },
            "grid": {"h_ru": 0.001953125},
            "solver": {"cfl": 0.45},
            "require": {"alpha_positive": True,
                        "front_speed": {"target": 1.7320508, "rtol": 0.03}},
        },
    },
}
