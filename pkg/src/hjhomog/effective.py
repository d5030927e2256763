"""Effective Hamiltonian extraction and cross-validation.

Two independent routes produce the homogenized Hamiltonian:

* metric route -- the linear growth rate of the planar metric solution in
  direction e is estimated by a least-squares slope over a window of
  distances, tabulated against the level mu, and inverted: the effective
  value at the gradient t*e is the smallest mu whose slope exceeds t;
* corrector route -- the resolvent values -delta v(0, xi) are extrapolated
  to delta = 0 on a geometric ladder.

Both routes carry per-point uncertainties so the cross-route agreement check
is quantitative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .corrector import CorrectorConfig, make_corrector_torus, solve_corrector
from .fields import CoefficientField
from .metric import SolverConfig, solve_planar_metric

__all__ = [
    "MonotonicityError", "TableRangeError",
    "SlopeRow", "SlopeTable", "HbarPoint", "EffectiveHamiltonianEstimate",
    "estimate_mbar", "invert_to_hbar", "hbar_from_corrector",
    "hbar_table_from_metric", "hbar_table_from_corrector",
    "hbar_regularity_scan", "RegularityReport", "HbarInterpolator",
]


class MonotonicityError(ValueError):
    """Slope table violates strict monotonicity in mu beyond its noise."""


class TableRangeError(ValueError):
    """Query outside the tabulated range; extend the table."""


@dataclass
class SlopeRow:
    mu: float
    mbar: float
    stderr: float
    t_window: tuple
    n_seeds: int = 1
    defect_exponent: float = None


@dataclass
class SlopeTable:
    e: tuple
    rows: list

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.mu)

    @property
    def mus(self):
        return np.array([r.mu for r in self.rows])

    @property
    def mbars(self):
        return np.array([r.mbar for r in self.rows])

    @property
    def stderrs(self):
        return np.array([r.stderr for r in self.rows])

    def validate_monotone(self, noise_factor: float = 2.0) -> None:
        mb, se = self.mbars, self.stderrs
        for i in range(len(mb) - 1):
            if mb[i + 1] <= mb[i] - noise_factor * (se[i] + se[i + 1]):
                raise MonotonicityError(
                    f"slope table not increasing at mu={self.rows[i].mu:.4g} -> "
                    f"{self.rows[i + 1].mu:.4g} beyond noise")


def _realizations(field, seeds):
    if callable(field):
        if not seeds:
            raise ValueError("a field family needs a seed list")
        return [field(int(s)) for s in seeds]
    return [field]


def estimate_mbar(field, mu: float, e, t_list, *, h: float,
                  cfg: SolverConfig = None, seeds=None, s_offset: float = 0.0,
                  depth: float = None, width: float = None,
                  range_len: float = 1.0) -> SlopeRow:
    """Least-squares slope of the ensemble-averaged planar solution vs t.

    field is a single realization or a callable seed -> field (with `seeds`).
    One slab solve per realization covers the whole t window.  The intercept
    is fitted and discarded; the defect exponent tracks how fast the
    per-distance mean drifts from the fitted line.
    """
    t_list = np.asarray(sorted(t_list), dtype=float)
    if t_list.size < 3:
        raise ValueError("slope fit needs at least 3 distances")
    if np.any(np.diff(t_list) <= 0):
        raise ValueError("t_list must be strictly increasing")
    if t_list[0] < 4.0 * range_len:
        raise ValueError("smallest distance must be >= 4 dependence ranges")
    e = np.asarray(e, dtype=float)
    e = e / np.linalg.norm(e)
    fields = _realizations(field, seeds)
    n = len(fields)
    vals = np.empty((n, t_list.size))
    for i, f in enumerate(fields):
        sol = solve_planar_metric(f, mu, e, s_offset, cfg=cfg, h=h,
                                  t_max=float(t_list[-1]), depth=depth, width=width)
        for j, t in enumerate(t_list):
            vals[i, j] = sol.value_at(t * e)
    means = vals.mean(axis=0)
    A = np.stack([t_list, np.ones_like(t_list)], axis=1)
    coef, res_ss, *_ = np.linalg.lstsq(A, means, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    dof = t_list.size - 2
    ssr = float(res_ss[0]) if len(res_ss) else float(np.sum((means - A @ coef) ** 2))
    sigma2 = ssr / dof if dof > 0 else 0.0
    stderr = math.sqrt(sigma2 / float(np.sum((t_list - t_list.mean()) ** 2)))
    if n > 1:
        # add the ensemble-mean noise propagated through the fit
        se_mean = vals.std(axis=0, ddof=1) / math.sqrt(n)
        stderr = math.hypot(stderr, float(np.mean(se_mean)) / float(np.ptp(t_list)))
    defect = means / t_list - slope
    exponent = None
    if np.all(np.abs(defect) > 1e-12):
        q = np.polyfit(np.log(t_list), np.log(np.abs(defect)), 1)[0]
        exponent = float(-q)
    return SlopeRow(mu=float(mu), mbar=slope, stderr=float(stderr),
                    t_window=(float(t_list[0]), float(t_list[-1])),
                    n_seeds=n, defect_exponent=exponent)


def invert_to_hbar(table: SlopeTable, t: float, bisect_tol: float = 1e-4) -> tuple:
    """inf{mu > 0 : mbar_mu(e) > t} by bisection on the monotone interpolant.

    Returns (value, uncertainty); the uncertainty combines the bisection
    bracket width with the table noise through the local slope.
    """
    table.validate_monotone()
    mus, mbars = table.mus, table.mbars
    if not mbars[0] <= t <= mbars[-1]:
        raise TableRangeError(
            f"target slope {t} outside table range [{mbars[0]:.4g}, {mbars[-1]:.4g}]; "
            "extend the table")

    def interp(mu):
        return float(np.interp(mu, mus, mbars))

    lo, hi = float(mus[0]), float(mus[-1])
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        if interp(mid) > t:
            hi = mid
        else:
            lo = mid
    mu_star = 0.5 * (lo + hi)
    j = min(max(int(np.searchsorted(mus, mu_star)), 1), len(mus) - 1)
    local_slope = (mbars[j] - mbars[j - 1]) / (mus[j] - mus[j - 1])
    noise = float(np.interp(mu_star, mus, table.stderrs))
    unc = (hi - lo) + (noise / local_slope if local_slope > 0 else np.inf)
    return mu_star, float(unc)


@dataclass
class HbarPoint:
    xi: tuple
    value: float
    uncertainty: float
    route: str
    fit_exponent: float = None
    fit_residual: float = 0.0
    low_confidence: bool = False
    dvd0_ladder: tuple = ()


def _extrapolate_ladder(deltas, dvd0s):
    """Fit dvd0(delta) = A + B delta^q with q free; return (A, q, rms residual)."""
    deltas = np.asarray(deltas, dtype=float)
    dvd0s = np.asarray(dvd0s, dtype=float)
    best = None
    for q in np.linspace(0.3, 3.0, 55):
        X = np.stack([np.ones_like(deltas), deltas**q], axis=1)
        coef, *_ = np.linalg.lstsq(X, dvd0s, rcond=None)
        r = dvd0s - X @ coef
        ss = float(r @ r)
        if best is None or ss < best[0]:
            best = (ss, float(coef[0]), float(q))
    ss, A, q = best
    return A, q, math.sqrt(ss / len(deltas))


def hbar_from_corrector(field: CoefficientField, xi, deltas, *, h: float,
                        cfg: CorrectorConfig = None,
                        residual_threshold: float = 0.02) -> HbarPoint:
    """Corrector-route estimate: extrapolate -delta v(0, xi) to delta = 0."""
    cfg = cfg or CorrectorConfig()
    deltas = sorted(set(float(d) for d in deltas), reverse=True)
    if len(deltas) < 2:
        raise ValueError("the delta ladder needs at least 2 rungs")
    dvd0s = []
    for d in deltas:
        sol = solve_corrector(field, xi, d, cfg=cfg, h=h)
        dvd0s.append(sol.dvd0)
    if len(deltas) == 2:
        # one-step Richardson assuming first-order delta dependence
        A = dvd0s[1] + (dvd0s[1] - dvd0s[0]) * deltas[1] / (deltas[0] - deltas[1])
        q, rms = 1.0, 0.0
    else:
        A, q, rms = _extrapolate_ladder(deltas, dvd0s)
    scale = max(abs(A), 1e-12)
    unc = max(rms, abs(dvd0s[-1] - A) * 0.5)
    return HbarPoint(
        xi=tuple(float(c) for c in np.atleast_1d(xi)), value=float(A),
        uncertainty=float(unc), route="corrector-route", fit_exponent=q,
        fit_residual=rms, low_confidence=bool(rms / scale > residual_threshold),
        dvd0_ladder=tuple(dvd0s),
    )


@dataclass
class EffectiveHamiltonianEstimate:
    directions: np.ndarray    # (k, d) unit vectors
    magnitudes: np.ndarray    # (m,) positive, increasing
    values: np.ndarray        # (k, m)
    uncertainty: np.ndarray   # (k, m)
    route: str
    tables: list = None       # metric route: one SlopeTable per direction

    def __post_init__(self):
        self.directions = np.atleast_2d(np.asarray(self.directions, dtype=float))
        self.magnitudes = np.asarray(self.magnitudes, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.uncertainty = np.asarray(self.uncertainty, dtype=float)
        if np.any(self.magnitudes <= 0) or np.any(np.diff(self.magnitudes) <= 0):
            raise ValueError("magnitudes must be positive and increasing")

    def xi_samples(self):
        return np.concatenate([
            t * self.directions for t in self.magnitudes], axis=0)

    def rows(self):
        for i, e in enumerate(self.directions):
            for j, t in enumerate(self.magnitudes):
                yield (e, float(t), float(self.values[i, j]),
                       float(self.uncertainty[i, j]))


def hbar_table_from_metric(field, directions, magnitudes, *, h: float,
                           t_list=(8.0, 14.0, 20.0, 26.0, 32.0),
                           mu_grid=None, cfg: SolverConfig = None, seeds=None,
                           bounds=None, n_mu: int = 7) -> EffectiveHamiltonianEstimate:
    """Tabulate the effective Hamiltonian on (directions x magnitudes) via
    slope tables in mu and monotone inversion."""
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    magnitudes = np.asarray(magnitudes, dtype=float)
    if bounds is None:
        probe = field if not callable(field) else field(0)
        bounds = probe.bounds
    if mu_grid is None:
        lo = 0.8 * bounds.c0 * float(magnitudes.min()) ** bounds.p
        hi = 1.25 * bounds.C0 * float(magnitudes.max()) ** bounds.p
        mu_grid = np.geomspace(lo, hi, n_mu)
    values = np.empty((directions.shape[0], magnitudes.size))
    unc = np.empty_like(values)
    tables = []
    for i, e in enumerate(directions):
        rows = [estimate_mbar(field, mu, e, t_list, h=h, cfg=cfg, seeds=seeds)
                for mu in mu_grid]
        table = SlopeTable(e=tuple(map(float, e)), rows=rows)
        tables.append(table)
        for j, t in enumerate(magnitudes):
            values[i, j], unc[i, j] = invert_to_hbar(table, float(t))
    return EffectiveHamiltonianEstimate(directions, magnitudes, values, unc,
                                        route="metric-route", tables=tables)


def hbar_table_from_corrector(field, directions, magnitudes, deltas, *, h: float,
                              cfg: CorrectorConfig = None) -> EffectiveHamiltonianEstimate:
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    magnitudes = np.asarray(magnitudes, dtype=float)
    values = np.empty((directions.shape[0], magnitudes.size))
    unc = np.empty_like(values)
    for i, e in enumerate(directions):
        for j, t in enumerate(magnitudes):
            pt = hbar_from_corrector(field, t * e, deltas, h=h, cfg=cfg)
            values[i, j], unc[i, j] = pt.value, pt.uncertainty
    return EffectiveHamiltonianEstimate(directions, magnitudes, values, unc,
                                        route="corrector-route")


@dataclass
class RegularityReport:
    growth_pass: np.ndarray        # (k, m) pointwise sandwich verdicts
    all_growth_pass: bool
    min_holder_exponent: float     # smallest fitted local exponent (or inf)
    isotropy_spread: np.ndarray    # (m,) spread across directions per magnitude
    star_shape_ok: bool
    homogeneity_exponents: np.ndarray  # (k,) fitted log-log slopes per direction


def hbar_regularity_scan(est: EffectiveHamiltonianEstimate, bounds) -> RegularityReport:
    """Growth sandwich, local Holder exponents, isotropy and star-shapedness.

    The Holder fit is a regression metric, not a theorem check: pairs whose
    value difference is below the noise floor count as flat (regular) and do
    not enter the minimum.
    """
    dirs, mags = est.directions, est.magnitudes
    k, m = est.values.shape
    if k < 8 or m < 4:
        raise ValueError("scan needs at least 8 directions and 4 magnitudes")
    vals, unc = est.values, est.uncertainty

    lo = bounds.c0 * mags**bounds.p
    hi = bounds.C0 * mags**bounds.p
    tol = np.maximum(2.0 * unc, 1e-9)
    growth = (vals >= lo[None, :] - tol) & (vals <= hi[None, :] + tol)

    exps = []
    for i in range(k):
        for j in range(m - 1):
            dv = abs(vals[i, j + 1] - vals[i, j])
            dxi = mags[j + 1] - mags[j]
            noise = 2.0 * (unc[i, j] + unc[i, j + 1])
            if dv > max(noise, 1e-12) and abs(math.log(dxi)) > 1e-9:
                exps.append(math.log(dv) / math.log(dxi) if dxi < 1.0 else None)
    for j in range(m):
        for i in range(k):
            i2 = (i + 1) % k
            dv = abs(vals[i2, j] - vals[i, j])
            dxi = float(np.linalg.norm(mags[j] * (dirs[i2] - dirs[i])))
            noise = 2.0 * (unc[i, j] + unc[i2, j])
            if dv > max(noise, 1e-12) and 0 < dxi < 1.0:
                exps.append(math.log(dv) / math.log(dxi))
    exps = [e for e in exps if e is not None]
    min_holder = min(exps) if exps else math.inf

    spread = vals.max(axis=0) - vals.min(axis=0)
    star = bool(np.all(np.diff(vals, axis=1) >= -2.0 * (unc[:, 1:] + unc[:, :-1])))
    homog = np.array([
        np.polyfit(np.log(mags), np.log(np.maximum(vals[i], 1e-12)), 1)[0]
        for i in range(k)
    ])
    return RegularityReport(
        growth_pass=growth, all_growth_pass=bool(growth.all()),
        min_holder_exponent=float(min_holder), isotropy_spread=spread,
        star_shape_ok=star, homogeneity_exponents=homog,
    )


class HbarInterpolator:
    """Piecewise-linear-in-magnitude, angle-linear-across-direction table of
    the effective Hamiltonian, pinned to 0 at the origin."""

    def __init__(self, est: EffectiveHamiltonianEstimate):
        self.est = est
        d = est.directions.shape[1]
        if d not in (1, 2):
            raise ValueError("table interpolation implemented for d in {1, 2}")
        self.dim = d
        if d == 2:
            ang = np.arctan2(est.directions[:, 1], est.directions[:, 0])
            order = np.argsort(ang)
            self._angles = ang[order]
            self._vals = est.values[order]
        else:
            self._angles = None
            pos = np.where(est.directions[:, 0] > 0)[0]
            neg = np.where(est.directions[:, 0] < 0)[0]
            if len(pos) == 0 or len(neg) == 0:
                raise ValueError("1-d table needs both +e and -e directions")
            self._vals = np.stack([est.values[pos[0]], est.values[neg[0]]])
        self._mags = est.magnitudes
        self.max_magnitude = float(est.magnitudes[-1])

    def _radial(self, row: np.ndarray, r: np.ndarray) -> np.ndarray:
        mags = np.concatenate([[0.0], self._mags])
        vals = np.concatenate([[0.0], row])
        return np.interp(r, mags, vals)

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        """Evaluate at gradient samples of shape (..., dim)."""
        xi = np.asarray(xi, dtype=float)
        squeeze = xi.ndim == 1
        pts = np.atleast_2d(xi)
        r = np.linalg.norm(pts, axis=1)
        if np.any(r > self.max_magnitude * (1 + 1e-9)):
            raise TableRangeError(
                f"gradient magnitude {r.max():.4g} exceeds the table range "
                f"{self.max_magnitude:.4g}; extend the table")
        out = np.zeros(pts.shape[0])
        live = r > 0
        if self.dim == 1:
            pos = pts[:, 0] >= 0
            for sel, row in ((live & pos, self._vals[0]), (live & ~pos, self._vals[1])):
                if np.any(sel):
                    out[sel] = self._radial(row, r[sel])
        else:
            ang = np.arctan2(pts[live, 1], pts[live, 0])
            # wrap into the table's angular window
            ang = self._angles[0] + np.mod(ang - self._angles[0], 2 * np.pi)
            angles = np.concatenate([self._angles, [self._angles[0] + 2 * np.pi]])
            vrows = np.vstack([self._vals, self._vals[:1]])
            idx = np.clip(np.searchsorted(angles, ang) - 1, 0, len(self._angles) - 1)
            a0 = angles[idx]
            a1 = angles[idx + 1]
            w = np.clip((ang - a0) / np.maximum(a1 - a0, 1e-300), 0.0, 1.0)
            rv = r[live]
            v0 = np.empty(rv.shape)
            v1 = np.empty(rv.shape)
            for i in np.unique(idx):
                sel = idx == i
                v0[sel] = self._radial(vrows[i], rv[sel])
                v1[sel] = self._radial(vrows[i + 1], rv[sel])
            out[live] = (1 - w) * v0 + w * v1
        return out[0] if squeeze else out
