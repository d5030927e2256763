"""Approximate corrector problem on a torus.

Solves delta * v - tr(A(xi + Dv, x) D^2 v) + H(xi + Dv, x) = 0 periodically
and extracts -delta * v(0, xi), the resolvent approximation of the effective
Hamiltonian at gradient xi.  The gradient shift enters both nonlinearities
analytically (no linear tilt of v, which would not be torus-compatible);
random fields are wrapped periodically on the torus, with the cell streams
of the fundamental domain unchanged so that enlarging the torus leaves the
medium near the origin intact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import CoefficientField
from .numerics import Grid, GridFunction, field_on_grid, scheme_residual, upwind_gradient_grid
from .metric import NonConvergenceError, SolverConfig

__all__ = [
    "CorrectorConfig", "CorrectorSolution", "XiContinuity",
    "make_corrector_torus", "solve_corrector", "corrector_xi_continuity",
]


@dataclass
class CorrectorConfig(SolverConfig):
    cfl: float = 0.8
    side_factor: float = 8.0
    max_iters: int = 2_000_000


@dataclass
class CorrectorSolution:
    v: GridFunction
    delta: float
    xi: tuple
    dvd0: float
    residual_norm: float
    iters: int
    field_descriptor: dict

    @property
    def grid(self) -> Grid:
        return self.v.grid


def make_corrector_torus(delta: float, h: float, dim: int,
                         side_factor: float = 8.0) -> Grid:
    """Centered torus whose side out-scales the 1/delta localization length."""
    side = max(1, int(math.ceil(side_factor / delta)))
    n = int(round(side / h))
    if abs(n * h - side) > 1e-9:
        raise ValueError("torus side must be an integer multiple of h")
    origin = -np.full(dim, side / 2.0)
    return Grid(h=h, shape=(n,) * dim, origin=origin, topology="torus")


def _wrap_field(field: CoefficientField, side: float) -> CoefficientField:
    if hasattr(field, "periodize"):
        return field.periodize(side)
    if field.kind == "periodic-trig":
        ratio = side / field.period
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("torus side must be a multiple of the field period")
    return field


def solve_corrector(field: CoefficientField, xi, delta: float, torus: Grid = None,
                    cfg: CorrectorConfig = None, *, h: float = None) -> CorrectorSolution:
    """Damped pseudo-time iteration for the torus corrector problem."""
    cfg = cfg or CorrectorConfig()
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    xi = np.asarray(xi, dtype=float)
    if torus is None:
        if h is None:
            raise ValueError("either a torus grid or h must be given")
        torus = make_corrector_torus(delta, h, xi.shape[0], cfg.side_factor)
    if torus.topology != "torus":
        raise ValueError("corrector problems live on a torus")
    side = torus.shape[0] * torus.h
    if side + 1e-9 < cfg.side_factor / delta:
        raise ValueError(
            f"torus side {side} under-resolves the localization length "
            f"{cfg.side_factor}/delta = {cfg.side_factor / delta}")

    wrapped = _wrap_field(field, side)
    bounds = field.bounds
    a_vals = field_on_grid(wrapped, torus)
    xin = float(np.linalg.norm(xi))

    # constant-coefficient exact solution as the initial guess
    v = GridFunction(torus, -a_vals * xin**bounds.p / delta)
    eps_reg = cfg.eps_reg or torus.h
    d = torus.dim
    history = []
    lip = 0.0
    iters = 0
    for it in range(cfg.max_iters):
        if it % cfg.lip_refresh == 0:
            grad = upwind_gradient_grid(v, xi=xi)
            lip = float(np.sqrt(np.sum(grad * grad, axis=0)).max())
        zmax = max(1.0, xin + lip)
        rate = delta + bounds.p * bounds.C0 * zmax ** (bounds.p - 1.0) * d / torus.h
        if field.diffusion.active:
            rate += d * (d + 1) * field.diffusion.a_max() / torus.h**2
        dtau = cfg.cfl / rate
        res = scheme_residual(v, wrapped, 0.0, eps_reg, xi=xi, a_vals=a_vals).values
        res = res + delta * v.values
        rmax = float(np.abs(res).max())
        history.append(rmax)
        iters = it
        if rmax <= cfg.tol:
            break
        v.values -= dtau * res
        if not np.isfinite(rmax) or rmax > 1e12:
            raise NonConvergenceError("corrector iteration diverged", history[-50:])
    else:
        raise NonConvergenceError(
            f"corrector: no convergence in {cfg.max_iters} sweeps "
            f"(last residual {history[-1]:.3e})", history[-50:])

    v.check_finite()
    origin_node = torus.index_of(np.zeros(d))
    dvd0 = -delta * float(v.values[origin_node])
    return CorrectorSolution(
        v=v, delta=float(delta), xi=tuple(float(c) for c in xi), dvd0=dvd0,
        residual_norm=float(np.abs(res).max()), iters=iters,
        field_descriptor=field.descriptor(),
    )


@dataclass
class XiContinuity:
    sup_diff: float
    delta: float
    xi1: tuple
    xi2: tuple
    implied_constant: float  # C in the (C/delta) |xi1 ^ xi2|^(-2p/7) |dxi|^(2/7) envelope

    def envelope(self, C: float) -> float:
        """Evaluate the calibrated Holder envelope at zero spatial separation."""
        xi1 = np.asarray(self.xi1)
        xi2 = np.asarray(self.xi2)
        p = 1.0
        lo = min(np.linalg.norm(xi1), np.linalg.norm(xi2))
        sep = np.linalg.norm(xi1 - xi2)
        if sep == 0:
            return 0.0
        return (C / self.delta) * lo ** (-2 * p / 7) * sep ** (2.0 / 7.0)


def corrector_xi_continuity(field: CoefficientField, xi1, xi2, delta: float,
                            torus: Grid = None, cfg: CorrectorConfig = None, *,
                            h: float = None) -> XiContinuity:
    """Sup-norm distance of two corrector solutions at nearby gradients.

    The implied constant rescales the measured distance onto the Holder
    envelope in |xi1 - xi2|; tracked as a regression metric."""
    xi1 = np.asarray(xi1, dtype=float)
    xi2 = np.asarray(xi2, dtype=float)
    if np.linalg.norm(xi1) == 0 or np.linalg.norm(xi2) == 0:
        raise ValueError("both gradients must be nonzero")
    cfg = cfg or CorrectorConfig()
    if torus is None:
        torus = make_corrector_torus(delta, h, xi1.shape[0], cfg.side_factor)
    s1 = solve_corrector(field, xi1, delta, torus, cfg)
    s2 = solve_corrector(field, xi2, delta, torus, cfg)
    diff = float(np.abs(s1.v.values - s2.v.values).max())
    sep = float(np.linalg.norm(xi1 - xi2))
    lo = min(np.linalg.norm(xi1), np.linalg.norm(xi2))
    p = field.p
    implied = 0.0
    if sep > 0:
        implied = diff * delta * lo ** (2 * p / 7) / sep ** (2.0 / 7.0)
    return XiContinuity(sup_diff=diff, delta=float(delta),
                        xi1=tuple(map(float, xi1)), xi2=tuple(map(float, xi2)),
                        implied_constant=implied)
