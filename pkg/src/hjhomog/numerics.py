"""Uniform Cartesian grids and monotone discrete operators.

The spatial discretization is the classical monotone one for coercive
Hamilton-Jacobi equations: a Godunov/Rouy-Tourin upwind gradient feeds the
Hamiltonian, the quasilinear diffusion tr(A(Du/|Du|, x) D^2 u) uses centered
differences with the direction frozen at the centered gradient, and the
singularity at vanishing gradient is regularized by taking the midpoint of
the min/max of tr(A(e, x) D^2 u) over a fixed direction net, a value between
the lower and upper semicontinuous envelopes.

All operators exist in two forms: a vectorized whole-grid form used by the
solvers (Jacobi sweeps writing to a fresh buffer, so node updates are order
independent) and a pointwise form used by tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .fields import CoefficientField

__all__ = [
    "INTERIOR", "DIRICHLET", "OUTFLOW",
    "Grid", "GridFunction",
    "field_on_grid",
    "upwind_gradient", "upwind_gradient_grid",
    "centered_gradient_grid",
    "diffusion_term", "diffusion_grid",
    "scheme_residual",
    "apply_outflow",
    "direction_net",
]

INTERIOR, DIRICHLET, OUTFLOW = 0, 1, 2


@dataclass
class Grid:
    """Node-indexed uniform grid with spacing h and a per-node boundary mask.

    topology 'torus' wraps every axis and carries no mask; 'box' and
    'half-space' carry a mask marking dirichlet (pinned data) and outflow
    (one-sided extrapolation) nodes.  Node i sits at origin + h * i.
    """

    h: float
    shape: tuple
    origin: np.ndarray
    topology: str = "box"
    mask: np.ndarray = None
    halfspace_e: np.ndarray = None
    halfspace_offset: float = 0.0

    def __post_init__(self):
        self.shape = tuple(int(n) for n in self.shape)
        self.origin = np.asarray(self.origin, dtype=float)
        if self.h <= 0:
            raise ValueError("grid spacing must be positive")
        if self.topology not in ("box", "half-space", "torus"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.topology == "torus":
            self.mask = None
        else:
            if self.mask is None:
                self.mask = np.zeros(self.shape, dtype=np.uint8)
            self._seal_boundary()
            self._check_stencils()

    def _seal_boundary(self):
        # a non-dirichlet node on the array boundary cannot carry a full
        # stencil; it becomes an outflow node
        for ax in range(self.dim):
            for side in (slice(0, 1), slice(-1, None)):
                sl = [slice(None)] * self.dim
                sl[ax] = side
                face = self.mask[tuple(sl)]
                face[face == INTERIOR] = OUTFLOW

    def _check_stencils(self):
        inner = self.mask == INTERIOR
        for ax in range(self.dim):
            for side in (slice(0, 1), slice(-1, None)):
                sl = [slice(None)] * self.dim
                sl[ax] = side
                if np.any(inner[tuple(sl)]):
                    raise ValueError("interior node with incomplete stencil")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    def axes(self):
        return [self.origin[i] + self.h * np.arange(self.shape[i]) for i in range(self.dim)]

    def coords(self):
        """Meshgrid coordinate arrays, shape (dim, *shape)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=0)

    def points(self):
        return self.coords().reshape(self.dim, -1).T

    def index_of(self, x) -> tuple:
        idx = np.rint((np.asarray(x, dtype=float) - self.origin) / self.h).astype(int)
        if self.topology == "torus":
            idx = np.mod(idx, self.shape)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.shape)):
            raise ValueError(f"point {x} outside grid")
        return tuple(int(i) for i in idx)

    # factories ---------------------------------------------------------------

    @staticmethod
    def box(lo, hi, h: float) -> "Grid":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        shape = tuple(int(round((b - a) / h)) + 1 for a, b in zip(lo, hi))
        return Grid(h=h, shape=shape, origin=lo, topology="box")

    @staticmethod
    def halfspace_slab(e, s_offset: float, depth: float, width: float, h: float) -> "Grid":
        """Box around the half-space target {x . e <= -s_offset}.

        The box extends `depth` ahead of the target plane along e and `width`
        laterally; nodes with x . e <= -s_offset are dirichlet, the remaining
        outer faces outflow.
        """
        e = np.asarray(e, dtype=float)
        e = e / np.linalg.norm(e)
        d = e.shape[0]
        margin = 2 * h
        lo = np.empty(d)
        hi = np.empty(d)
        for i in range(d):
            # extent along axis i needed to contain the slab
            lo[i] = -s_offset * abs(e[i]) - (width / 2) * math.sqrt(max(0.0, 1 - e[i] ** 2)) - margin
            hi[i] = depth * abs(e[i]) + (width / 2) * math.sqrt(max(0.0, 1 - e[i] ** 2)) + margin
            if e[i] < 0:
                lo[i], hi[i] = -hi[i], -lo[i]
        if d == 1:
            lo[0] = -s_offset - margin
            hi[0] = depth + margin
            if e[0] < 0:
                lo[0], hi[0] = -hi[0], -lo[0]
        g = Grid.box(lo, hi, h)
        g.topology = "half-space"
        g.halfspace_e = e
        g.halfspace_offset = -s_offset
        dots = np.tensordot(e, g.coords(), axes=(0, 0))
        g.mask[dots <= -s_offset + 1e-12 * max(1.0, s_offset)] = DIRICHLET
        g._seal_boundary()
        return g

    @staticmethod
    def torus(side: float, h: float, dim: int, origin=None) -> "Grid":
        n = int(round(side / h))
        if abs(n * h - side) > 1e-9 * side:
            raise ValueError("torus side must be an integer multiple of h")
        if origin is None:
            origin = -np.full(dim, side / 2.0)
        return Grid(h=h, shape=(n,) * dim, origin=origin, topology="torus")


@dataclass
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError("values shape does not match grid")

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())

    def at(self, x) -> float:
        return float(self.values[self.grid.index_of(x)])

    def check_finite(self):
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("non-finite grid function values")

    # persistence ---------------------------------------------------------------

    def dump(self, prefix) -> None:
        """Raw little-endian float64 array + structured-text header."""
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        prefix.with_suffix(".bin").write_bytes(self.values.astype("<f8").tobytes(order="C"))
        g = self.grid
        counts = {"interior": g.n_nodes, "dirichlet": 0, "outflow": 0}
        if g.mask is not None:
            counts = {
                "interior": int(np.sum(g.mask == INTERIOR)),
                "dirichlet": int(np.sum(g.mask == DIRICHLET)),
                "outflow": int(np.sum(g.mask == OUTFLOW)),
            }
            prefix.with_suffix(".mask.bin").write_bytes(g.mask.astype(np.uint8).tobytes(order="C"))
        header = {
            "dims": list(g.shape),
            "h": g.h,
            "origin": [float(v) for v in g.origin],
            "topology": g.topology,
            "mask_summary": counts,
            "dtype": "<f8",
            "order": "C",
        }
        if g.topology == "half-space":
            header["halfspace_e"] = [float(v) for v in g.halfspace_e]
            header["halfspace_offset"] = g.halfspace_offset
        prefix.with_suffix(".json").write_text(json.dumps(header, sort_keys=True, indent=1))

    @staticmethod
    def load(prefix) -> "GridFunction":
        prefix = Path(prefix)
        header = json.loads(prefix.with_suffix(".json").read_text())
        shape = tuple(header["dims"])
        vals = np.frombuffer(prefix.with_suffix(".bin").read_bytes(), dtype="<f8").reshape(shape)
        mask = None
        mask_path = prefix.with_suffix(".mask.bin")
        if mask_path.exists():
            mask = np.frombuffer(mask_path.read_bytes(), dtype=np.uint8).reshape(shape).copy()
        g = Grid(h=header["h"], shape=shape, origin=np.asarray(header["origin"]),
                 topology=header["topology"], mask=mask)
        if g.topology == "half-space":
            g.halfspace_e = np.asarray(header["halfspace_e"])
            g.halfspace_offset = header["halfspace_offset"]
        return GridFunction(g, vals.copy())


def field_on_grid(field: CoefficientField, grid: Grid, scale: float = 1.0) -> np.ndarray:
    """Coefficient values at grid nodes (a(x/scale) when scale != 1)."""
    pts = grid.points()
    if scale != 1.0:
        pts = pts / scale
    return field.a(pts).reshape(grid.shape)


# -- stencil plumbing ---------------------------------------------------------


def _pad(values: np.ndarray, grid: Grid) -> np.ndarray:
    if grid.topology == "torus":
        return np.pad(values, 1, mode="wrap")
    return np.pad(values, 1, mode="edge")


def _nb(up: np.ndarray, ax: int, step: int, dim: int) -> np.ndarray:
    """Neighbor view of a padded array: step in {-1, 0, +1} along ax."""
    sl = [slice(1, -1)] * dim
    sl[ax] = slice(1 + step, up.shape[ax] - 1 + step)
    return up[tuple(sl)]


# -- first-order part ---------------------------------------------------------


def upwind_gradient_grid(u: GridFunction, xi=None) -> np.ndarray:
    """Godunov/Rouy-Tourin gradient selection, shape (dim, *grid.shape).

    Per axis the selected value g solves the Godunov minimax for a
    Hamiltonian convex and increasing in |xi + g|: at a shock (D- > D+) the
    one-sided slope with the larger |xi_i + g| wins; in the rarefaction case
    the selection clamps -xi_i into [D-, D+].  With xi = 0 this reduces to
    the familiar max(D-, -D+, 0) signed toward ascent.
    """
    g = u.grid
    d = g.dim
    up = _pad(u.values, g)
    out = np.empty((d,) + g.shape)
    for ax in range(d):
        um = _nb(up, ax, -1, d)
        upl = _nb(up, ax, +1, d)
        dm = (u.values - um) / g.h
        dp = (upl - u.values) / g.h
        s = 0.0 if xi is None else float(np.asarray(xi)[ax])
        shock = dm > dp
        pick_minus = np.abs(s + dm) >= np.abs(s + dp)
        g_shock = np.where(pick_minus, dm, dp)
        g_rare = np.minimum(np.maximum(-s, dm), dp)
        out[ax] = np.where(shock, g_shock, g_rare)
    return out


def upwind_gradient(u: GridFunction, node, xi=None) -> np.ndarray:
    """Pointwise upwind gradient at an interior node."""
    g = u.grid
    node = tuple(node)
    d = g.dim
    out = np.empty(d)
    for ax in range(d):
        lo = list(node)
        hi = list(node)
        lo[ax] -= 1
        hi[ax] += 1
        if g.topology == "torus":
            lo[ax] %= g.shape[ax]
            hi[ax] %= g.shape[ax]
        dm = (u.values[node] - u.values[tuple(lo)]) / g.h
        dp = (u.values[tuple(hi)] - u.values[node]) / g.h
        s = 0.0 if xi is None else float(np.asarray(xi)[ax])
        if dm > dp:
            out[ax] = dm if abs(s + dm) >= abs(s + dp) else dp
        else:
            out[ax] = min(max(-s, dm), dp)
    return out


def centered_gradient_grid(u: GridFunction) -> np.ndarray:
    g = u.grid
    up = _pad(u.values, g)
    return np.stack([
        (_nb(up, ax, +1, g.dim) - _nb(up, ax, -1, g.dim)) / (2 * g.h)
        for ax in range(g.dim)
    ])


# -- second-order part ----------------------------------------------------------


def direction_net(dim: int) -> np.ndarray:
    """Axis plus diagonal unit directions used for the envelope midpoint."""
    dirs = [np.eye(dim)[i] for i in range(dim)]
    for i in range(dim):
        for j in range(i + 1, dim):
            for sj in (1.0, -1.0):
                v = np.zeros(dim)
                v[i] = 1.0
                v[j] = sj
                dirs.append(v / math.sqrt(2.0))
    return np.stack(dirs)


def _second_differences(u: GridFunction):
    """Diagonal and cross second differences; cross uses the 4-point formula."""
    g = u.grid
    d = g.dim
    up = _pad(u.values, g)
    diag = np.empty((d,) + g.shape)
    h2 = g.h * g.h
    for ax in range(d):
        diag[ax] = (_nb(up, ax, +1, d) - 2.0 * u.values + _nb(up, ax, -1, d)) / h2
    cross = {}
    for i in range(d):
        for j in range(i + 1, d):
            sl_pp = [slice(1, -1)] * d
            sl_pm = [slice(1, -1)] * d
            sl_mp = [slice(1, -1)] * d
            sl_mm = [slice(1, -1)] * d
            for sl, si, sj in ((sl_pp, 1, 1), (sl_pm, 1, -1), (sl_mp, -1, 1), (sl_mm, -1, -1)):
                sl[i] = slice(1 + si, up.shape[i] - 1 + si)
                sl[j] = slice(1 + sj, up.shape[j] - 1 + sj)
            cross[(i, j)] = (up[tuple(sl_pp)] - up[tuple(sl_pm)]
                             - up[tuple(sl_mp)] + up[tuple(sl_mm)]) / (4.0 * h2)
    return diag, cross


def _tr_A_hessian(field, e_dirs: np.ndarray, diag, cross, lap):
    """tr(A(e, x) D^2 u) for unit direction field e_dirs of shape (d, *grid)."""
    kind = field.diffusion.kind
    if kind == "isotropic":
        return lap.copy()
    # curvature-type: tr((I - e@e) D^2 u) = lap - e . D^2u e
    d = e_dirs.shape[0]
    quad = np.zeros_like(lap)
    for i in range(d):
        quad += e_dirs[i] ** 2 * diag[i]
    for (i, j), cij in cross.items():
        quad += 2.0 * e_dirs[i] * e_dirs[j] * cij
    val = lap - quad
    if kind == "anisotropic-table":
        dirs = np.asarray(field.diffusion.directions)  # (k, d)
        w = np.asarray(field.diffusion.weights)
        dots = np.abs(np.tensordot(dirs, e_dirs, axes=(1, 0)))  # (k, *grid)
        val = val * w[np.argmax(dots, axis=0)]
    return val


def diffusion_grid(u: GridFunction, field: CoefficientField, eps_reg: float,
                   xi=None) -> np.ndarray:
    """tr(A(zeta/|zeta|, x) D^2 u) with zeta = xi + centered gradient.

    Where |zeta| < eps_reg the direction is ill-defined and the value is the
    midpoint of min/max of tr(A(e, x) D^2 u) over the fixed direction net,
    i.e. a value between the semicontinuous envelopes of the quasilinear
    term.
    """
    if not field.diffusion.active:
        return np.zeros(u.grid.shape)
    if eps_reg <= 0:
        raise ValueError("eps_reg must be positive")
    g = u.grid
    d = g.dim
    diag, cross = _second_differences(u)
    lap = np.sum(diag, axis=0)
    if field.diffusion.kind == "isotropic":
        return lap
    zeta = centered_gradient_grid(u)
    if xi is not None:
        zeta = zeta + np.asarray(xi, dtype=float).reshape((d,) + (1,) * d)
    nrm = np.sqrt(np.sum(zeta * zeta, axis=0))
    safe = np.maximum(nrm, 1e-300)
    e_dirs = zeta / safe
    val = _tr_A_hessian(field, e_dirs, diag, cross, lap)
    degenerate = nrm < eps_reg
    if np.any(degenerate):
        net = direction_net(d)
        stack = np.stack([
            _tr_A_hessian(field, v.reshape((d,) + (1,) * d) * np.ones((d,) + g.shape),
                          diag, cross, lap)
            for v in net
        ])
        midpoint = 0.5 * (stack.min(axis=0) + stack.max(axis=0))
        val = np.where(degenerate, midpoint, val)
    return val


def diffusion_term(u: GridFunction, field: CoefficientField, node, eps_reg: float) -> float:
    """Pointwise quasilinear diffusion at an interior node."""
    return float(diffusion_grid(u, field, eps_reg)[tuple(node)])


# -- assembled residual -----------------------------------------------------------


def scheme_residual(u: GridFunction, field: CoefficientField, mu: float,
                    eps_reg: float, xi=None, a_vals: np.ndarray = None,
                    field_scale: float = 1.0) -> GridFunction:
    """-tr(A D^2 u) + H(xi + Du, x) - mu at interior nodes, 0 on the mask.

    The stencil is degenerate elliptic: the residual is nonincreasing in each
    neighbor value for the first-order and isotropic parts (see tests for the
    exact scope under cross-coupled diffusion).  a_vals lets solvers reuse a
    precomputed coefficient array.
    """
    u.check_finite()
    g = u.grid
    if a_vals is None:
        a_vals = field_on_grid(field, g, scale=field_scale)
    grad = upwind_gradient_grid(u, xi=xi)
    if xi is not None:
        grad = grad + np.asarray(xi, dtype=float).reshape((g.dim,) + (1,) * g.dim)
    nrm = np.sqrt(np.sum(grad * grad, axis=0))
    res = field.hamiltonian_values(a_vals, nrm) - mu
    if field.diffusion.active:
        res = res - diffusion_grid(u, field, eps_reg, xi=xi)
    if g.mask is not None:
        res[g.mask != INTERIOR] = 0.0
    return GridFunction(g, res)


def apply_outflow(values: np.ndarray, grid: Grid) -> None:
    """Copy one-sided slope onto outflow nodes (linear extrapolation), in place.

    For coercive upwind Hamiltonians the characteristics leave the domain
    through these faces, so the extrapolated values never feed back into the
    upwind stencil of interior nodes.
    """
    if grid.mask is None:
        return
    d = grid.dim
    for ax in range(d):
        if grid.shape[ax] < 3:
            continue
        for hi_side in (False, True):
            sl_face = [slice(None)] * d
            sl_in1 = [slice(None)] * d
            sl_in2 = [slice(None)] * d
            sl_face[ax] = slice(-1, None) if hi_side else slice(0, 1)
            sl_in1[ax] = slice(-2, -1) if hi_side else slice(1, 2)
            sl_in2[ax] = slice(-3, -2) if hi_side else slice(2, 3)
            face_mask = grid.mask[tuple(sl_face)] == OUTFLOW
            if not np.any(face_mask):
                continue
            extrap = 2.0 * values[tuple(sl_in1)] - values[tuple(sl_in2)]
            face = values[tuple(sl_face)]
            face[face_mask] = extrap[face_mask]
