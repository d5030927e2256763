"""Coefficient fields for quasilinear Hamilton-Jacobi equations.

A field bundles a positive forcing coefficient a(x), the Hamiltonian
H(xi, x) = a(x) |xi|^p, and a gradient-direction dependent diffusion matrix
A(e, x) = (1/2) sigma sigma^T.  Four constructions are provided:

* constant            -- a(x) = a0, the exactly-solvable reference medium;
* periodic-trig       -- trigonometric polynomial profiles, the oracle media
                         for cross-checks against periodic homogenization;
* poisson-bump        -- smooth bumps of support diameter 1 dropped on a
                         Poisson cloud, so coefficient values at distance > 1
                         are exactly independent;
* checkerboard-smoothed -- C^2 interpolation of i.i.d. lattice values with
                         sub-unit stencil, again with exact unit dependence
                         range and tight pointwise bounds.

Random kinds are generated per unit cell from counter-based streams keyed on
(seed, cell), so evaluation anywhere is a pure function of (seed, point):
nothing is stored, re-evaluation is bit-identical, and concurrent reads are
safe.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "StructuralBounds",
    "LSParams",
    "DiffusionSpec",
    "CoefficientField",
    "CoercivityReport",
    "constant_field",
    "make_periodic_field",
    "sample_poisson_bump_field",
    "smoothed_checkerboard_field",
    "field_from_descriptor",
    "field_from_text",
    "check_ls_coercivity",
    "check_mcm_condition",
]

BUMP_RADIUS = 0.5  # support radius; unit diameter makes the dependence range exactly 1
FD_STEP_FACTOR = 1e-4  # finite-difference step for field derivatives, in range units
_CELL_KEY_OFFSET = 2**31  # shifts signed cell indices into SeedSequence's uint32 domain


@dataclass(frozen=True)
class StructuralBounds:
    """Structural constants of a field: growth exponent and coefficient bounds."""

    p: float
    c0: float
    C0: float
    range_len: float = 1.0
    dim: int = 2

    def __post_init__(self):
        if not (0 < self.c0 <= self.C0 < math.inf):
            raise ValueError(f"need 0 < c0 <= C0 < inf, got c0={self.c0}, C0={self.C0}")
        if self.p < 1:
            raise ValueError(f"homogeneity exponent must satisfy p >= 1, got {self.p}")
        if self.range_len <= 0:
            raise ValueError("dependence range must be positive")
        if self.dim not in (1, 2, 3):
            raise ValueError("spatial dimension must be 1, 2 or 3")


@dataclass(frozen=True)
class LSParams:
    """Parameters of the coercivity functional check.

    theta in (0, 1/2) and kappa > 0 weight the competing terms; rho_floor is
    the required positive lower bound for the sampled infimum at the test
    radius.
    """

    theta: float = 0.25
    kappa: float = 0.5
    rho_floor: float = 0.0

    def __post_init__(self):
        if not 0 < self.theta < 0.5:
            raise ValueError("theta must lie in (0, 1/2)")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")


@dataclass(frozen=True)
class DiffusionSpec:
    """Gradient-direction dependent diffusion.

    kind 'none' is the first-order case, 'isotropic' the Laplacian,
    'curvature' the tangential projection I - e@e of mean-curvature motion,
    and 'anisotropic-table' a curvature projection scaled by a per-direction
    weight table (nearest direction, sign-symmetric).
    """

    kind: str = "none"
    directions: tuple = ()  # tuple of unit-vector tuples, table kind only
    weights: tuple = ()

    def __post_init__(self):
        if self.kind not in ("none", "isotropic", "curvature", "anisotropic-table"):
            raise ValueError(f"unknown diffusion kind {self.kind!r}")
        if self.kind == "anisotropic-table":
            if len(self.directions) != len(self.weights) or not self.weights:
                raise ValueError("anisotropic table needs matching directions and weights")
            if any(w <= 0 for w in self.weights):
                raise ValueError("table weights must be positive")

    @property
    def active(self) -> bool:
        return self.kind != "none"

    def weight(self, e: np.ndarray) -> float:
        if self.kind == "anisotropic-table":
            dots = [abs(float(np.dot(e, d))) for d in self.directions]
            return float(self.weights[int(np.argmax(dots))])
        return 1.0

    def sigma_sup(self, dim: int) -> float:
        """Frobenius bound on sigma = sqrt(2 A)."""
        if self.kind == "none":
            return 0.0
        if self.kind == "isotropic":
            return math.sqrt(2.0 * dim)
        wmax = max(self.weights) if self.kind == "anisotropic-table" else 1.0
        return math.sqrt(2.0 * wmax * max(dim - 1, 1))

    def a_max(self) -> float:
        """Operator-norm bound on A = sigma sigma^T / 2 (drives the CFL)."""
        if self.kind == "none":
            return 0.0
        if self.kind == "anisotropic-table":
            return float(max(self.weights))
        return 1.0

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "anisotropic-table":
            d["directions"] = [list(map(float, v)) for v in self.directions]
            d["weights"] = list(map(float, self.weights))
        return d

    @staticmethod
    def from_dict(d: dict) -> "DiffusionSpec":
        if d["kind"] == "anisotropic-table":
            return DiffusionSpec(
                kind=d["kind"],
                directions=tuple(tuple(v) for v in d["directions"]),
                weights=tuple(d["weights"]),
            )
        return DiffusionSpec(kind=d["kind"])


def _as_points(x, dim: int):
    """Normalize to an (n, dim) array; report whether input was a single point."""
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 1:
        if pts.shape[0] != dim:
            raise ValueError(f"point has dimension {pts.shape[0]}, field has {dim}")
        return pts[None, :], True
    if pts.shape[-1] != dim:
        raise ValueError(f"points have dimension {pts.shape[-1]}, field has {dim}")
    return pts.reshape(-1, dim), False


class CoefficientField:
    """Base class: evaluation of a, Da, H, sigma, A, and serialization."""

    kind = "abstract"

    def __init__(self, dim: int, p: float, diffusion: DiffusionSpec, seed: int = 0):
        self.dim = int(dim)
        self.p = float(p)
        self.diffusion = diffusion
        self.seed = int(seed)

    # -- coefficient ---------------------------------------------------------

    def _a_points(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def a(self, x):
        pts, single = _as_points(x, self.dim)
        vals = self._a_points(pts)
        return float(vals[0]) if single else vals

    def grad_a(self, x):
        """Centered finite-difference gradient of a; step 1e-4 of the range."""
        pts, single = _as_points(x, self.dim)
        step = FD_STEP_FACTOR * self.range_len
        g = np.empty((pts.shape[0], self.dim))
        for i in range(self.dim):
            dx = np.zeros(self.dim)
            dx[i] = step
            g[:, i] = (self._a_points(pts + dx) - self._a_points(pts - dx)) / (2 * step)
        return g[0] if single else g

    # -- declared bounds -----------------------------------------------------

    @property
    def inf_a(self) -> float:
        raise NotImplementedError

    @property
    def sup_a(self) -> float:
        raise NotImplementedError

    @property
    def range_len(self) -> float:
        return 1.0

    @property
    def bounds(self) -> StructuralBounds:
        c0 = self.inf_a
        C0 = max(self.sup_a, self.diffusion.sigma_sup(self.dim))
        return StructuralBounds(p=self.p, c0=c0, C0=C0, range_len=self.range_len, dim=self.dim)

    # -- Hamiltonian and diffusion -------------------------------------------

    def hamiltonian(self, xi, x):
        """H(xi, x) = a(x) |xi|^p."""
        xi = np.asarray(xi, dtype=float)
        nrm = float(np.linalg.norm(xi))
        return self.a(x) * nrm**self.p

    def hamiltonian_values(self, a_vals: np.ndarray, zeta_norm: np.ndarray) -> np.ndarray:
        """Vectorized H over precomputed coefficient values and gradient norms."""
        if self.p == 1.0:
            return a_vals * zeta_norm
        return a_vals * zeta_norm**self.p

    def diffusion_matrix(self, e, x) -> np.ndarray:
        """A(e, x) = (1/2) sigma sigma^T for a unit direction e."""
        d = self.dim
        if not self.diffusion.active:
            return np.zeros((d, d))
        e = np.asarray(e, dtype=float)
        nrm = np.linalg.norm(e)
        if nrm == 0:
            raise ValueError("diffusion direction must be nonzero")
        e = e / nrm  # 0-homogeneous extension
        if self.diffusion.kind == "isotropic":
            return np.eye(d)
        proj = np.eye(d) - np.outer(e, e)
        return self.diffusion.weight(e) * proj

    def sigma(self, e, x) -> np.ndarray:
        d = self.dim
        if not self.diffusion.active:
            return np.zeros((d, d))
        e = np.asarray(e, dtype=float)
        e = e / np.linalg.norm(e)
        if self.diffusion.kind == "isotropic":
            return math.sqrt(2.0) * np.eye(d)
        proj = np.eye(d) - np.outer(e, e)
        return math.sqrt(2.0 * self.diffusion.weight(e)) * proj

    # -- serialization ---------------------------------------------------------

    def _params(self) -> dict:
        raise NotImplementedError

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "dim": self.dim,
            "p": self.p,
            "diffusion": self.diffusion.to_dict(),
            "params": self._params(),
        }

    def to_text(self) -> str:
        return json.dumps(self.descriptor(), sort_keys=True)

    def __eq__(self, other):
        return isinstance(other, CoefficientField) and self.descriptor() == other.descriptor()


class _ConstantField(CoefficientField):
    kind = "constant"

    def __init__(self, value: float, dim: int, p: float, diffusion: DiffusionSpec):
        if value <= 0:
            raise ValueError("coefficient must be positive")
        super().__init__(dim, p, diffusion, seed=0)
        self.value = float(value)

    def _a_points(self, pts):
        return np.full(pts.shape[0], self.value)

    @property
    def inf_a(self):
        return self.value

    @property
    def sup_a(self):
        return self.value

    def _params(self):
        return {"value": self.value}


class _PeriodicTrigField(CoefficientField):
    """a(x) = base + sum of amp * sin/cos(2 pi freq x_axis / period + phase)."""

    kind = "periodic-trig"

    def __init__(self, base, terms, period, dim, p, diffusion):
        super().__init__(dim, p, diffusion, seed=0)
        self.base = float(base)
        self.terms = tuple(
            (float(a), int(ax), int(f), float(ph), str(fn)) for (a, ax, f, ph, fn) in terms
        )
        self.period = float(period)
        for amp, ax, f, ph, fn in self.terms:
            if fn not in ("sin", "cos"):
                raise ValueError("term function must be 'sin' or 'cos'")
            if not 0 <= ax < dim:
                raise ValueError("term axis out of range")
        lo = self.base - sum(abs(t[0]) for t in self.terms)
        if lo <= 0:
            # the amp-sum bound is conservative; fall back to a dense scan
            if self._dense_min() <= 0:
                raise ValueError("profile must be strictly positive")
        self._inf, self._sup = self._dense_min(), self._dense_max()

    def _dense_scan(self):
        # profile is separable per axis; scan each axis and combine extremes
        n = 4096
        xs = np.linspace(0.0, self.period, n, endpoint=False)
        mins, maxs = self.base, self.base
        for ax in range(self.dim):
            v = np.zeros(n)
            for amp, a2, f, ph, fn in self.terms:
                if a2 != ax:
                    continue
                arg = 2 * np.pi * f * xs / self.period + ph
                v += amp * (np.sin(arg) if fn == "sin" else np.cos(arg))
            mins += v.min()
            maxs += v.max()
        return mins, maxs

    def _dense_min(self):
        return self._dense_scan()[0]

    def _dense_max(self):
        return self._dense_scan()[1]

    def _a_points(self, pts):
        vals = np.full(pts.shape[0], self.base)
        for amp, ax, f, ph, fn in self.terms:
            arg = 2 * np.pi * f * pts[:, ax] / self.period + ph
            vals += amp * (np.sin(arg) if fn == "sin" else np.cos(arg))
        return vals

    @property
    def inf_a(self):
        return self._inf

    @property
    def sup_a(self):
        return self._sup

    @property
    def range_len(self):
        return self.period

    def _params(self):
        return {
            "base": self.base,
            "terms": [list(t) for t in self.terms],
            "period": self.period,
        }


def _cell_rng(seed: int, cell: tuple) -> np.random.Generator:
    key = tuple(int(c) + _CELL_KEY_OFFSET for c in cell)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


class _PoissonBumpField(CoefficientField):
    """base plus smooth unit-diameter bumps centered on a Poisson cloud.

    The cloud is stratified by unit cells: each cell's point count and
    positions come from an independent stream keyed on (seed, cell index),
    so any evaluation region regenerates exactly the same cloud.  The bump
    sum is capped at cap_count * bump_height, which makes the declared upper
    coefficient bound exact.
    """

    kind = "poisson-bump"

    def __init__(self, seed, intensity, bump_height, base, box, dim, p, diffusion,
                 cap_count=6, keep_box=None, alt_seed=None, wrap_side=None):
        if intensity < 0:
            raise ValueError("intensity must be nonnegative")
        if intensity == 0 and bump_height != 0:
            pass  # empty cloud is allowed; a == base
        if base <= 0:
            raise ValueError("base must be positive")
        super().__init__(dim, p, diffusion, seed=seed)
        self.intensity = float(intensity)
        self.bump_height = float(bump_height)
        self.base = float(base)
        lo, hi = np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float)
        if lo.shape != (dim,) or hi.shape != (dim,) or np.any(hi <= lo):
            raise ValueError("box must be (lo, hi) with hi > lo per axis")
        self.box = (lo, hi)
        self.cap_count = int(cap_count)
        self.keep_box = keep_box  # (lo, hi): cells meeting it keep the primary seed
        self.alt_seed = alt_seed
        self.wrap_side = None if wrap_side is None else float(wrap_side)
        self._cell_pts: dict = {}

    # pickling for worker pools: drop the point cache
    def __getstate__(self):
        state = self.__dict__.copy()
        state["_cell_pts"] = {}
        return state

    def _seed_for_cell(self, cell) -> int:
        if self.keep_box is None:
            return self.seed
        lo, hi = self.keep_box
        c = np.asarray(cell, dtype=float)
        # closed unit cell [c, c+1] intersects the keep box?
        if np.all(c + 1.0 >= np.asarray(lo)) and np.all(c <= np.asarray(hi)):
            return self.seed
        return self.alt_seed

    def _points_in_cell(self, cell) -> np.ndarray:
        cached = self._cell_pts.get(cell)
        if cached is not None:
            return cached
        rng = _cell_rng(self._seed_for_cell(cell), cell)
        n = rng.poisson(self.intensity)
        pts = np.asarray(cell, dtype=float) + rng.random((n, self.dim))
        self._cell_pts[cell] = pts
        return pts

    def _centers_near(self, lo, hi) -> np.ndarray:
        """All bump centers whose support can touch [lo, hi]."""
        if self.wrap_side is not None:
            return self._centers_wrapped()
        cell_lo = np.floor(lo - BUMP_RADIUS).astype(int)
        cell_hi = np.floor(hi + BUMP_RADIUS).astype(int)
        ranges = [range(cell_lo[i], cell_hi[i] + 1) for i in range(self.dim)]
        chunks = []
        for cell in np.ndindex(*[len(r) for r in ranges]):
            key = tuple(ranges[i][cell[i]] for i in range(self.dim))
            pts = self._points_in_cell(key)
            if len(pts):
                chunks.append(pts)
        if not chunks:
            return np.empty((0, self.dim))
        return np.concatenate(chunks, axis=0)

    def _centers_wrapped(self) -> np.ndarray:
        """Fundamental-domain centers plus seam images for torus evaluation.

        The fundamental domain is centered at the origin, so enlarging the
        torus adds cells at the fringe while the medium near the evaluation
        point stays bit-identical (the locality checks depend on this).
        """
        side = self.wrap_side
        n = int(round(side))
        if abs(side - n) > 1e-12:
            raise ValueError("wrap side must be an integer number of range lengths")
        c0 = -(n // 2)
        lo_corner = c0 * np.ones(self.dim)
        chunks = []
        for cell in np.ndindex(*([n] * self.dim)):
            key = tuple(c0 + c for c in cell)
            pts = self._points_in_cell(key)
            if len(pts):
                chunks.append(pts)
        base_pts = np.concatenate(chunks, axis=0) if chunks else np.empty((0, self.dim))
        # add periodic images of centers within one bump radius of the seam
        images = [base_pts]
        for shift in np.ndindex(*([3] * self.dim)):
            off = (np.asarray(shift) - 1) * side
            if not np.any(off):
                continue
            shifted = base_pts + off
            near = np.all(
                (shifted > lo_corner - BUMP_RADIUS)
                & (shifted < lo_corner + side + BUMP_RADIUS), axis=1
            )
            if np.any(near):
                images.append(shifted[near])
        return np.concatenate(images, axis=0)

    def _a_points(self, pts):
        if self.wrap_side is not None:
            n = int(round(self.wrap_side))
            c0 = float(-(n // 2))
            pts = c0 + np.mod(pts - c0, self.wrap_side)
        else:
            lo, hi = self.box
            if np.any(pts < lo - 1e-9) or np.any(pts > hi + 1e-9):
                raise ValueError("query outside the field's generation box")
        vals = np.full(pts.shape[0], self.base)
        if self.intensity == 0 or self.bump_height == 0:
            return vals
        centers = self._centers_near(pts.min(axis=0), pts.max(axis=0))
        if len(centers) == 0:
            return vals
        bump_sum = np.zeros(pts.shape[0])
        pt_tree = cKDTree(pts)
        cen_tree = cKDTree(centers)
        pairs = cen_tree.sparse_distance_matrix(
            pt_tree, max_distance=BUMP_RADIUS, output_type="coo_matrix"
        )
        if pairs.nnz:
            rho2 = (pairs.data / BUMP_RADIUS) ** 2
            phi = np.exp(1.0 - 1.0 / np.maximum(1.0 - rho2, 1e-300))
            phi[rho2 >= 1.0] = 0.0
            np.add.at(bump_sum, pairs.col, phi)
        cap = self.cap_count * self.bump_height
        return vals + np.minimum(self.bump_height * bump_sum, cap)

    @property
    def inf_a(self):
        return self.base

    @property
    def sup_a(self):
        return self.base + self.cap_count * self.bump_height

    def resample_outside(self, keep_box, new_seed: int) -> "_PoissonBumpField":
        """Copy of this field whose cloud is redrawn in every cell that does
        not meet keep_box; inside, the streams (hence the coefficients on a
        ball around the kept region) are untouched."""
        return _PoissonBumpField(
            seed=self.seed, intensity=self.intensity, bump_height=self.bump_height,
            base=self.base, box=self.box, dim=self.dim, p=self.p,
            diffusion=self.diffusion, cap_count=self.cap_count,
            keep_box=(np.asarray(keep_box[0], float), np.asarray(keep_box[1], float)),
            alt_seed=int(new_seed), wrap_side=self.wrap_side,
        )

    def periodize(self, side: float) -> "_PoissonBumpField":
        """Torus-wrapped variant: cells of [0, side)^d with seam images."""
        return _PoissonBumpField(
            seed=self.seed, intensity=self.intensity, bump_height=self.bump_height,
            base=self.base, box=self.box, dim=self.dim, p=self.p,
            diffusion=self.diffusion, cap_count=self.cap_count,
            keep_box=self.keep_box, alt_seed=self.alt_seed, wrap_side=side,
        )

    def _params(self):
        d = {
            "intensity": self.intensity,
            "bump_height": self.bump_height,
            "base": self.base,
            "box": [list(map(float, self.box[0])), list(map(float, self.box[1]))],
            "cap_count": self.cap_count,
        }
        if self.keep_box is not None:
            d["keep_box"] = [list(map(float, self.keep_box[0])),
                             list(map(float, self.keep_box[1]))]
            d["alt_seed"] = self.alt_seed
        if self.wrap_side is not None:
            d["wrap_side"] = self.wrap_side
        return d


def _smoothstep(u: np.ndarray) -> np.ndarray:
    # quintic: C^2 across lattice lines
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


class _SmoothedCheckerboardField(CoefficientField):
    """C^2 tensor interpolation of i.i.d. corner values on a sub-unit lattice.

    With corner spacing s the value at x depends on corners within s*sqrt(d),
    so spacing <= 1/(2 sqrt(d)) keeps the dependence range at most 1.  The
    coefficient lies in [base - amp, base + amp] exactly.
    """

    kind = "checkerboard-smoothed"

    def __init__(self, seed, base, amp, spacing, dim, p, diffusion, wrap_side=None):
        if base - amp <= 0:
            raise ValueError("need base - amp > 0 for a positive coefficient")
        if spacing > 1.0 / (2.0 * math.sqrt(dim)) + 1e-12:
            raise ValueError("spacing too large for a unit dependence range")
        super().__init__(dim, p, diffusion, seed=seed)
        self.base = float(base)
        self.amp = float(amp)
        self.spacing = float(spacing)
        self.wrap_side = None if wrap_side is None else float(wrap_side)
        if self.wrap_side is not None:
            n = self.wrap_side / self.spacing
            if abs(n - round(n)) > 1e-9:
                raise ValueError("wrap side must be a multiple of the lattice spacing")

    def _corner_values(self, idx: np.ndarray) -> np.ndarray:
        """i.i.d. uniform[-1, 1] value per lattice corner, keyed on (seed, corner)."""
        if self.wrap_side is not None:
            # centered fundamental domain: the medium near the origin does
            # not change when the torus grows
            n = int(round(self.wrap_side / self.spacing))
            i0 = -(n // 2)
            idx = i0 + np.mod(idx - i0, n)
        flat = idx.reshape(-1, self.dim)
        uniq, inv = np.unique(flat, axis=0, return_inverse=True)
        vals = np.empty(len(uniq))
        for k, corner in enumerate(uniq):
            rng = _cell_rng(self.seed, tuple(int(c) for c in corner))
            vals[k] = 2.0 * rng.random() - 1.0
        return vals[inv].reshape(idx.shape[:-1])

    def _a_points(self, pts):
        u = pts / self.spacing
        base_idx = np.floor(u).astype(np.int64)
        frac = u - base_idx
        w_hi = _smoothstep(np.clip(frac, 0.0, 1.0))
        total = np.zeros(pts.shape[0])
        for corner in np.ndindex(*([2] * self.dim)):
            off = np.asarray(corner)
            idx = base_idx + off
            w = np.ones(pts.shape[0])
            for ax in range(self.dim):
                w = w * (w_hi[:, ax] if corner[ax] else (1.0 - w_hi[:, ax]))
            total += w * self._corner_values(idx)
        return self.base + self.amp * total

    @property
    def inf_a(self):
        return self.base - self.amp

    @property
    def sup_a(self):
        return self.base + self.amp

    def periodize(self, side: float) -> "_SmoothedCheckerboardField":
        return _SmoothedCheckerboardField(
            seed=self.seed, base=self.base, amp=self.amp, spacing=self.spacing,
            dim=self.dim, p=self.p, diffusion=self.diffusion, wrap_side=side,
        )

    def _params(self):
        d = {"base": self.base, "amp": self.amp, "spacing": self.spacing}
        if self.wrap_side is not None:
            d["wrap_side"] = self.wrap_side
        return d


# -- factories ----------------------------------------------------------------

def constant_field(value: float, dim: int = 2, p: float = 1.0,
                   diffusion: DiffusionSpec = DiffusionSpec()) -> CoefficientField:
    return _ConstantField(value, dim, p, diffusion)


def make_periodic_field(profile, period: float = 1.0, dim: int = 1, p: float = 1.0,
                        diffusion: DiffusionSpec = DiffusionSpec()) -> CoefficientField:
    """Build a periodic-trig field from a profile descriptor.

    profile is {"base": b, "terms": [[amp, axis, freq, phase, "sin"|"cos"], ...]};
    a(x + period * k) = a(x) exactly for integer k.
    """
    base = profile["base"]
    terms = profile.get("terms", [])
    return _PeriodicTrigField(base, terms, period, dim, p, diffusion)


def sample_poisson_bump_field(seed: int, intensity: float, bump_height: float,
                              base: float, box, dim: int = 2, p: float = 1.0,
                              diffusion: DiffusionSpec = DiffusionSpec(),
                              cap_count: int = 6) -> CoefficientField:
    if intensity < 0:
        raise ValueError("intensity must be nonnegative")
    return _PoissonBumpField(seed, intensity, bump_height, base, box, dim, p,
                             diffusion, cap_count=cap_count)


def smoothed_checkerboard_field(seed: int, base: float, amp: float,
                                spacing: float = 0.25, dim: int = 2, p: float = 1.0,
                                diffusion: DiffusionSpec = DiffusionSpec()) -> CoefficientField:
    return _SmoothedCheckerboardField(seed, base, amp, spacing, dim, p, diffusion)


def field_from_descriptor(desc: dict) -> CoefficientField:
    kind = desc["kind"]
    diff = DiffusionSpec.from_dict(desc["diffusion"])
    prm = desc["params"]
    dim, p = desc["dim"], desc["p"]
    if kind == "constant":
        return _ConstantField(prm["value"], dim, p, diff)
    if kind == "periodic-trig":
        return _PeriodicTrigField(prm["base"], [tuple(t) for t in prm["terms"]],
                                  prm["period"], dim, p, diff)
    if kind == "poisson-bump":
        keep = prm.get("keep_box")
        return _PoissonBumpField(
            desc["seed"], prm["intensity"], prm["bump_height"], prm["base"],
            (np.asarray(prm["box"][0]), np.asarray(prm["box"][1])), dim, p, diff,
            cap_count=prm.get("cap_count", 6),
            keep_box=None if keep is None else (np.asarray(keep[0]), np.asarray(keep[1])),
            alt_seed=prm.get("alt_seed"), wrap_side=prm.get("wrap_side"),
        )
    if kind == "checkerboard-smoothed":
        return _SmoothedCheckerboardField(
            desc["seed"], prm["base"], prm["amp"], prm["spacing"], dim, p, diff,
            wrap_side=prm.get("wrap_side"),
        )
    raise ValueError(f"unknown field kind {kind!r}")


def field_from_text(text: str) -> CoefficientField:
    return field_from_descriptor(json.loads(text))


# -- structural condition checks ------------------------------------------------

@dataclass
class CoercivityReport:
    inf_value: float
    passes: bool
    theta: float
    kappa: float
    rho_floor: float
    R_test: float
    argmin_xi: tuple = ()
    argmin_x: tuple = ()
    n_samples: int = 0


def _eta_net(dim: int, kappa: float) -> np.ndarray:
    """Symmetric 9-per-axis net on the kappa-cube, clipped to the kappa-ball."""
    axes = [np.linspace(-kappa, kappa, 9)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    offs = np.stack([m.ravel() for m in mesh], axis=-1)
    keep = np.linalg.norm(offs, axis=1) <= kappa + 1e-12
    return offs[keep]


def check_ls_coercivity(field: CoefficientField, params: LSParams, R_test: float,
                        xi_grid, x_grid) -> CoercivityReport:
    """Sampled infimum of the coercivity functional over (xi, x) pairs.

    The inner infimum over the kappa-ball around xi is taken on a finite net;
    field derivatives are centered finite differences.  This is a sampled
    certificate of the structural condition, not a proof: the report records
    the parameter values used alongside the verdict.
    """
    xi_grid = np.atleast_2d(np.asarray(xi_grid, dtype=float))
    x_grid = np.atleast_2d(np.asarray(x_grid, dtype=float))
    if xi_grid.size == 0 or x_grid.size == 0:
        raise ValueError("sample grids must be nonempty")
    norms = np.linalg.norm(xi_grid, axis=1)
    if np.any(norms < R_test - 1e-12):
        raise ValueError("all xi samples must satisfy |xi| >= R_test")

    theta, kappa = params.theta, params.kappa
    d = field.dim
    step = FD_STEP_FACTOR * field.range_len
    a_vals = field.a(x_grid)
    ga = np.atleast_2d(field.grad_a(x_grid))
    if not (np.all(np.isfinite(a_vals)) and np.all(np.isfinite(ga))):
        raise FloatingPointError("non-finite field evaluation")
    offsets = _eta_net(d, kappa)

    best = math.inf
    arg = (None, None)
    for xi in xi_grid:
        xin = float(np.linalg.norm(xi))
        inner = np.full(x_grid.shape[0], math.inf)
        for off in offsets:
            eta = xi + off
            etan = float(np.linalg.norm(eta))
            if etan < 1e-12:
                continue
            H_eta = a_vals * etan**field.p
            # |D_x H| = |Da| |eta|^p for H = a |xi|^p; keep FD form via grad_a
            DxH = np.linalg.norm(ga, axis=1) * etan**field.p
            # |D_xi H| = p a |eta|^(p-1)
            DxiH = field.p * a_vals * etan ** (field.p - 1.0)
            sig = field.sigma(eta, x_grid[0])
            sig_f2 = float(np.sum(sig * sig))
            # x-derivative of sigma by centered differences (all shipped kinds
            # have x-independent sigma, but keep the generic probe)
            dsig2 = 0.0
            for i in range(d):
                dx = np.zeros(d)
                dx[i] = step
                sp = field.sigma(eta, x_grid[0] + dx)
                sm = field.sigma(eta, x_grid[0] - dx)
                dsig2 += float(np.sum(((sp - sm) / (2 * step)) ** 2))
            val = (
                theta * (1 - 2 * theta) * H_eta**2
                - (1 + kappa) ** 3 * sig_f2 * dsig2 * xin**2
                - theta * (1 + kappa) ** 2 * sig_f2 * xin * (DxH + kappa * DxiH)
            )
            inner = np.minimum(inner, val)
        j = int(np.argmin(inner))
        if inner[j] < best:
            best = float(inner[j])
            arg = (tuple(xi), tuple(x_grid[j]))
    return CoercivityReport(
        inf_value=best, passes=best >= params.rho_floor, theta=theta, kappa=kappa,
        rho_floor=params.rho_floor, R_test=float(R_test),
        argmin_xi=arg[0], argmin_x=arg[1],
        n_samples=xi_grid.shape[0] * x_grid.shape[0] * offsets.shape[0],
    )


def check_mcm_condition(field: CoefficientField, box=None, samples_per_axis: int = None) -> float:
    """inf over a dense grid of a^2 - (d-1)|Da|, the forced-curvature margin.

    Positive margin means the structural condition holds on the sampled
    region.  Rejected unless the field carries curvature-projection diffusion
    with p = 1.
    """
    if field.diffusion.kind != "curvature" or field.p != 1.0:
        raise ValueError("condition applies to forced mean-curvature fields "
                         "(curvature diffusion, p=1)")
    d = field.dim
    if box is None:
        if field.kind == "poisson-bump":
            box = field.box
        else:
            box = (np.zeros(d), np.full(d, field.range_len))
    if samples_per_axis is None:
        samples_per_axis = {1: 8192, 2: 512, 3: 64}[d]
    pad = 2 * FD_STEP_FACTOR * field.range_len  # keep FD probes inside the box
    lo = np.asarray(box[0], dtype=float) + pad
    hi = np.asarray(box[1], dtype=float) - pad
    axes = [np.linspace(lo[i], hi[i], samples_per_axis) for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    a_vals = field.a(pts)
    ga = np.atleast_2d(field.grad_a(pts))
    margin = a_vals**2 - (d - 1) * np.linalg.norm(ga, axis=1)
    if not np.all(np.isfinite(margin)):
        raise FloatingPointError("non-finite field evaluation")
    return float(margin.min())
