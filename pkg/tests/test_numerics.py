"""Grid plumbing and the monotone discrete operators."""

import numpy as np
import pytest

from hjhomog.fields import DiffusionSpec, constant_field, make_periodic_field
from hjhomog.numerics import (
    DIRICHLET, INTERIOR, OUTFLOW,
    Grid, GridFunction, apply_outflow, centered_gradient_grid,
    diffusion_grid, diffusion_term, field_on_grid, scheme_residual,
    upwind_gradient, upwind_gradient_grid,
)

SIN_PROFILE = {"base": 2.0, "terms": [[1.0, 0, 1, 0.0, "sin"]]}


def _box_grid(h=0.1, half=1.0, dim=2):
    return Grid.box(-half * np.ones(dim), half * np.ones(dim), h)


def _linear(grid, q):
    vals = np.tensordot(np.asarray(q, dtype=float), grid.coords(), axes=(0, 0))
    return GridFunction(grid, vals)


# -- grid / mask --------------------------------------------------------------------


def test_halfspace_mask_is_exact():
    e = np.array([3.0, 4.0]) / 5.0
    g = Grid.halfspace_slab(e, s_offset=0.0, depth=2.0, width=4.0, h=0.1)
    pts = g.points()
    dots = pts @ e
    mask = g.mask.ravel()
    assert np.all(mask[dots <= 1e-12] == DIRICHLET)
    inner = mask == INTERIOR
    assert np.all(dots[inner] > 0)


def test_interior_nodes_have_full_stencils():
    g = _box_grid()
    inner = g.mask == INTERIOR
    for ax in range(2):
        sl = [slice(None)] * 2
        for side in (0, -1):
            sl[ax] = side
            assert not np.any(inner[tuple(sl)])


def test_grid_rejects_bad_spacing():
    with pytest.raises(ValueError):
        Grid(h=-0.1, shape=(4, 4), origin=np.zeros(2))
    with pytest.raises(ValueError):
        Grid.torus(side=1.05, h=0.1, dim=1)


def test_gridfunction_dump_round_trip(tmp_path):
    g = Grid.halfspace_slab(np.array([1.0, 0.0]), 0.0, 2.0, 3.0, 0.25)
    u = GridFunction(g, np.random.default_rng(0).normal(size=g.shape))
    u.dump(tmp_path / "u")
    v = GridFunction.load(tmp_path / "u")
    assert np.array_equal(u.values, v.values)
    assert v.grid.h == g.h and v.grid.topology == g.topology
    assert np.array_equal(v.grid.mask, g.mask)


# -- upwind gradient -----------------------------------------------------------------


def test_upwind_gradient_linear_exact():
    g = _box_grid(h=0.05)
    u = _linear(g, [3.0, 0.0])
    grad = upwind_gradient_grid(u)
    inner = g.mask == INTERIOR
    assert np.allclose(grad[0][inner], 3.0, atol=1e-12)
    assert np.allclose(grad[1][inner], 0.0, atol=1e-12)
    node = (10, 10)
    np.testing.assert_allclose(upwind_gradient(u, node), [3.0, 0.0], atol=1e-12)


def test_upwind_gradient_constant_zero():
    g = _box_grid()
    u = GridFunction(g, np.full(g.shape, 7.0))
    assert np.all(upwind_gradient_grid(u) == 0.0)


def test_upwind_gradient_at_kink():
    # u = |x . e|: the kink node sees 0, its neighbors the full slope |e|
    g = Grid.box(np.array([-1.0]), np.array([1.0]), 0.1)
    e = 1.0
    u = GridFunction(g, np.abs(g.axes()[0] * e))
    kink = g.index_of([0.0])
    assert upwind_gradient(u, kink)[0] == 0.0
    nxt = (kink[0] + 1,)
    assert upwind_gradient(u, nxt)[0] == pytest.approx(1.0, abs=1e-12)


def test_upwind_gradient_torus_wraps():
    g = Grid.torus(side=1.0, h=0.25, dim=1, origin=np.zeros(1))
    u = GridFunction(g, np.array([0.0, 1.0, 0.0, 1.0]))
    grad = upwind_gradient_grid(u)
    assert grad.shape == (1, 4)
    assert np.isfinite(grad).all()


# -- diffusion -----------------------------------------------------------------------


def test_curvature_diffusion_on_radial_paraboloid():
    # u = |x|^2 / 2 has tr((I - g@g) D^2 u) = d - 1 away from the origin
    g = _box_grid(h=0.05)
    c = g.coords()
    u = GridFunction(g, 0.5 * (c[0] ** 2 + c[1] ** 2))
    f = constant_field(1.0, dim=2, p=1.0, diffusion=DiffusionSpec("curvature"))
    val = diffusion_grid(u, f, eps_reg=g.h)
    pts = g.points()
    away = (np.linalg.norm(pts, axis=1) > 0.3).reshape(g.shape)
    away &= g.mask == INTERIOR
    np.testing.assert_allclose(val[away], 1.0, atol=1e-9)
    node = g.index_of([0.5, 0.5])
    assert diffusion_term(u, f, node, eps_reg=g.h) == pytest.approx(1.0, abs=1e-9)


def test_diffusion_zero_matrix():
    g = _box_grid()
    u = GridFunction(g, np.random.default_rng(1).normal(size=g.shape))
    f = constant_field(1.0, dim=2, p=1.0)  # A = 0
    assert np.all(diffusion_grid(u, f, eps_reg=g.h) == 0.0)


def test_curvature_projection_kills_gradient_direction():
    # u = x1^2/2: gradient along x1, Hessian only in x1 -> projected trace 0
    g = _box_grid(h=0.05)
    u = GridFunction(g, 0.5 * g.coords()[0] ** 2)
    f = constant_field(1.0, dim=2, p=1.0, diffusion=DiffusionSpec("curvature"))
    val = diffusion_grid(u, f, eps_reg=g.h)
    away = (np.abs(g.coords()[0]) > 0.2) & (g.mask == INTERIOR)
    np.testing.assert_allclose(val[away], 0.0, atol=1e-9)


def test_isotropic_diffusion_is_laplacian():
    g = _box_grid(h=0.05)
    c = g.coords()
    u = GridFunction(g, c[0] ** 2 + 3.0 * c[1] ** 2)
    f = constant_field(1.0, dim=2, p=1.0, diffusion=DiffusionSpec("isotropic"))
    val = diffusion_grid(u, f, eps_reg=g.h)
    inner = g.mask == INTERIOR
    np.testing.assert_allclose(val[inner], 8.0, atol=1e-8)


def test_degenerate_gradient_uses_envelope_midpoint():
    # saddle u = (x1^2 - x2^2)/2 at the origin: gradient 0; the directional
    # values over the net are +-1, so the midpoint is 0
    g = _box_grid(h=0.1)
    c = g.coords()
    u = GridFunction(g, 0.5 * (c[0] ** 2 - c[1] ** 2))
    f = constant_field(1.0, dim=2, p=1.0, diffusion=DiffusionSpec("curvature"))
    val = diffusion_grid(u, f, eps_reg=g.h)
    assert val[g.index_of([0.0, 0.0])] == pytest.approx(0.0, abs=1e-10)


# -- residual ------------------------------------------------------------------------


def test_residual_exact_plane_solution():
    # a = 2, p = 1, A = 0, u = 0.5 (x . e), mu = 1: H(Du) = 2 * 0.5 = 1
    g = _box_grid(h=0.1)
    f = constant_field(2.0, dim=2, p=1.0)
    u = _linear(g, [0.5, 0.0])
    res = scheme_residual(u, f, mu=1.0, eps_reg=g.h)
    inner = g.mask == INTERIOR
    np.testing.assert_allclose(res.values[inner], 0.0, atol=1e-12)


def test_residual_of_zero_function():
    g = _box_grid()
    f = constant_field(2.0, dim=2, p=1.0)
    u = GridFunction(g, np.zeros(g.shape))
    res = scheme_residual(u, f, mu=1.0, eps_reg=g.h)
    inner = g.mask == INTERIOR
    np.testing.assert_allclose(res.values[inner], -1.0, atol=1e-14)


@pytest.mark.parametrize("spec", [DiffusionSpec("none"), DiffusionSpec("isotropic")])
def test_residual_monotone_in_neighbors(spec):
    # raising any neighbor value does not raise the residual at a node
    rng = np.random.default_rng(3)
    g = _box_grid(h=0.2, half=0.6)
    f = make_periodic_field(SIN_PROFILE, dim=2, p=1.0, diffusion=spec)
    eps = 1e-6
    for trial in range(5):
        u = GridFunction(g, rng.normal(size=g.shape))
        base = scheme_residual(u, f, 1.0, g.h).values
        node = (3, 3)
        for off in [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (1, 1), (1, -1), (-1, 1)]:
            nb = (node[0] + off[0], node[1] + off[1])
            up = u.copy()
            up.values[nb] += eps
            bumped = scheme_residual(up, f, 1.0, g.h).values
            assert bumped[node] <= base[node] + 1e-12


def test_residual_axis_monotone_at_frozen_direction():
    # where the gradient is degenerate the diffusion direction is frozen on
    # the net, and axis-neighbor monotonicity is exact
    rng = np.random.default_rng(4)
    g = _box_grid(h=0.2, half=0.6)
    f = constant_field(1.5, dim=2, p=1.0, diffusion=DiffusionSpec("curvature"))
    eps = 1e-8
    for trial in range(5):
        c = g.coords()
        a, b = rng.normal(size=2)
        u = GridFunction(g, 0.5 * (a * c[0] ** 2 + b * c[1] ** 2))  # critical point at 0
        node = g.index_of([0.0, 0.0])
        base = scheme_residual(u, f, 1.0, g.h).values
        for off in [(-1, 0), (1, 0), (0, -1), (0, 1)]:
            nb = (node[0] + off[0], node[1] + off[1])
            up = u.copy()
            up.values[nb] += eps
            bumped = scheme_residual(up, f, 1.0, g.h).values
            assert bumped[node] <= base[node] + 1e-13


def test_residual_quasilinear_monotonicity_defect_is_first_order():
    # at generic nodes the diffusion direction moves with the neighbors;
    # any monotonicity violation is O(eps), i.e. vanishes with the bump
    rng = np.random.default_rng(5)
    g = _box_grid(h=0.2, half=0.6)
    f = constant_field(1.5, dim=2, p=1.0, diffusion=DiffusionSpec("curvature"))
    node = (3, 3)
    for trial in range(5):
        u = GridFunction(g, rng.normal(size=g.shape))
        base = scheme_residual(u, f, 1.0, g.h).values
        for off in [(-1, 0), (1, 0), (0, -1), (0, 1)]:
            nb = (node[0] + off[0], node[1] + off[1])
            violations = []
            for eps in (1e-4, 1e-5, 1e-6):
                up = u.copy()
                up.values[nb] += eps
                bumped = scheme_residual(up, f, 1.0, g.h).values
                violations.append(max(0.0, bumped[node] - base[node]) / eps)
            # the violation rate stays bounded as eps -> 0
            assert violations[-1] <= max(10.0, 2.0 * violations[0] + 1.0)


def test_residual_consistency_first_order_in_h():
    # smooth u with |Du| bounded away from 0: the residual converges to the
    # analytic operator value at order >= 1
    f = constant_field(2.0, dim=2, p=1.5, diffusion=DiffusionSpec("curvature"))
    q = np.array([1.0, 0.5])
    M = np.array([[0.8, 0.2], [0.2, -0.4]])
    mu = 1.0

    def max_err(h):
        g = _box_grid(h=h, half=1.0)
        c = g.coords()
        vals = q[0] * c[0] + q[1] * c[1]
        vals += 0.5 * (M[0, 0] * c[0] ** 2 + 2 * M[0, 1] * c[0] * c[1] + M[1, 1] * c[1] ** 2)
        u = GridFunction(g, vals)
        res = scheme_residual(u, f, mu, eps_reg=h).values
        pts = g.points().reshape(2, -1, order="C")
        errs = []
        for idx in np.ndindex(g.shape):
            if g.mask[idx] != INTERIOR:
                continue
            x = g.origin + g.h * np.array(idx)
            grad = q + M @ x
            n = np.linalg.norm(grad)
            A = f.diffusion_matrix(grad / n, x)
            exact = -np.trace(A @ M) + 2.0 * n**1.5 - mu
            errs.append(abs(res[idx] - exact))
        return max(errs)

    e1, e2 = max_err(0.1), max_err(0.05)
    assert e2 <= 0.6 * e1  # order >= 1 (0.5 up to slack)


def test_apply_outflow_copies_slope():
    g = _box_grid(h=0.25, half=1.0)
    u = _linear(g, [2.0, 0.0])
    vals = u.values.copy()
    vals[0, :] = 99.0  # scribble on an outflow face
    apply_outflow(vals, g)
    np.testing.assert_allclose(vals[0, :], u.values[0, :], atol=1e-12)
