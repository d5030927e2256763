"""Effective Hamiltonian extraction: slope tables, inversion, both routes."""

import numpy as np
import pytest
from scipy import integrate

from hjhomog.corrector import CorrectorConfig
from hjhomog.effective import (
    EffectiveHamiltonianEstimate, HbarInterpolator, MonotonicityError, SlopeRow,
    SlopeTable, TableRangeError, estimate_mbar, hbar_from_corrector,
    hbar_regularity_scan, hbar_table_from_metric, invert_to_hbar,
)
from hjhomog.fields import constant_field, make_periodic_field, smoothed_checkerboard_field

SIN_PROFILE = {"base": 2.0, "terms": [[1.0, 0, 1, 0.0, "sin"]]}
T_LIST = (8.0, 14.0, 20.0, 26.0, 32.0)


def harmonic_mean_oracle():
    """<1/a>^-1 for a = 2 + sin(2 pi x) by adaptive quadrature."""
    val, err = integrate.quad(lambda s: 1.0 / (2.0 + np.sin(2 * np.pi * s)), 0, 1,
                              limit=200)
    assert err < 1e-10
    return 1.0 / val


# -- mbar ---------------------------------------------------------------------------


def test_mbar_constant_field():
    f = constant_field(2.0, dim=1, p=1.0)
    row = estimate_mbar(f, 1.0, [1.0], T_LIST, h=1 / 64)
    assert row.mbar == pytest.approx(0.5, abs=1 / 64)


def test_mbar_1d_periodic_harmonic_mean():
    f = make_periodic_field(SIN_PROFILE, dim=1)
    row = estimate_mbar(f, 1.0, [1.0], T_LIST, h=1 / 64)
    oracle = 1.0 / harmonic_mean_oracle()  # = 1/sqrt(3)
    assert oracle == pytest.approx(1 / np.sqrt(3.0), abs=1e-10)
    assert row.mbar == pytest.approx(oracle, rel=0.01)


def test_mbar_growth_sandwich():
    f = smoothed_checkerboard_field(3, base=2.0, amp=0.6, dim=1, p=1.0)
    b = f.bounds
    for mu in (0.5, 1.0, 2.0):
        row = estimate_mbar(f, mu, [1.0], T_LIST, h=1 / 32)
        lo = (mu / b.C0) ** (1 / b.p)
        hi = (mu / b.c0) ** (1 / b.p)
        assert lo - 0.02 <= row.mbar <= hi + 0.02


def test_mbar_input_validation():
    f = constant_field(1.0, dim=1, p=1.0)
    with pytest.raises(ValueError):
        estimate_mbar(f, 1.0, [1.0], (8.0, 16.0), h=1 / 16)  # < 3 points
    with pytest.raises(ValueError):
        estimate_mbar(f, 1.0, [1.0], (2.0, 8.0, 16.0), h=1 / 16)  # min < 4 ranges


# -- inversion -----------------------------------------------------------------------


def test_invert_constant_exact():
    # mbar_mu = mu / a0 for p = 1, so the inverse at t is a0 * t
    a0 = 2.0
    rows = [SlopeRow(mu=m, mbar=m / a0, stderr=1e-6, t_window=(8, 32))
            for m in np.linspace(0.5, 4.0, 8)]
    table = SlopeTable(e=(1.0,), rows=rows)
    for t in (0.4, 1.0, 1.7):
        val, unc = invert_to_hbar(table, t)
        assert val == pytest.approx(a0 * t, abs=5e-4)
        assert unc < 0.01


def test_invert_monotonicity_abort():
    rows = [SlopeRow(mu=1.0, mbar=0.5, stderr=1e-6, t_window=(8, 32)),
            SlopeRow(mu=2.0, mbar=0.4, stderr=1e-6, t_window=(8, 32)),
            SlopeRow(mu=3.0, mbar=1.2, stderr=1e-6, t_window=(8, 32))]
    with pytest.raises(MonotonicityError):
        invert_to_hbar(SlopeTable(e=(1.0,), rows=rows), 0.45)


def test_invert_out_of_range_requests_extension():
    rows = [SlopeRow(mu=m, mbar=m / 2, stderr=1e-6, t_window=(8, 32))
            for m in (1.0, 2.0, 3.0)]
    with pytest.raises(TableRangeError):
        invert_to_hbar(SlopeTable(e=(1.0,), rows=rows), 5.0)


def test_metric_route_hbar_1d_periodic():
    f = make_periodic_field(SIN_PROFILE, dim=1)
    rows = [estimate_mbar(f, mu, [1.0], T_LIST, h=1 / 64)
            for mu in np.geomspace(0.8, 3.6, 7)]
    table = SlopeTable(e=(1.0,), rows=rows)
    val, unc = invert_to_hbar(table, 1.0)
    assert val == pytest.approx(harmonic_mean_oracle(), rel=0.02)


# -- corrector route ------------------------------------------------------------------


def test_corrector_route_constant_exact_at_every_delta():
    f = constant_field(2.0, dim=1, p=1.0)
    pt = hbar_from_corrector(f, [1.0], (0.5, 0.25, 0.125), h=1 / 32)
    assert all(v == pytest.approx(2.0, abs=1e-10) for v in pt.dvd0_ladder)
    assert pt.value == pytest.approx(2.0, abs=1e-8)
    assert not pt.low_confidence


def test_corrector_route_1d_periodic():
    f = make_periodic_field(SIN_PROFILE, dim=1)
    pt = hbar_from_corrector(f, [1.0], (0.2, 0.1, 0.05), h=1 / 32,
                             cfg=CorrectorConfig(tol=1e-7))
    assert pt.value == pytest.approx(harmonic_mean_oracle(), rel=0.02)


def test_cross_route_agreement_on_oracle():
    f = make_periodic_field(SIN_PROFILE, dim=1)
    rows = [estimate_mbar(f, mu, [1.0], T_LIST, h=1 / 64)
            for mu in np.geomspace(0.8, 3.6, 7)]
    metric_val, metric_unc = invert_to_hbar(SlopeTable(e=(1.0,), rows=rows), 1.0)
    pt = hbar_from_corrector(f, [1.0], (0.2, 0.1, 0.05), h=1 / 32,
                             cfg=CorrectorConfig(tol=1e-7))
    combined = metric_unc + pt.uncertainty + 0.02 * abs(metric_val)
    assert abs(metric_val - pt.value) <= combined
    oracle = harmonic_mean_oracle()
    assert abs(metric_val - oracle) <= 0.02 * oracle
    assert abs(pt.value - oracle) <= 0.02 * oracle


# -- scan ----------------------------------------------------------------------------


def _dirs_2d(k=8):
    th = np.linspace(0, 2 * np.pi, k, endpoint=False)
    return np.stack([np.cos(th), np.sin(th)], axis=-1)


def test_regularity_scan_isotropic_constant():
    a0 = 2.0
    dirs = _dirs_2d(8)
    mags = np.array([0.5, 0.75, 1.0, 1.25])
    vals = a0 * np.tile(mags, (8, 1))
    est = EffectiveHamiltonianEstimate(dirs, mags, vals,
                                       np.full_like(vals, 1e-4), route="metric-route")
    f = constant_field(a0, dim=2, p=1.0)
    rep = hbar_regularity_scan(est, f.bounds)
    assert rep.all_growth_pass
    assert rep.star_shape_ok
    assert np.all(rep.isotropy_spread <= 2e-4)
    assert rep.min_holder_exponent >= 0.25
    np.testing.assert_allclose(rep.homogeneity_exponents, 1.0, atol=1e-9)


def test_regularity_scan_flags_growth_violation():
    dirs = _dirs_2d(8)
    mags = np.array([0.5, 0.75, 1.0, 1.25])
    vals = 10.0 * np.tile(mags, (8, 1))  # exceeds C0
    est = EffectiveHamiltonianEstimate(dirs, mags, vals,
                                       np.full_like(vals, 1e-4), route="metric-route")
    f = constant_field(2.0, dim=2, p=1.0)
    rep = hbar_regularity_scan(est, f.bounds)
    assert not rep.all_growth_pass


def test_regularity_scan_size_guard():
    est = EffectiveHamiltonianEstimate(_dirs_2d(4), np.array([0.5, 1.0, 1.5, 2.0]),
                                       np.ones((4, 4)), np.full((4, 4), 1e-3),
                                       route="metric-route")
    with pytest.raises(ValueError):
        hbar_regularity_scan(est, constant_field(1.0, dim=2).bounds)


# -- interpolation --------------------------------------------------------------------


def test_interpolator_1d_pinned_at_origin():
    dirs = np.array([[1.0], [-1.0]])
    mags = np.array([0.5, 1.0, 2.0])
    vals = np.array([[1.0, 2.0, 4.0], [1.5, 3.0, 6.0]])  # asymmetric table
    est = EffectiveHamiltonianEstimate(dirs, mags, vals, np.zeros((2, 3)), "metric-route")
    hbar = HbarInterpolator(est)
    assert hbar(np.array([0.0])) == 0.0
    assert hbar(np.array([1.0])) == pytest.approx(2.0)
    assert hbar(np.array([-1.0])) == pytest.approx(3.0)
    assert hbar(np.array([0.25])) == pytest.approx(0.5)  # linear through 0
    with pytest.raises(TableRangeError):
        hbar(np.array([3.0]))


def test_interpolator_2d_isotropic_and_angle_interp():
    dirs = _dirs_2d(8)
    mags = np.array([0.5, 1.0, 1.5, 2.0])
    vals = 2.0 * np.tile(mags, (8, 1))
    est = EffectiveHamiltonianEstimate(dirs, mags, vals, np.zeros((8, 4)), "metric-route")
    hbar = HbarInterpolator(est)
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(50, 2))
    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True) * rng.uniform(0.1, 1.9, (50, 1))
    np.testing.assert_allclose(hbar(pts), 2.0 * np.linalg.norm(pts, axis=1), rtol=1e-9)
