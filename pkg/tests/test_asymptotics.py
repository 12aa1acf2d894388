from __future__ import annotations

import math

import numpy as np
import pytest

from besselwalk import asymptotics as asy
from besselwalk.asymptotics import Band, FormulaId
from besselwalk.exact import first_passage, occupancy
from besselwalk.walk import (
    PerturbationKind, Regime, RegimeError, WalkSpec, build_scale_table, estimate_K0,
)

R = PerturbationKind.RATIONAL
SSRW = build_scale_table(WalkSpec(0.0), 2**14)


def test_tail_ssrw():
    for n in (16, 1024, 4096):
        v = asy.exc_tail_asym(SSRW, n).value
        assert v == pytest.approx(math.sqrt(2 / math.pi) / math.sqrt(n), rel=1e-14)
    assert asy.exc_tail_asym(SSRW, 4096).value / asy.exc_tail_asym(SSRW, 1024).value \
        == pytest.approx(0.5, rel=1e-15)


def test_point_over_tail():
    for spec in (WalkSpec(0.0), WalkSpec(0.5, R), WalkSpec(2.0, R)):
        t = build_scale_table(spec, 2**12)
        for n in (64, 1000):
            a = asy.exc_point_asym(t, n, K0=1.3).value
            b = asy.exc_tail_asym(t, n, K0=1.3).value
            assert a / b == pytest.approx(2 * spec.kappa / n, rel=1e-14)
    with pytest.raises(asy.ParityError):
        asy.exc_point_asym(SSRW, 101)


def test_point_ssrw_vs_exact():
    fp = first_passage(WalkSpec(0.0), 0, 1024)
    v = asy.exc_point_asym(SSRW, 1024).value
    assert v * 1024**1.5 == pytest.approx(math.sqrt(2 / math.pi), rel=1e-14)
    assert fp.f[1024] / v == pytest.approx(1, abs=0.1)


def test_tail_rational_one():
    t = build_scale_table(WalkSpec(1.0, R), 2**14)
    fp = first_passage(WalkSpec(1.0, R), 0, 2**14)
    ev = asy.exc_tail_asym(t, 2**14)
    assert ev.regime is Regime.BOUNDARY and ev.formula_id is FormulaId.EXCTAIL
    assert fp.tail[2**14] / ev.value == pytest.approx(1, abs=0.1)


def test_regime_errors():
    t = build_scale_table(WalkSpec(-1.0), 2**12)
    with pytest.raises(RegimeError):
        asy.exc_tail_asym(t, 100)
    with pytest.raises(RegimeError):
        asy.exc_tail_sv(SSRW, 100)
    with pytest.raises(RegimeError):
        asy.return_zero_asym(t, 100)


def test_nu_and_sv():
    t = build_scale_table(WalkSpec(-1.0), 2**14)
    assert asy.nu(t, 2) == pytest.approx(1 / (2 * float(t.L_at(math.sqrt(2)))), rel=1e-15)
    vals = [asy.nu(t, n) for n in range(2, 400, 7)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    # L = 1: nu(n) = (1/2) H_{n/2} = (1/2)(ln(n/2) + gamma) + o(1)
    n = 10**4
    assert asy.nu(t, n) == pytest.approx(0.5 * (math.log(n / 2) + np.euler_gamma), abs=1e-4)
    assert asy.nu(t, n) == pytest.approx(sum(1 / l for l in range(2, n + 1, 2)), rel=1e-12)
    ev = asy.exc_tail_sv(t, n)
    assert ev.formula_id is FormulaId.EXCTAILSV
    # lambda_x = 1/(2x+1), so K0 = 1/2
    assert estimate_K0(t).value == pytest.approx(0.5, rel=1e-6)
    assert ev.value == pytest.approx(1 / (estimate_K0(t).value * asy.nu(t, n)), rel=1e-12)


def test_hit_bands():
    t = build_scale_table(WalkSpec(0.0), 2**12)
    m = 4096
    low = asy.hit_time_asym(t, 4, m)
    assert low.band is Band.LOW
    assert low.value == pytest.approx(4 * asy.exc_point_asym(t, m).value, rel=1e-14)
    mid = asy.hit_time_asym(t, 64, m)
    assert mid.band is Band.MID and mid.formula_id is FormulaId.HIT_MID
    assert mid.value == pytest.approx(2 / (math.sqrt(math.pi) * m) * math.sqrt(0.5)
                                      * math.exp(-0.5), rel=1e-14)
    fp = first_passage(WalkSpec(0.0), 64, m)
    assert fp.f[m] / mid.value == pytest.approx(1, abs=0.1)
    high = asy.hit_time_asym(t, 400, m)
    assert high.is_upper_bound and high.formula_id is FormulaId.HIT_HIGH_BOUND
    with pytest.raises(asy.ParityError):
        asy.hit_time_asym(t, 3, m)


@pytest.mark.parametrize("delta", [-0.5, 0.0, 0.5, 2.0])
def test_band_continuity(delta):
    spec = WalkSpec(delta, R)
    m = 2**14
    t = build_scale_table(spec, m)
    k = int(round(math.sqrt(0.1 * m)))
    k += (m - k) % 2
    lo = asy.hit_time_asym(t, k, m, band=Band.LOW).value
    mid = asy.hit_time_asym(t, k, m, band=Band.MID).value
    assert 0.5 <= lo / mid <= 2


def test_expected_return_time():
    # rational delta = 2: m_x = 1/(p_x lambda_x) = 4/(x(x+2))... summing to 4
    e = asy.expected_return_time(WalkSpec(2.0, R), 2**16)
    assert float(e) == pytest.approx(4.0, rel=1e-9)
    spec = WalkSpec(2.0, R)
    n = 2**14
    fp = first_passage(spec, 0, n)
    kap = spec.kappa
    c = 2 ** (2 - kap) * kap / (estimate_K0(build_scale_table(spec, 2**16)).value
                                 * math.gamma(kap))
    tail = c * n ** (1 - kap) / (kap - 1) / 2  # even terms only
    assert fp.mean_truncated() + tail == pytest.approx(float(e), rel=0.01)
    with pytest.raises(asy.DivergenceError):
        asy.expected_return_time(WalkSpec(0.0))
    # m_1 = 1/q_1 through the first term of the series
    s = WalkSpec(3.0, R, x_override=(0.3,))
    e3 = asy.expected_return_time(s, 2**12)
    assert e3.value > 1 + 1 / 0.7


def test_return_zero():
    n = 4096
    ev = asy.return_zero_asym(SSRW, n)
    assert ev.value == pytest.approx(math.sqrt(2 / math.pi) / math.sqrt(n), rel=1e-14)
    u = occupancy(WalkSpec(0.0), 0, n, full=False).tracked[0][n]
    assert u / ev.value == pytest.approx(1, abs=0.1)
    t2 = build_scale_table(WalkSpec(2.0, R), 2**12)
    assert asy.return_zero_asym(t2, 100).value == asy.return_zero_asym(t2, 2000).value
    assert asy.return_zero_asym(t2, 100).formula_id is FormulaId.RET0_POSREC


def test_truncated_mean():
    spec = WalkSpec(1.0, R)
    t = build_scale_table(spec, 2**12)
    fp = first_passage(spec, 0, 10**4)
    direct = sum(l * fp.f[l] for l in range(10**4 + 1))
    assert asy.truncated_mean(t, 10**4) == pytest.approx(direct, rel=1e-12)
    vals = [asy.truncated_mean(t, n) for n in (100, 200, 1000, 5000)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    # beyond the exact limit the asymptotic increment is appended
    hybrid = asy.truncated_mean(t, 6000, exact_limit=4000)
    assert hybrid == pytest.approx(asy.truncated_mean(t, 6000), rel=1e-3)
    ev = asy.return_zero_asym(t, 4000)
    assert ev.formula_id is FormulaId.RET0_BOUNDARY


def test_occupancy_location_forms():
    t = build_scale_table(WalkSpec(0.0), 2**12)
    n = 4096
    low = asy.location_asym(t, 1, n - 1)
    assert low.formula_id is FormulaId.LOC_LOW
    assert low.value == pytest.approx(asy.return_zero_asym(t, n).value / 0.5, rel=1e-14)
    u = occupancy(WalkSpec(0.0), 0, n + 1, full=False, track=(1,)).tracked[1][n + 1]
    assert u / asy.location_asym(t, 1, n + 1).value == pytest.approx(1, abs=0.15)
    occ = asy.occupancy_zero_asym(t, 3, n - 1)
    assert occ.formula_id is FormulaId.OCC0_LOW
    hi = asy.occupancy_zero_asym(t, 800, n)
    assert hi.is_upper_bound and hi.shape_only
    t1 = build_scale_table(WalkSpec(1.0, R), 2**12)
    mid = asy.occupancy_zero_asym(t1, 40, 1600, mu0=10.0)
    assert mid.value == pytest.approx(2 / 10 * math.exp(-0.5), rel=1e-14)


def test_upper_bound_flags():
    for spec in (WalkSpec(0.0), WalkSpec(1.0, R), WalkSpec(2.0, R)):
        t = build_scale_table(spec, 2**12)
        for fn in (asy.occupancy_zero_asym, asy.location_asym):
            for k in (2, 40, 400):
                ev = fn(t, k, 2000, mu0=5.0, E0=4.0)
                assert ev.is_upper_bound == (ev.formula_id in asy.UPPER_BOUND_IDS)
                assert ev.is_upper_bound == (ev.band is Band.HIGH)


def test_uselambda_consistency():
    spec = WalkSpec(0.5, R)
    t = build_scale_table(spec, 2**14)
    n = 2**14
    ratios = []
    for k in (4, 8, 16, 32):
        a = asy.location_asym(t, k, n, chi=0.1).value
        b = asy.uselambda_asym(t, k, n).value
        ratios.append(abs(a / b - 1))
    assert all(y < x for x, y in zip(ratios, ratios[1:]))
    assert ratios[-1] < 0.01


@pytest.mark.parametrize("delta", [-0.5, 0.0, 0.5, 1.0, 2.0])
def test_sametail(delta):
    spec = WalkSpec(delta, R)
    t = build_scale_table(spec, 2**16)
    devs = []
    for n in (2**10, 2**14, 2**18):
        h = math.sqrt(n)
        lhs = 1.0 / float(t.M_at(h))
        rhs = 2**spec.kappa * spec.kappa * math.gamma(spec.kappa) * asy.exc_tail_asym(t, n).value
        devs.append(abs(lhs / rhs - 1))
    assert (devs[-1] < devs[0] or devs[0] < 1e-12) and devs[-1] < 0.02
