from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad, solve_bvp
from scipy.special import gamma as gamma_fn, gammainc

from besselwalk.special import (
    bessel_exit_moments,
    bessel_hit_interval,
    imbedded_down_prob,
    regularized_upper_gamma,
)


def quad_upper_gamma(a, kappa):
    g = gamma_fn(kappa)
    # split at 1 so the integrable u^(kappa-1) singularity sits on an endpoint
    if a < 1:
        head = quad(lambda u: u ** (kappa - 1) * math.exp(-u), a, 1, epsabs=1e-14,
                    epsrel=1e-13, limit=200)[0]
        tail = quad(lambda u: u ** (kappa - 1) * math.exp(-u), 1, np.inf, epsabs=1e-14,
                    epsrel=1e-13, limit=200)[0]
        return (head + tail) / g
    return quad(lambda u: u ** (kappa - 1) * math.exp(-u), a, np.inf, epsabs=1e-15,
                epsrel=1e-13, limit=200)[0] / g


GRID = [(a, kap) for a in np.geomspace(1e-3, 40, 10) for kap in np.linspace(0.1, 3.0, 10)]


@pytest.mark.parametrize("a,kappa", GRID[::9])
def test_gamma_vs_quadrature_sample(a, kappa):
    assert regularized_upper_gamma(a, kappa) == pytest.approx(quad_upper_gamma(a, kappa),
                                                              abs=1e-10)


def test_gamma_examples():
    assert regularized_upper_gamma(0.0, 0.7) == 1.0
    for a in np.linspace(0, 30, 31):
        assert regularized_upper_gamma(a, 1.0) == pytest.approx(math.exp(-a), abs=1e-14)
    assert regularized_upper_gamma(0.5, 0.5) == pytest.approx(math.erfc(math.sqrt(0.5)),
                                                              abs=1e-12)


def test_gamma_complement_and_monotone():
    a = np.linspace(0, 25, 200)
    for kap in (0.25, 0.5, 1.5, 2.75):
        q = regularized_upper_gamma(a, kap)
        np.testing.assert_allclose(q, 1 - gammainc(kap, a), atol=1e-12)
        assert np.all(np.diff(q) < 0)


def test_gamma_domain():
    with pytest.raises(ValueError):
        regularized_upper_gamma(-1.0, 0.5)
    with pytest.raises(ValueError):
        regularized_upper_gamma(1.0, 0.0)


def test_hit_interval():
    v = bessel_hit_interval(3.0, 1.0, np.inf, 0.5)
    assert v == pytest.approx(1 - regularized_upper_gamma(4.5, 0.5), abs=1e-15)


def _bvp_oracle(x, delta):
    lo, hi = x - 1, x + 1
    s = lambda z: z ** (1 + delta)
    D = s(hi) - s(lo)
    up = lambda z: (s(z) - s(lo)) / D

    def solve(psi):
        def rhs(z, y):
            return np.vstack([y[1], delta / z * y[1] - 2 * psi(z)])
        z = np.linspace(lo, hi, 201)
        sol = solve_bvp(rhs, lambda ya, yb: np.array([ya[0], yb[0]]), z,
                        np.zeros((2, z.size)), tol=1e-10, max_nodes=100000)
        assert sol.success
        return float(sol.sol(x)[0])

    g = solve(lambda z: np.ones_like(z))
    hp = solve(up)
    hm = solve(lambda z: 1 - up(z))
    return 1 - up(x), g, hp, hm


@pytest.mark.parametrize("delta", [-0.5, 0.5, 1.0, 2.0])
@pytest.mark.parametrize("x", [3.0, 20.0])
def test_exit_moments_vs_bvp(delta, x):
    f, g, hp, hm = _bvp_oracle(x, delta)
    m = bessel_exit_moments(x, delta)
    assert m.f == pytest.approx(f, abs=1e-12)
    assert m.g == pytest.approx(g, rel=1e-6)
    assert m.h_plus_norm == pytest.approx(hp, rel=1e-6)
    assert m.h_minus_norm == pytest.approx(hm, rel=1e-6)
    assert m.h_plus_norm + m.h_minus_norm == pytest.approx(m.g, rel=1e-12)


def test_exit_moment_examples():
    m = bessel_exit_moments(7.0, 0.0)
    assert m.f == 0.5 and m.g == 1.0
    assert bessel_exit_moments(2.0, 1.0).q_BI == pytest.approx(5 / 8, rel=1e-15)
    for d in (-0.5, 0.5, 1.0, 2.0):
        m = bessel_exit_moments(1e4, d)
        assert abs(m.f - 0.5) <= 1e-3 and abs(m.g - 1) <= 1e-2
        assert abs(m.h_plus_norm - 0.5) <= 1e-2 and abs(m.h_minus_norm - 0.5) <= 1e-2


def test_exit_moment_domain():
    with pytest.raises(ValueError):
        bessel_exit_moments(1.0, 0.5)
    with pytest.raises(ValueError):
        bessel_exit_moments(5.0, -1.0)


def test_imbedded_down_prob():
    assert imbedded_down_prob(2.0, 1.0) == pytest.approx(5 / 8, rel=1e-15)
    x = np.array([1.5, 2.0, 10.0, 1e3, 1e6])
    for d in (-0.5, 0.5, 2.0):
        q = imbedded_down_prob(x, d)
        assert np.all(np.sign(q - 0.5) == np.sign(d))
        for xi, qi in zip(x, q):
            assert qi == pytest.approx(bessel_exit_moments(xi, d).q_BI, rel=1e-13)
    np.testing.assert_array_equal(imbedded_down_prob(x, 0.0), 0.5)
