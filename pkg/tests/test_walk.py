from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.special import digamma, gamma, zeta

from besselwalk.walk import (
    EllipticityError,
    PerturbationKind,
    Regime,
    ScaleOverflowError,
    WalkSpec,
    build_scale_table,
    dual_spec,
    estimate_K0,
    height_tail,
    kappa_and_regime,
    perturbation_terms,
    recurrence_proxy,
    spec_from_config,
    spec_to_config,
    step_probs,
    transition_prob,
)

R = PerturbationKind.RATIONAL


def test_transition_examples():
    assert transition_prob(WalkSpec(0.0), 5) == (0.5, 0.5)
    p, q = transition_prob(WalkSpec(1.0, R), 1)
    assert p == pytest.approx(1 / 3, abs=2e-16) and q == pytest.approx(2 / 3, abs=2e-16)
    assert transition_prob(WalkSpec(1.0, R), 0) == (1.0, 0.0)


def test_rational_R_matches_closed_form():
    p, r = perturbation_terms(WalkSpec(1.0, R), 50)
    x = np.arange(1, 51)
    assert r[1] == pytest.approx(1 / 3, rel=1e-14)
    np.testing.assert_allclose(r[1:], 1.0 / (x * (2 * x + 1)), rtol=1e-13)
    np.testing.assert_allclose(p[1:], x / (2 * x + 1.0), rtol=1e-15)
    # p_x = (1/2)(1 - delta/2x + R_x/2) identically
    np.testing.assert_allclose(p[1:], 0.5 * (1 - 1 / (2 * x) + r[1:] / 2), rtol=1e-14)


def test_p_plus_q_is_one(spec):
    for x in range(0, 200):
        p, q = transition_prob(spec, x)
        assert p + q == 1.0


def test_ellipticity_rejected_without_override():
    with pytest.raises(EllipticityError):
        WalkSpec(3.0)
    s = WalkSpec(3.0, x_override=(0.3,))
    assert transition_prob(s, 1)[0] == 0.3


def test_height_limit():
    with pytest.raises(ValueError):
        transition_prob(WalkSpec(0.0), 2**53)


def test_scale_table_examples():
    t = build_scale_table(WalkSpec(0.0), 10)
    np.testing.assert_array_equal(t.lam, np.ones(11))
    np.testing.assert_array_equal(t.M, np.arange(11))
    np.testing.assert_array_equal(t.L, np.ones(11))
    t = build_scale_table(WalkSpec(1.0, R), 4)
    np.testing.assert_allclose(t.lam, [1, 2, 3, 4, 5], rtol=1e-14)
    assert t.M[4] == pytest.approx(10, rel=1e-14)
    assert height_tail(build_scale_table(WalkSpec(1.0, R), 8), 3) == pytest.approx(1 / 6, rel=1e-14)


def test_scale_table_invariants(spec):
    t = build_scale_table(spec, 4096)
    assert t.lam[0] == 1 and t.M[0] == 0 and t.M[1] == 1
    assert np.all(t.lam > 0)
    assert np.all(np.diff(t.M) > 0)
    np.testing.assert_allclose(np.diff(t.M), t.lam[:-1], rtol=1e-14)


def test_L_interpolates_linearly():
    t = build_scale_table(WalkSpec(0.0, PerturbationKind.LOG_DRIFT, c=0.3), 100)
    assert t.L_at(7.25) == pytest.approx(0.75 * t.L[7] + 0.25 * t.L[8], rel=1e-15)


def test_overflow_reported_with_log_access():
    # log lambda_x ~ 100 log x - log Gamma(101) exceeds 709 well before 2^18
    t = build_scale_table(WalkSpec(100.0, R, x_override=(0.3,) * 5), 2**18)
    with pytest.raises(ScaleOverflowError):
        _ = t.lam
    assert np.all(np.isfinite(t.log_lambda))


def test_height_tail(spec):
    t = build_scale_table(spec, 64)
    assert height_tail(t, 1) == 1.0
    vals = [height_tail(t, h) for h in range(1, 64)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert height_tail(build_scale_table(WalkSpec(0.0), 8), 4) == 0.25


def test_K0_closed_forms():
    assert estimate_K0(build_scale_table(WalkSpec(0.0), 2**12)).value == 1.0
    k1 = estimate_K0(build_scale_table(WalkSpec(1.0, R), 2**16))
    assert k1.value == pytest.approx(math.exp(2 - 2 * math.log(2)), rel=1e-6)
    # rational family: lambda_x = Gamma(x+1+d)/(Gamma(1+d) Gamma(x+1)) and
    # L(inf) = exp(d (psi(1+d/2) + euler_gamma))
    for d in (-0.5, 0.5, 2.0):
        oracle = math.exp(d * (digamma(1 + d / 2) + np.euler_gamma)) / gamma(1 + d)
        spec = WalkSpec(d, R)
        est = estimate_K0(build_scale_table(spec, 2**16))
        assert est.converged
        assert est.value == pytest.approx(oracle, rel=1e-8)


def test_K0_inverse_square_direct_sum():
    # lambda_x L(x) = exp(sum_j R_j + log((1 - R_j/2)/(1 + R_j/2))): only the
    # cubic remainder survives, so K0 is 1 up to ~1e-4 and not 1/L(inf)
    c = 0.1
    j = np.arange(1, 10**6, dtype=np.float64)
    r = c / j**2
    oracle = math.exp(np.sum(r + np.log1p(-r / 2) - np.log1p(r / 2)))
    est = estimate_K0(build_scale_table(WalkSpec(0.0, PerturbationKind.INVERSE_SQUARE, c=c), 2**16))
    assert est.value == pytest.approx(oracle, rel=1e-9)
    L_inf = math.exp(c * zeta(2))
    assert build_scale_table(WalkSpec(0.0, PerturbationKind.INVERSE_SQUARE, c=c), 2**16).L[-1] \
        == pytest.approx(L_inf, rel=1e-4)


def test_K0_needs_grid():
    with pytest.raises(ValueError):
        estimate_K0(build_scale_table(WalkSpec(0.0), 512))


def test_dual():
    s = WalkSpec(1.0, R)
    d = dual_spec(s)
    assert d.drift == -1.0
    assert transition_prob(d, 1)[0] == pytest.approx(2 / 3, abs=2e-16)
    assert transition_prob(d, 0) == (1.0, 0.0)
    dd = dual_spec(d)
    for x in range(101):
        assert transition_prob(dd, x) == transition_prob(s, x)
    z = WalkSpec(0.0)
    for x in range(101):
        assert transition_prob(dual_spec(z), x) == transition_prob(z, x)
    # dual down-probabilities are the base up-probabilities bit for bit
    p, _ = step_probs(s, 50)
    _, qd = step_probs(d, 50)
    np.testing.assert_array_equal(qd[1:], p[1:])


def test_regimes():
    assert kappa_and_regime(WalkSpec(0.0)) == (0.5, Regime.NULL_RECURRENT)
    assert kappa_and_regime(WalkSpec(1.0, R)) == (1.0, Regime.BOUNDARY)
    assert kappa_and_regime(WalkSpec(-1.0)) == (0.0, Regime.DELTA_MINUS_ONE)
    assert kappa_and_regime(WalkSpec(2.0, R))[1] is Regime.POSITIVE_RECURRENT
    assert kappa_and_regime(WalkSpec(-1.5))[1] is Regime.TRANSIENT_WARNING


@pytest.mark.parametrize("kind,c", [(PerturbationKind.LOG_DRIFT, 0.5),
                                    (PerturbationKind.INVERSE_SQUARE, 0.5)])
def test_slow_variation(kind, c):
    t = build_scale_table(WalkSpec(0.0, kind, c=c), 2**15)
    gaps = [abs(t.L[2 * x] / t.L[x] - 1) for x in (2**8, 2**10, 2**12, 2**14)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_recurrence_proxy(spec):
    assert recurrence_proxy(build_scale_table(spec, 2**14))


@pytest.mark.parametrize("delta", [0.0, 0.5, 1.0, 2.0])
def test_recurrence_proxy_literal_growth(delta):
    t = build_scale_table(WalkSpec(delta, R), 2**14)
    assert t.M[2**14] > 1.5 * t.M[2**13]


def test_recurrence_proxy_flags_transient():
    # delta = -1.5: M converges, so the last doubling adds almost nothing
    t = build_scale_table(WalkSpec(-1.5, R, x_override=(0.6,)), 2**14)
    assert not recurrence_proxy(t)


def test_config_round_trip():
    s = WalkSpec(0.3, PerturbationKind.LOG_DRIFT, c=0.1 + 0.2, epsilon=0.07,
                 x_override=(0.41, 1 / 3))
    assert spec_from_config(spec_to_config(s)) == s
    d = dual_spec(WalkSpec(1.0, R))
    assert spec_from_config(spec_to_config(d)) == d
    with pytest.raises(KeyError):
        spec_from_config({"delta": "0", "bogus": "1"})
