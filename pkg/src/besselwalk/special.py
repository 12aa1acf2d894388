"""Special functions for the Bessel comparison process.

* :func:`regularized_upper_gamma` -- ``Q(kappa, a)``, the Bessel hitting law
  ``P_k(tau_0 <= t) = Q(kappa, k^2/2t)``.
* :func:`bessel_exit_moments` -- exit probabilities and exit-time moments of
  the Bessel process with drift ``-delta/2y`` from ``(x-1, x+1)``.
* :func:`imbedded_down_prob` -- the down-step law of the +-1 walk read off the
  Bessel process at integer crossings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

__all__ = [
    "regularized_upper_gamma",
    "bessel_hit_interval",
    "ExitMoments",
    "bessel_exit_moments",
    "imbedded_down_prob",
]

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _lower_series(a: float, kappa: float) -> float:
    # P(kappa, a) = a^kappa e^-a / Gamma(kappa+1) * sum a^n / ((kappa+1)...(kappa+n))
    term = 1.0
    total = 1.0
    ap = kappa
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= a / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    log_pref = kappa * math.log(a) - a - math.lgamma(kappa + 1.0)
    return total * math.exp(log_pref)


def _upper_cf(a: float, kappa: float) -> float:
    # modified Lentz on the continued fraction for Gamma(kappa, a) e^a a^-kappa
    b = a + 1.0 - kappa
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - kappa)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        step = d * c
        h *= step
        if abs(step - 1.0) < _EPS:
            break
    log_pref = kappa * math.log(a) - a - math.lgamma(kappa)
    return math.exp(log_pref) * h


def _q_scalar(a: float, kappa: float) -> float:
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    if a < 0:
        raise ValueError("a must be >= 0")
    if a == 0.0:
        return 1.0
    if math.isinf(a):
        return 0.0
    if kappa == 1.0:
        return math.exp(-a)
    if a < kappa + 1.0:
        return min(max(1.0 - _lower_series(a, kappa), 0.0), 1.0)
    return min(max(_upper_cf(a, kappa), 0.0), 1.0)


def regularized_upper_gamma(a, kappa):
    """Regularized upper incomplete gamma ``(1/Gamma(kappa)) int_a^inf u^(kappa-1) e^-u du``.

    Uses the power series of the lower function for ``a < kappa + 1`` and a
    Lentz continued fraction otherwise.  ``kappa = 1`` is returned as
    ``exp(-a)`` directly.  Accepts scalars or arrays (broadcast).
    """
    if np.ndim(a) == 0 and np.ndim(kappa) == 0:
        return _q_scalar(float(a), float(kappa))
    a_b, k_b = np.broadcast_arrays(np.asarray(a, dtype=np.float64),
                                   np.asarray(kappa, dtype=np.float64))
    out = np.empty(a_b.shape)
    for idx in np.ndindex(a_b.shape):
        out[idx] = _q_scalar(float(a_b[idx]), float(k_b[idx]))
    return out


def bessel_hit_interval(k: float, a: float, b, kappa: float) -> float:
    """``P_k(tau_0 in [a, b])`` for the Bessel process, ``b = inf`` allowed."""
    if not 0 < a <= b:
        raise ValueError("need 0 < a <= b")
    upper = 1.0 if math.isinf(b) else _q_scalar(k * k / (2.0 * b), kappa)
    return upper - _q_scalar(k * k / (2.0 * a), kappa)


@dataclass(frozen=True)
class ExitMoments:
    """Exit law of the Bessel process started at ``x`` from ``(x-1, x+1)``.

    ``f`` is the probability of leaving downward (equal to ``q_BI``),
    ``g`` the mean exit time, and ``h_plus_norm`` / ``h_minus_norm`` the
    partial means ``E_x(sigma; exit at x+1)`` and ``E_x(sigma; exit at x-1)``.
    """

    x: float
    delta: float
    f: float
    g: float
    h_plus_norm: float
    h_minus_norm: float
    q_BI: float


def bessel_exit_moments(x: float, delta: float, dps: int = 60) -> ExitMoments:
    """Exit moments at height ``x > 1`` for drift parameter ``delta > -1``.

    Each quantity ``u`` solves ``(1/2)u'' - (delta/2z)u' = psi`` on
    ``[x-1, x+1]`` with zero boundary values.  Writing ``u = phi - (affine
    in the scale s(z) = z^(1+delta))`` for an explicit particular solution
    ``phi`` gives ``u(x) = phi(x) - q phi(x-1) - p phi(x+1)``.  The large
    cancellations in that difference are handled in ``dps``-digit
    arithmetic.  ``delta = 1`` uses the logarithmic particular solution.
    """
    x = float(x)
    delta = float(delta)
    if not x > 1.0:
        raise ValueError("exit moments need x > 1")
    if not delta > -1.0:
        raise ValueError("exit moments need delta > -1")
    with mpmath.workdps(dps):
        d = mpmath.mpf(delta)
        X = mpmath.mpf(x)

        def s(z):
            return z ** (1 + d)

        if delta == 1.0:
            def phi1(z):  # L phi1 = 1
                return z * z * mpmath.log(z)
        else:
            def phi1(z):
                return z * z / (1 - d)

        def phis(z):  # L phis = s
            return z ** (3 + d) / (3 + d)

        lo, hi = X - 1, X + 1
        D = s(hi) - s(lo)
        q = (s(hi) - s(X)) / D
        p = 1 - q

        def solve(phi):
            return phi(X) - q * phi(lo) - p * phi(hi)

        g = solve(lambda z: -phi1(z))
        hp = solve(lambda z: (s(lo) * phi1(z) - phis(z)) / D)
        hm = solve(lambda z: (phis(z) - s(hi) * phi1(z)) / D)
        return ExitMoments(x=x, delta=delta, f=float(q), g=float(g),
                           h_plus_norm=float(hp), h_minus_norm=float(hm),
                           q_BI=float(q))


def imbedded_down_prob(x, delta: float) -> np.ndarray:
    """``q_x^BI = (s(x+1) - s(x)) / (s(x+1) - s(x-1))`` in binary64.

    Written with ``expm1``/``log1p`` so the 1/2 + O(1/x) value keeps full
    relative accuracy at large ``x``.  Defined for ``x >= 1``.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 1):
        raise ValueError("imbedded walk law needs x >= 1")
    e = 1.0 + float(delta)
    with np.errstate(divide="ignore"):
        up = np.expm1(e * np.log1p(1.0 / x))
        down = -np.expm1(e * np.log1p(-1.0 / x))
    return up / (up + down)
