"""Closed-form approximants for hitting, return and location laws.

Every evaluator returns an :class:`AsymptoticEval` tagged with a
:class:`FormulaId` and the drift regime.  High starting or ending heights
only get upper bounds (``is_upper_bound``); the null-recurrent high-height
bounds carry an unknown constant which is set to 1 (``shape_only``).

Constants used throughout (``kappa = (1 + delta)/2``)::

    tail   P_0(tau_0 >= n) ~ 2^(1-kappa) / (K0 Gamma(kappa)) n^-kappa L(sqrt n)
    point  P_0(tau_0 = n)  ~ 2^(2-kappa) kappa / (K0 Gamma(kappa)) n^-(kappa+1) L(sqrt n)
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exact import first_passage
from .special import regularized_upper_gamma
from .walk import (
    Regime,
    RegimeError,
    ScaleTable,
    WalkSpec,
    build_scale_table,
    estimate_K0,
    kappa_and_regime,
    perturbation_terms,
    recurrence_proxy,
)

__all__ = [
    "FormulaId",
    "Band",
    "AsymptoticEval",
    "ParityError",
    "DivergenceError",
    "ReturnTimeEstimate",
    "UPPER_BOUND_IDS",
    "SHAPE_ONLY_IDS",
    "classify_band",
    "tilde_n",
    "nu",
    "truncated_mean",
    "exc_tail_asym",
    "exc_point_asym",
    "exc_tail_sv",
    "hit_time_asym",
    "return_zero_asym",
    "expected_return_time",
    "occupancy_zero_asym",
    "location_asym",
    "uselambda_asym",
]


class FormulaId(str, enum.Enum):
    EXCTAIL = "EXCTAIL"
    EXCPOINT = "EXCPOINT"
    EXCTAILSV = "EXCTAILSV"
    HIT_LOW = "HIT_LOW"
    HIT_MID = "HIT_MID"
    HIT_HIGH_BOUND = "HIT_HIGH_BOUND"
    RET0_POSREC = "RET0_POSREC"
    RET0_NULLREC = "RET0_NULLREC"
    RET0_BOUNDARY = "RET0_BOUNDARY"
    OCC0_LOW = "OCC0_LOW"
    OCC0_MID_POSREC = "OCC0_MID_POSREC"
    OCC0_MID_NULLREC = "OCC0_MID_NULLREC"
    OCC0_MID_BOUNDARY = "OCC0_MID_BOUNDARY"
    OCC0_HIGH_POSREC = "OCC0_HIGH_POSREC"
    OCC0_HIGH_NULLREC = "OCC0_HIGH_NULLREC"
    OCC0_HIGH_BOUNDARY = "OCC0_HIGH_BOUNDARY"
    LOC_LOW = "LOC_LOW"
    LOC_MID_POSREC = "LOC_MID_POSREC"
    LOC_MID_NULLREC = "LOC_MID_NULLREC"
    LOC_MID_BOUNDARY = "LOC_MID_BOUNDARY"
    LOC_HIGH_POSREC = "LOC_HIGH_POSREC"
    LOC_HIGH_NULLREC = "LOC_HIGH_NULLREC"
    LOC_HIGH_BOUNDARY = "LOC_HIGH_BOUNDARY"
    LOC_USELAMBDA = "LOC_USELAMBDA"


UPPER_BOUND_IDS = frozenset({
    FormulaId.HIT_HIGH_BOUND,
    FormulaId.OCC0_HIGH_POSREC, FormulaId.OCC0_HIGH_NULLREC, FormulaId.OCC0_HIGH_BOUNDARY,
    FormulaId.LOC_HIGH_POSREC, FormulaId.LOC_HIGH_NULLREC, FormulaId.LOC_HIGH_BOUNDARY,
})
SHAPE_ONLY_IDS = frozenset({FormulaId.OCC0_HIGH_NULLREC, FormulaId.LOC_HIGH_NULLREC})


class Band(str, enum.Enum):
    LOW = "low"
    MID = "mid"
    HIGH = "high"


class ParityError(ValueError):
    """The requested (time, height) pair has probability zero by parity."""


class DivergenceError(ArithmeticError):
    """The expected return time is infinite (or not numerically finite)."""


@dataclass(frozen=True)
class AsymptoticEval:
    value: float
    formula_id: FormulaId
    regime: Regime
    n: int
    k: int
    spec: str
    is_upper_bound: bool = False
    shape_only: bool = False
    band: Optional[Band] = None

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"{self.formula_id.value}: negative or NaN value {self.value}")


def _make(value, fid, table_or_spec, n, k, band=None):
    spec = table_or_spec.spec if isinstance(table_or_spec, ScaleTable) else table_or_spec
    _, regime = kappa_and_regime(spec)
    return AsymptoticEval(
        value=float(value), formula_id=fid, regime=regime, n=int(n), k=int(k),
        spec=spec.digest(), is_upper_bound=fid in UPPER_BOUND_IDS,
        shape_only=fid in SHAPE_ONLY_IDS, band=band,
    )


def classify_band(k: int, m: int, chi: float = 0.1) -> Band:
    """Low below ``sqrt(chi m)``, high above ``sqrt(m/chi)``, midrange between."""
    if not 0 < chi < 1:
        raise ValueError("chi must lie in (0, 1)")
    if k * k < chi * m:
        return Band.LOW
    if k * k * chi > m:
        return Band.HIGH
    return Band.MID


def tilde_n(n: int) -> int:
    """``n`` rounded up to even."""
    n = int(n)
    return n if n % 2 == 0 else n + 1


def _require_parity(n: int, k: int) -> None:
    if (int(n) - int(k)) % 2:
        raise ParityError(f"n - k must be even (n={n}, k={k})")


def _require_transient_free(table: ScaleTable) -> float:
    kappa, regime = kappa_and_regime(table.spec)
    if regime in (Regime.TRANSIENT_WARNING, Regime.DELTA_MINUS_ONE):
        raise RegimeError(f"formula needs delta > -1 (regime {regime.value})")
    return kappa


def _K0(table: ScaleTable, K0: Optional[float]) -> float:
    return float(estimate_K0(table).value) if K0 is None else float(K0)


def _L(table: ScaleTable, x: float) -> float:
    return float(table.L_at(x))


def _M(table: ScaleTable, k: int) -> float:
    table.require(k)
    return float(np.exp(table.log_M[k]))


def _lam_p(table: ScaleTable, k: int) -> float:
    table.require(k)
    return float(np.exp(table.log_lambda[k]) * table.p[k])


# ---------------------------------------------------------------------------
# excursion length

def exc_tail_asym(table: ScaleTable, n: int, K0: Optional[float] = None) -> AsymptoticEval:
    """Tail of the excursion length, ``P_0(tau_0 >= n)``."""
    n = int(n)
    if n < 2:
        raise ValueError("n must be >= 2")
    kappa = _require_transient_free(table)
    c = 2.0 ** (1.0 - kappa) / (_K0(table, K0) * math.gamma(kappa))
    return _make(c * n ** -kappa * _L(table, math.sqrt(n)), FormulaId.EXCTAIL, table, n, 0)


def exc_point_asym(table: ScaleTable, n: int, K0: Optional[float] = None) -> AsymptoticEval:
    """Point law of the excursion length, ``P_0(tau_0 = n)`` for even ``n``."""
    n = int(n)
    _require_parity(n, 0)
    if n < 2:
        raise ValueError("n must be >= 2")
    kappa = _require_transient_free(table)
    c = 2.0 ** (2.0 - kappa) * kappa / (_K0(table, K0) * math.gamma(kappa))
    return _make(c * n ** -(kappa + 1.0) * _L(table, math.sqrt(n)), FormulaId.EXCPOINT,
                 table, n, 0)


def nu(table: ScaleTable, n: int) -> float:
    """``nu(n) = sum over even l <= n of 1/(l L(sqrt l))``."""
    l = np.arange(2, int(n) + 1, 2, dtype=np.float64)
    return float(np.sum(1.0 / (l * table.L_at(np.sqrt(l)))))


def exc_tail_sv(table: ScaleTable, n: int, K0: Optional[float] = None) -> AsymptoticEval:
    """Excursion tail at drift parameter -1: ``1/(K0 nu(n))``."""
    _, regime = kappa_and_regime(table.spec)
    if regime is not Regime.DELTA_MINUS_ONE:
        raise RegimeError("the slowly varying tail applies at delta = -1 only")
    if not recurrence_proxy(table):
        raise RegimeError("recurrence proxy failed; the walk may be transient")
    n = int(n)
    if n < 2:
        raise ValueError("n must be >= 2")
    return _make(1.0 / (_K0(table, K0) * nu(table, n)), FormulaId.EXCTAILSV, table, n, 0)


# ---------------------------------------------------------------------------
# hitting time of 0 from height k

def hit_time_asym(table: ScaleTable, k: int, m: int, chi: float = 0.1,
                  K0: Optional[float] = None, band: Optional[Band] = None) -> AsymptoticEval:
    """``P_k(tau_0 = m)`` by starting-height band.

    ``band`` overrides the classification by ``chi`` (used for continuity
    checks across band edges).
    """
    k, m = int(k), int(m)
    if k < 1:
        raise ValueError("k must be >= 1; use exc_point_asym for k = 0")
    _require_parity(m, k)
    kappa = _require_transient_free(table)
    band = classify_band(k, m, chi) if band is None else Band(band)
    if band is Band.LOW:
        c = 2.0 ** (2.0 - kappa) * kappa / (_K0(table, K0) * math.gamma(kappa))
        v = c * m ** -(1.0 + kappa) * _L(table, math.sqrt(m)) * _M(table, k)
        return _make(v, FormulaId.HIT_LOW, table, m, k, band)
    z = k * k / (2.0 * m)
    if band is Band.MID:
        v = 2.0 / (math.gamma(kappa) * m) * z ** kappa * math.exp(-z)
        return _make(v, FormulaId.HIT_MID, table, m, k, band)
    return _make(math.exp(-z / 4.0) / m, FormulaId.HIT_HIGH_BOUND, table, m, k, band)


# ---------------------------------------------------------------------------
# return to 0

@dataclass(frozen=True)
class ReturnTimeEstimate:
    value: float
    remainder: float
    x_max: int
    tail_exponent: float

    def __float__(self):
        return float(self.value)


@functools.lru_cache(maxsize=32)
def expected_return_time(spec: WalkSpec, x_max: int = 2**20,
                         allow_boundary: bool = False) -> ReturnTimeEstimate:
    """``E_0(tau_0) = sum_x m_x`` over the reversible measure ``m_0 = 1``,
    ``m_{x+1} = m_x p_x / q_{x+1}`` (so ``m_x = 1/(p_x lambda_x)``).

    The terms decay like a power of ``x``; the tail beyond ``x_max`` is
    added as the integral of a power law fitted on ``[x_max/2, x_max]``.
    Raises :class:`DivergenceError` outside the positive-recurrent regime
    (unless ``allow_boundary``) or when the fitted power is at most 1.
    """
    _, regime = kappa_and_regime(spec)
    if regime is not Regime.POSITIVE_RECURRENT and not (
            allow_boundary and regime is Regime.BOUNDARY):
        raise DivergenceError(f"E_0(tau_0) is infinite in regime {regime.value}")
    x_max = int(x_max)
    p, _ = perturbation_terms(spec, x_max)
    table = build_scale_table(spec, x_max)
    log_m = -table.log_lambda[1:] - np.log(p[1:])
    terms = np.exp(log_m)
    half = x_max // 2
    alpha = -(log_m[x_max - 1] - log_m[half - 1]) / math.log(x_max / half)
    if not alpha > 1.0:
        raise DivergenceError(f"terms decay like x^-{alpha:.4g}; the mean is infinite")
    last = float(terms[-1])
    remainder = last * x_max / (alpha - 1.0) - 0.5 * last
    body = 1.0 + math.fsum(terms.tolist())
    return ReturnTimeEstimate(float(body + remainder), float(remainder), x_max, float(alpha))


@functools.lru_cache(maxsize=32)
def _fp0(spec: WalkSpec, n: int):
    return first_passage(spec, 0, n)


def truncated_mean(table: ScaleTable, n: int, K0: Optional[float] = None,
                   exact_limit: int = 2**15) -> float:
    """``mu_0(n) = sum_{l <= n} l P_0(tau_0 = l)``.

    Exact up to ``min(n, exact_limit)``; beyond that the increment
    ``(2/K0) sum L(sqrt l)/l`` over even ``l`` is added.
    """
    n = int(n)
    if n < 2:
        raise ValueError("n must be >= 2")
    head = min(n, int(exact_limit))
    fp = _fp0(table.spec, head)
    mu = fp.mean_truncated(head)
    if n > head:
        l = np.arange(head + 2 - head % 2, n + 1, 2, dtype=np.float64)
        mu += 2.0 / _K0(table, K0) * float(np.sum(table.L_at(np.sqrt(l)) / l))
    return mu


def return_zero_asym(table: ScaleTable, n: int, K0: Optional[float] = None,
                     E0: Optional[float] = None, mu0: Optional[float] = None) -> AsymptoticEval:
    """``P_0(X_n = 0)`` for even ``n``.

    Positive recurrent: ``2/E_0(tau_0)``.  Null recurrent:
    ``2^kappa K0/Gamma(1-kappa) n^-(1-kappa) / L(sqrt n)``.  At drift 1:
    ``2/mu_0(n)``, which also covers a finite mean since ``mu_0 -> E_0``.
    """
    n = int(n)
    _require_parity(n, 0)
    kappa = _require_transient_free(table)
    _, regime = kappa_and_regime(table.spec)
    if regime is Regime.POSITIVE_RECURRENT:
        e0 = float(expected_return_time(table.spec)) if E0 is None else float(E0)
        return _make(2.0 / e0, FormulaId.RET0_POSREC, table, n, 0)
    if regime is Regime.NULL_RECURRENT:
        c = 2.0 ** kappa * _K0(table, K0) / math.gamma(1.0 - kappa)
        v = c * n ** -(1.0 - kappa) / _L(table, math.sqrt(n))
        return _make(v, FormulaId.RET0_NULLREC, table, n, 0)
    mu = truncated_mean(table, n, K0) if mu0 is None else float(mu0)
    return _make(2.0 / mu, FormulaId.RET0_BOUNDARY, table, n, 0)


# ---------------------------------------------------------------------------
# P_k(X_n = 0) and P_0(X_n = k)

def _mean_scale(table, n, K0, E0, mu0):
    """``E_0(tau_0)`` or ``mu_0(n)`` for the finite-mean and drift-1 branches."""
    _, regime = kappa_and_regime(table.spec)
    if regime is Regime.POSITIVE_RECURRENT:
        return float(expected_return_time(table.spec)) if E0 is None else float(E0)
    return truncated_mean(table, n, K0) if mu0 is None else float(mu0)


_OCC_IDS = {
    (Band.MID, Regime.POSITIVE_RECURRENT): FormulaId.OCC0_MID_POSREC,
    (Band.MID, Regime.NULL_RECURRENT): FormulaId.OCC0_MID_NULLREC,
    (Band.MID, Regime.BOUNDARY): FormulaId.OCC0_MID_BOUNDARY,
    (Band.HIGH, Regime.POSITIVE_RECURRENT): FormulaId.OCC0_HIGH_POSREC,
    (Band.HIGH, Regime.NULL_RECURRENT): FormulaId.OCC0_HIGH_NULLREC,
    (Band.HIGH, Regime.BOUNDARY): FormulaId.OCC0_HIGH_BOUNDARY,
}
_LOC_IDS = {
    (Band.MID, Regime.POSITIVE_RECURRENT): FormulaId.LOC_MID_POSREC,
    (Band.MID, Regime.NULL_RECURRENT): FormulaId.LOC_MID_NULLREC,
    (Band.MID, Regime.BOUNDARY): FormulaId.LOC_MID_BOUNDARY,
    (Band.HIGH, Regime.POSITIVE_RECURRENT): FormulaId.LOC_HIGH_POSREC,
    (Band.HIGH, Regime.NULL_RECURRENT): FormulaId.LOC_HIGH_NULLREC,
    (Band.HIGH, Regime.BOUNDARY): FormulaId.LOC_HIGH_BOUNDARY,
}


def occupancy_zero_asym(table: ScaleTable, k: int, n: int, chi: float = 0.1,
                        K0: Optional[float] = None, E0: Optional[float] = None,
                        mu0: Optional[float] = None,
                        band: Optional[Band] = None) -> AsymptoticEval:
    """``P_k(X_n = 0)`` by starting-height band.

    Low heights reuse the return law at ``tilde_n(n)``.  Midrange heights
    multiply the regime's return constant by the Bessel hitting probability
    ``Q(kappa, k^2/2n)`` (or ``exp(-k^2/2n)`` when null recurrent).  High
    heights return upper bounds; the null-recurrent one is shape-only.
    """
    k, n = int(k), int(n)
    _require_parity(n, k)
    kappa = _require_transient_free(table)
    _, regime = kappa_and_regime(table.spec)
    band = classify_band(k, n, chi) if band is None else Band(band)
    if band is Band.LOW:
        base = return_zero_asym(table, tilde_n(n), K0, E0, mu0)
        return _make(base.value, FormulaId.OCC0_LOW, table, n, k, band)
    fid = _OCC_IDS[(band, regime)]
    z = k * k / (2.0 * n)
    if regime is Regime.NULL_RECURRENT:
        shape = n ** -(1.0 - kappa) / _L(table, math.sqrt(n))
        if band is Band.MID:
            v = 2.0 ** kappa * _K0(table, K0) / math.gamma(1.0 - kappa) * shape * math.exp(-z)
        else:
            v = math.exp(-z / 4.0) * shape
        return _make(v, fid, table, n, k, band)
    scale = _mean_scale(table, n, K0, E0, mu0)
    if band is Band.MID:
        v = 2.0 / scale * regularized_upper_gamma(z, kappa)
    else:
        v = 8.0 / scale * math.exp(-z / 4.0)
    return _make(v, fid, table, n, k, band)


def location_asym(table: ScaleTable, k: int, n: int, chi: float = 0.1,
                  K0: Optional[float] = None, E0: Optional[float] = None,
                  mu0: Optional[float] = None,
                  band: Optional[Band] = None) -> AsymptoticEval:
    """``P_0(X_n = k)`` by ending-height band.

    Low heights: return law at ``tilde_n(n)`` divided by ``lambda_k p_k``.
    Midrange and high heights use the per-regime constants
    ``4/(K0 E0)``, ``2^(kappa+1)/Gamma(1-kappa)``, ``4/(K0 mu_0(n))`` and
    the bound constants ``32/(K0 E0)``, ``4/K0`` (shape-only),
    ``44/(K0 mu_0(n))``.
    """
    k, n = int(k), int(n)
    if k < 1:
        raise ValueError("k must be >= 1; use return_zero_asym for k = 0")
    _require_parity(n, k)
    kappa = _require_transient_free(table)
    _, regime = kappa_and_regime(table.spec)
    band = classify_band(k, n, chi) if band is None else Band(band)
    if band is Band.LOW:
        base = return_zero_asym(table, tilde_n(n), K0, E0, mu0)
        return _make(base.value / _lam_p(table, k), FormulaId.LOC_LOW, table, n, k, band)
    fid = _LOC_IDS[(band, regime)]
    z = k * k / (2.0 * n)
    k0 = _K0(table, K0)
    if regime is Regime.NULL_RECURRENT:
        if band is Band.MID:
            v = (2.0 ** (kappa + 1.0) / math.gamma(1.0 - kappa)
                 * (k / math.sqrt(n)) ** (1.0 - 2.0 * kappa) * math.exp(-z) / math.sqrt(n))
        else:
            v = 4.0 / k0 * math.exp(-z / 4.0) / math.sqrt(n)
        return _make(v, fid, table, n, k, band)
    scale = _mean_scale(table, n, K0, E0, mu0)
    height = k ** (1.0 - 2.0 * kappa) * _L(table, k)
    if band is Band.MID:
        v = 4.0 / (k0 * scale) * height * regularized_upper_gamma(z, kappa)
    else:
        const = 32.0 if regime is Regime.POSITIVE_RECURRENT else 44.0
        v = const / (k0 * scale) * height * math.exp(-z / 4.0)
    return _make(v, fid, table, n, k, band)


def uselambda_asym(table: ScaleTable, k: int, n: int) -> AsymptoticEval:
    """Low-height location law with ``lambda_k`` replaced by its power-law form.

    ``2^(kappa+1)/Gamma(1-kappa) n^-(1-kappa) k^-delta L(k)/L(sqrt n)``,
    null-recurrent regime only.  ``K0`` cancels.
    """
    k, n = int(k), int(n)
    _require_parity(n, k)
    kappa = _require_transient_free(table)
    _, regime = kappa_and_regime(table.spec)
    if regime is not Regime.NULL_RECURRENT:
        raise RegimeError("the power-law location form needs -1 < delta < 1")
    delta = table.spec.drift
    v = (2.0 ** (kappa + 1.0) / math.gamma(1.0 - kappa) * n ** -(1.0 - kappa)
         * k ** -delta * _L(table, k) / _L(table, math.sqrt(n)))
    return _make(v, FormulaId.LOC_USELAMBDA, table, n, k, Band.LOW)
