"""Walk definitions, transition probabilities and scale-function tables.

A Bessel-like walk lives on {0, 1, 2, ...}, reflects at 0 (``p_0 = 1``) and
for ``x >= 1`` steps up with probability

    p_x = (1/2) * (1 - delta / (2x) + R_x / 2),

where the perturbation ``R_x`` is ``o(1/x)``.  Everything downstream (exact
dynamic programming, asymptotic evaluators, samplers) reads the walk through
:func:`up_probs` / :func:`transition_prob`.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

__all__ = [
    "PerturbationKind",
    "Regime",
    "WalkSpec",
    "ScaleTable",
    "K0Estimate",
    "EllipticityError",
    "ScaleOverflowError",
    "RegimeError",
    "transition_prob",
    "up_probs",
    "step_probs",
    "perturbation_terms",
    "build_scale_table",
    "estimate_K0",
    "height_tail",
    "dual_spec",
    "kappa_and_regime",
    "recurrence_proxy",
    "spec_to_config",
    "spec_from_config",
    "SPEC_KEYS",
]

# Heights above this are refused: p_x is ~1/2 to machine precision long before
# and the integer grid is no longer exactly representable in binary64.
MAX_HEIGHT = 2**52

# Ellipticity is checked pointwise up to the height where the formula-based
# bound on |p_x - 1/2| provably stays inside [eps, 1 - eps]; this caps that scan.
_MAX_SCAN = 2**22


class EllipticityError(ValueError):
    """A transition probability leaves ``[epsilon, 1 - epsilon]``."""


class ScaleOverflowError(OverflowError):
    """``lambda_x`` or ``M_x`` is not representable in linear space."""


class RegimeError(ValueError):
    """A formula was requested outside the drift regime where it applies."""


class PerturbationKind(str, enum.Enum):
    NONE = "none"
    RATIONAL = "rational"
    INVERSE_SQUARE = "inverse_square"
    LOG_DRIFT = "log_drift"
    TABLE = "table"


class Regime(str, enum.Enum):
    DELTA_MINUS_ONE = "delta_minus_one"
    TRANSIENT_WARNING = "transient_warning"
    NULL_RECURRENT = "null_recurrent"
    BOUNDARY = "boundary"
    POSITIVE_RECURRENT = "positive_recurrent"


@dataclass(frozen=True)
class WalkSpec:
    """Full definition of a Bessel-like walk.

    Parameters
    ----------
    delta : float
        Drift parameter of the formula family.  For a dual (``mirrored``)
        walk the effective drift parameter is ``-delta``; use
        :attr:`drift` when the distinction matters.
    kind : PerturbationKind
        Which family supplies ``p_x`` for ``x >= 1``.
    c : float
        Coefficient for ``INVERSE_SQUARE`` (``R_x = c/x^2``) and
        ``LOG_DRIFT`` (``R_x = c/(x ln(x+1))``).  Ignored otherwise.
    epsilon : float
        Uniform ellipticity bound, in ``(0, 1/2)``.
    x_override : tuple of float
        Explicit ``p_1, p_2, ...`` replacing the formula at small heights.
    table : tuple of float
        ``p_1, p_2, ...`` for ``TABLE`` specs; beyond the table the ``NONE``
        form ``(1/2)(1 - delta/2x)`` is used.
    mirrored : bool
        Swap up and down probabilities at every ``x >= 1`` (the dual walk).
    """

    delta: float
    kind: PerturbationKind = PerturbationKind.NONE
    c: float = 0.0
    epsilon: float = 0.05
    x_override: tuple = ()
    table: tuple = ()
    mirrored: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", PerturbationKind(self.kind))
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "x_override", tuple(float(v) for v in self.x_override))
        object.__setattr__(self, "table", tuple(float(v) for v in self.table))
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in (0, 1/2), got {self.epsilon}")
        if not math.isfinite(self.delta) or not math.isfinite(self.c):
            raise ValueError("delta and c must be finite")
        if self.kind is PerturbationKind.TABLE and not self.table:
            raise ValueError("TABLE perturbation requires a non-empty table")
        _validate_ellipticity(self)

    @property
    def drift(self) -> float:
        """Effective drift parameter of the walk (sign-flipped when mirrored)."""
        return -self.delta if self.mirrored else self.delta

    @property
    def kappa(self) -> float:
        return (1.0 + self.drift) / 2.0

    def digest(self) -> str:
        """Short deterministic text identifying the spec."""
        parts = [f"delta={self.delta!r}", f"kind={self.kind.value}"]
        if self.kind in (PerturbationKind.INVERSE_SQUARE, PerturbationKind.LOG_DRIFT):
            parts.append(f"c={self.c!r}")
        if self.x_override:
            parts.append(f"override={len(self.x_override)}")
        if self.table:
            parts.append(f"table={len(self.table)}")
        if self.mirrored:
            parts.append("dual")
        return ",".join(parts)


# ---------------------------------------------------------------------------
# transition probabilities

def _formula_terms(spec: WalkSpec, x: np.ndarray):
    """Up-probability and perturbation of the un-mirrored formula at ``x >= 1``."""
    d = spec.delta
    kind = spec.kind
    if kind is PerturbationKind.RATIONAL:
        # p = x/(2x + delta); R = delta^2 / (x (2x + delta)) without cancellation
        p = x / (2.0 * x + d)
        r = d * d / (x * (2.0 * x + d))
        return p, r
    if kind is PerturbationKind.INVERSE_SQUARE:
        r = spec.c / (x * x)
    elif kind is PerturbationKind.LOG_DRIFT:
        r = spec.c / (x * np.log1p(x))
    else:
        r = np.zeros_like(x)
    p = 0.5 * (1.0 - d / (2.0 * x) + r / 2.0)
    if kind is PerturbationKind.TABLE:
        n_tab = len(spec.table)
        idx = x.astype(np.int64) - 1
        inside = idx < n_tab
        if np.any(inside):
            tab = np.asarray(spec.table)
            p = np.where(inside, tab[np.minimum(idx, n_tab - 1)], p)
            r = np.where(inside, 4.0 * p - 2.0 + d / x, r)
    return p, r


def perturbation_terms(spec: WalkSpec, x_max: int):
    """Return ``(p, R)`` arrays over ``0..x_max`` for the walk ``spec``.

    ``p[0] = 1`` and ``R[0] = 0`` by convention.  Overrides and mirroring are
    applied; for mirrored walks ``R`` changes sign together with the drift.
    """
    x_max = int(x_max)
    if x_max < 0 or x_max > MAX_HEIGHT:
        raise ValueError(f"x_max must be in [0, {MAX_HEIGHT}], got {x_max}")
    xs = np.arange(1, x_max + 1, dtype=np.float64)
    p_body, r_body = _formula_terms(spec, xs)
    p_body = np.array(p_body, dtype=np.float64)
    r_body = np.array(r_body, dtype=np.float64)
    n_over = min(len(spec.x_override), x_max)
    if n_over:
        ov = np.asarray(spec.x_override[:n_over])
        p_body[:n_over] = ov
        r_body[:n_over] = 4.0 * ov - 2.0 + spec.delta / xs[:n_over]
    if spec.mirrored:
        p_body = 1.0 - p_body
        r_body = -r_body
    p = np.empty(x_max + 1)
    r = np.empty(x_max + 1)
    p[0], r[0] = 1.0, 0.0
    p[1:] = p_body
    r[1:] = r_body
    return p, r


def up_probs(spec: WalkSpec, x_max: int) -> np.ndarray:
    """Up-step probabilities ``p_0..p_{x_max}`` (``p_0 = 1``)."""
    return perturbation_terms(spec, x_max)[0]


def step_probs(spec: WalkSpec, x_max: int):
    """``(p, q)`` over ``0..x_max``; for a dual walk ``q`` is the base ``p`` bit for bit."""
    p, _ = perturbation_terms(spec, x_max)
    if spec.mirrored:
        base = perturbation_terms(replace(spec, mirrored=False), x_max)[0]
        q = base.copy()
        q[0] = 0.0
    else:
        q = 1.0 - p
    return p, q


def transition_prob(spec: WalkSpec, x: int):
    """Return ``(p_x, q_x)`` for a single height ``x >= 0``."""
    x = int(x)
    if x < 0:
        raise ValueError("height must be nonnegative")
    if x > MAX_HEIGHT:
        raise ValueError(f"height {x} exceeds the supported limit {MAX_HEIGHT}")
    if x == 0:
        return 1.0, 0.0
    if x <= len(spec.x_override):
        p = spec.x_override[x - 1]
    else:
        p = float(_formula_terms(spec, np.array([float(x)]))[0][0])
    eps = spec.epsilon
    if not eps <= p <= 1.0 - eps:
        raise EllipticityError(f"p_{x} = {p} outside [{eps}, {1 - eps}]")
    if spec.mirrored:
        return 1.0 - p, p
    return p, 1.0 - p


def _deviation_bound_height(spec: WalkSpec) -> int:
    """Height beyond which |p_x - 1/2| <= 1/2 - eps follows from the formula."""
    slack = 0.5 - spec.epsilon
    d = abs(spec.delta)
    if spec.kind is PerturbationKind.RATIONAL:
        # p_x = x/(2x+delta) is monotone in x and tends to 1/2
        return 1 + len(spec.x_override)
    if spec.kind is PerturbationKind.INVERSE_SQUARE:
        c = abs(spec.c)
        # |p - 1/2| <= d/(4x) + c/(4x^2) <= (d + c)/(4x) for x >= 1
        x0 = (d + c) / (4.0 * slack)
    elif spec.kind is PerturbationKind.LOG_DRIFT:
        c = abs(spec.c) / math.log(2.0)
        x0 = (d + c) / (4.0 * slack)
    else:
        x0 = d / (4.0 * slack)
    x0 = max(x0, len(spec.x_override), len(spec.table)) + 1
    return int(min(math.ceil(x0), _MAX_SCAN))


def _validate_ellipticity(spec: WalkSpec) -> None:
    x_check = _deviation_bound_height(spec)
    p = perturbation_terms(spec, x_check)[0][1:]
    eps = spec.epsilon
    bad = np.flatnonzero((p < eps) | (p > 1.0 - eps) | ~np.isfinite(p))
    if bad.size:
        x = int(bad[0]) + 1
        raise EllipticityError(
            f"p_{x} = {p[bad[0]]!r} is outside [{eps}, {1 - eps}] "
            f"({bad.size} offending heights <= {x_check}); supply x_override "
            f"values for them"
        )


# ---------------------------------------------------------------------------
# regime

def kappa_and_regime(spec: WalkSpec):
    """Return ``(kappa, Regime)`` for the effective drift parameter."""
    d = spec.drift
    kappa = (1.0 + d) / 2.0
    if d < -1.0:
        return kappa, Regime.TRANSIENT_WARNING
    if d == -1.0:
        return kappa, Regime.DELTA_MINUS_ONE
    if d < 1.0:
        return kappa, Regime.NULL_RECURRENT
    if d == 1.0:
        return kappa, Regime.BOUNDARY
    return kappa, Regime.POSITIVE_RECURRENT


def dual_spec(spec: WalkSpec) -> WalkSpec:
    """The dual walk ``p~_x = q_x`` for ``x >= 1``; an involution."""
    return replace(spec, mirrored=not spec.mirrored)


# ---------------------------------------------------------------------------
# scale table

@dataclass(frozen=True)
class ScaleTable:
    """Tabulated ``lambda_x``, ``M_x`` and ``L(x)`` for ``0 <= x <= x_max``.

    ``M`` is accumulated and stored in extended precision so that the
    increments ``M[x+1] - M[x]`` reproduce ``lambda_x``.  Linear-space
    accessors raise :class:`ScaleOverflowError` when the values overflow;
    the ``log_*`` arrays are always available.
    """

    spec: WalkSpec
    x_max: int
    p: np.ndarray = field(repr=False)
    R: np.ndarray = field(repr=False)
    log_lambda: np.ndarray = field(repr=False)
    log_M: np.ndarray = field(repr=False)
    log_L: np.ndarray = field(repr=False)
    _lambda: Optional[np.ndarray] = field(repr=False, default=None)
    _M: Optional[np.ndarray] = field(repr=False, default=None)

    @property
    def kappa(self) -> float:
        return self.spec.kappa

    @property
    def lam(self) -> np.ndarray:
        if self._lambda is None:
            raise ScaleOverflowError(
                "lambda_x overflows binary64 for this table; use log_lambda"
            )
        return self._lambda

    @property
    def M(self) -> np.ndarray:
        if self._M is None:
            raise ScaleOverflowError("M_x overflows binary64 for this table; use log_M")
        return self._M

    @property
    def L(self) -> np.ndarray:
        return np.exp(self.log_L)

    def L_at(self, x) -> np.ndarray:
        """``L`` at real arguments via linear interpolation between integers."""
        x = np.asarray(x, dtype=np.float64)
        if np.any(x < 0) or np.any(x > self.x_max):
            raise ValueError(f"L requested outside [0, {self.x_max}]")
        return np.interp(x, np.arange(self.x_max + 1, dtype=np.float64), self.L)

    def M_at(self, x) -> np.ndarray:
        """``M`` at real arguments via linear interpolation (float64)."""
        x = np.asarray(x, dtype=np.float64)
        if np.any(x < 0) or np.any(x > self.x_max):
            raise ValueError(f"M requested outside [0, {self.x_max}]")
        return np.interp(x, np.arange(self.x_max + 1, dtype=np.float64),
                         self.M.astype(np.float64))

    def require(self, x: float) -> None:
        if x > self.x_max:
            raise ValueError(
                f"scale table tabulated to x_max={self.x_max}, need {x}"
            )


def build_scale_table(spec: WalkSpec, x_max: int) -> ScaleTable:
    """Tabulate ``lambda``, ``M`` and ``L`` up to ``x_max``.

    ``lambda`` is the running product of ``q_k/p_k``, ``M`` its prefix sum and
    ``log L`` the prefix sum of ``R``.
    """
    x_max = int(x_max)
    if x_max < 1:
        raise ValueError("x_max must be >= 1")
    p, r = perturbation_terms(spec, x_max)
    q = step_probs(spec, x_max)[1]
    log_ratio = np.zeros(x_max + 1)
    log_ratio[1:] = np.log(q[1:]) - np.log(p[1:])
    log_lambda = np.cumsum(log_ratio)
    log_M = np.empty(x_max + 1)
    log_M[0] = -np.inf
    log_M[1:] = np.logaddexp.accumulate(log_lambda[:-1])
    log_L = np.cumsum(r)

    lam = M = None
    with np.errstate(over="ignore"):
        ratio = np.ones(x_max + 1, dtype=np.longdouble)
        ratio[1:] = q[1:].astype(np.longdouble) / p[1:].astype(np.longdouble)
        lam_ext = np.cumprod(ratio)
        if np.all(np.isfinite(lam_ext)) and lam_ext[-1] < np.finfo(np.float64).max:
            M_ext = np.zeros(x_max + 1, dtype=np.longdouble)
            M_ext[1:] = np.cumsum(lam_ext[:-1])
            lam = lam_ext.astype(np.float64)
            if np.isfinite(M_ext[-1]) and M_ext[-1] < np.finfo(np.float64).max:
                M = M_ext
    for arr in (log_lambda, log_M, log_L):
        arr.setflags(write=False)
    for arr in (lam, M):
        if arr is not None:
            arr.setflags(write=False)
    return ScaleTable(spec=spec, x_max=x_max, p=p, R=r, log_lambda=log_lambda,
                      log_M=log_M, log_L=log_L, _lambda=lam, _M=M)


def height_tail(table: ScaleTable, h: int) -> float:
    """``P_0(H >= h) = 1/M_h`` for the excursion height ``H``."""
    h = int(h)
    if h < 1:
        raise ValueError("h must be >= 1")
    table.require(h)
    return float(np.exp(-table.log_M[h])) if table._M is None else float(1 / table.M[h])


@dataclass(frozen=True)
class K0Estimate:
    value: float
    width: float
    raw: tuple
    grid: tuple
    converged: bool

    def __iter__(self):
        return iter((self.value, self.width))


def estimate_K0(table: ScaleTable, x_max: Optional[int] = None) -> K0Estimate:
    """Extrapolate ``lambda_x L(x) / x^(2 kappa - 1)`` to ``x -> infinity``.

    The raw quantity is read at ``x_max/4, x_max/2, x_max`` and one Aitken
    (Richardson with fitted exponent) step is applied.  ``width`` is the
    spread of the three raw values.  ``converged`` is False when the raw
    values are not monotone and contracting; the returned value is then the
    last raw value.
    """
    x_top = table.x_max if x_max is None else int(x_max)
    if x_top < 2**10:
        raise ValueError("K0 estimation needs a table with x_max >= 1024")
    table.require(x_top)
    grid = (x_top // 4, x_top // 2, x_top)
    expo = 2.0 * table.kappa - 1.0
    raw = [float(np.exp(table.log_lambda[x] + table.log_L[x] - expo * math.log(x)))
           for x in grid]
    a, b, c = raw
    width = max(raw) - min(raw)
    d1, d2 = b - a, c - b
    scale = max(abs(c), 1e-300)
    # already converged to rounding level; the differences carry no signal
    if width <= 1e-12 * scale:
        return K0Estimate(c, width, tuple(raw), grid, True)
    contracting = d1 * d2 > 0 and abs(d2) < abs(d1)
    if not contracting:
        warnings.warn("K0 raw values are not monotone-contracting", RuntimeWarning)
        return K0Estimate(c, width, tuple(raw), grid, False)
    value = c - d2 * d2 / (d2 - d1)
    return K0Estimate(value, width, tuple(raw), grid, value > 0)


def recurrence_proxy(table: ScaleTable) -> bool:
    """Finite-horizon recurrence check on the scale function.

    For drift parameter above -1, ``M`` grows like ``x^(1+delta)``; the
    proxy asks that ``M`` grows over the last doubling by at least
    ``min(1.5, 2^(0.9 (1+delta)))``.  At drift -1 the growth is logarithmic at
    best, so the proxy asks that the last dyadic increment of ``M`` has not
    shrunk below 90% of the previous one.  Only a proxy: recurrence depends
    on the perturbation all the way out.
    """
    x = table.x_max
    lm = table.log_M
    if table.spec.drift > -1.0:
        need = min(math.log(1.5), 0.9 * (1.0 + table.spec.drift) * math.log(2.0))
        return bool(lm[x] - lm[x // 2] > need)
    M = np.exp(lm - lm[x])
    inc_last = M[x] - M[x // 2]
    inc_prev = M[x // 2] - M[x // 4]
    return bool(inc_prev > 0 and inc_last >= 0.9 * inc_prev)


# ---------------------------------------------------------------------------
# flat key-value serialization

_KIND_KEYS = {k.value: k for k in PerturbationKind}


def _fmt(v: float) -> str:
    return repr(float(v))


def spec_to_config(spec: WalkSpec) -> dict:
    """Flatten a spec to string key/values (exact round trip via ``repr``)."""
    out = {
        "delta": _fmt(spec.delta),
        "perturbation.kind": spec.kind.value,
        "perturbation.c": _fmt(spec.c),
        "epsilon": _fmt(spec.epsilon),
        "x_override": ", ".join(_fmt(v) for v in spec.x_override),
    }
    if spec.table:
        out["perturbation.table"] = ", ".join(_fmt(v) for v in spec.table)
    if spec.mirrored:
        out["dual"] = "true"
    return out


def _float_list(text: str) -> tuple:
    text = text.strip().strip("[]")
    if not text:
        return ()
    return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())


SPEC_KEYS = {"delta", "perturbation.kind", "perturbation.c", "epsilon",
              "x_override", "perturbation.table", "dual"}


def spec_from_config(values) -> WalkSpec:
    """Inverse of :func:`spec_to_config`; unknown keys raise ``KeyError``."""
    values = {str(k).strip().lower(): str(v) for k, v in dict(values).items()}
    unknown = set(values) - SPEC_KEYS
    if unknown:
        raise KeyError(f"unknown walk keys: {sorted(unknown)}")
    if "delta" not in values:
        raise KeyError("missing required key 'delta'")
    kind_text = values.get("perturbation.kind", "none").strip().lower()
    if kind_text not in _KIND_KEYS:
        raise KeyError(f"perturbation.kind must be one of {sorted(_KIND_KEYS)}")
    dual_text = values.get("dual", "false").strip().lower()
    if dual_text not in ("true", "false", "1", "0", "yes", "no"):
        raise ValueError(f"dual must be a boolean, got {dual_text!r}")
    return WalkSpec(
        delta=float(values["delta"]),
        kind=_KIND_KEYS[kind_text],
        c=float(values.get("perturbation.c", "0")),
        epsilon=float(values.get("epsilon", "0.05")),
        x_override=_float_list(values.get("x_override", "")),
        table=_float_list(values.get("perturbation.table", "")),
        mirrored=dual_text in ("true", "1", "yes"),
    )
