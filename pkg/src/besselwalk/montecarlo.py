"""Path sampling and the two coupling constructions.

All samplers are vectorized over a batch of independent runs and driven by
``numpy.random.Generator`` (PCG64) seeded through ``SeedSequence``, so a
given ``(seed, parameters)`` reproduces every draw.  A single run is a
batch of one.

Symmetric coupling
    The walk ``X`` and a symmetric walk ``X'`` share uniforms ``xi``.  With
    ``p_x <= q_x`` an alarm sounds with probability ``q_x - p_x`` and forces
    ``X`` down; otherwise both step up iff ``xi > 1/2``.  When ``p_x >= q_x``
    the mirror image is used (alarm rate ``p_x - q_x``, forced up).

Imbedded coupling
    ``X'`` is the +-1 walk read off the Bessel process, with down law
    ``q^BI``.  An alarm with probability ``a(x)`` forces ``X`` toward the side
    where ``p_x`` exceeds the imbedded law; otherwise ``X`` goes up iff
    ``xi > q^BI_x`` and ``X'`` iff ``xi > q^BI_y``.  A *discrepancy* is a
    no-alarm step with ``xi`` between the two thresholds.

Alarms and discrepancies are *missteps*; the gap ``|X - X'|`` can only
change at a misstep, and then by exactly 2.  The batch loops check this on
every step.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import List, Optional, Sequence

import numpy as np

from .special import imbedded_down_prob
from .walk import WalkSpec, step_probs

__all__ = [
    "DriftSignError",
    "CouplingConfigError",
    "CouplingInvariantError",
    "StopReason",
    "FirstPassageSample",
    "CouplingBatch",
    "CouplingTrace",
    "Estimate",
    "make_rng",
    "sample_first_passage",
    "sample_positions",
    "coupled_sym_batch",
    "coupled_sym_run",
    "coupled_bessel_imbedded_batch",
    "coupled_bessel_imbedded_run",
    "imbedded_alarm_prob",
    "wilson_interval",
    "estimate",
    "EVENT_KINDS",
]

_Z95 = NormalDist().inv_cdf(0.975)
CHUNK = 1 << 14

NO_EVENT, ALARM, DISCREPANCY = 0, 1, 2
_EVENT_NAMES = {NO_EVENT: "-", ALARM: "alarm", DISCREPANCY: "discrepancy"}


class DriftSignError(ValueError):
    """``q_x - p_x`` changes sign, so the symmetric coupling is unavailable."""


class CouplingConfigError(ValueError):
    """Alarm probability outside [0, 1] for the requested heights."""


class CouplingInvariantError(AssertionError):
    """The gap between the coupled paths changed outside a misstep."""


class StopReason(str, enum.Enum):
    HIT_TARGET = "hit-target"
    FLOOR_REACHED = "floor-reached"
    CAP_REACHED = "cap-reached"


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator from an integer seed or a ``SeedSequence``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# plain path sampling

@dataclass(frozen=True)
class FirstPassageSample:
    """``tau`` is -1 where the run was censored at ``cap``."""

    k: int
    cap: int
    tau: np.ndarray = field(repr=False)
    h_max: np.ndarray = field(repr=False)

    @property
    def censored(self) -> np.ndarray:
        return self.tau < 0

    @property
    def censored_fraction(self) -> float:
        return float(np.mean(self.censored))

    def single(self):
        """``(tau or None, H_max)`` of the first run."""
        t = int(self.tau[0])
        return (None if t < 0 else t), int(self.h_max[0])


def _first_passage_chunk(p, k, cap, reps, rng, stop_height):
    x = np.full(reps, k, dtype=np.int64)
    hmax = x.copy()
    tau = np.full(reps, -1, dtype=np.int64)
    active = np.arange(reps)
    for t in range(1, cap + 1):
        xa = x[active]
        xa += np.where(rng.random(active.size) < p[xa], 1, -1)
        x[active] = xa
        hmax[active] = np.maximum(hmax[active], xa)
        hit = xa == 0
        tau[active[hit]] = t
        done = hit if stop_height is None else hit | (xa >= stop_height)
        if done.any():
            active = active[~done]
            if active.size == 0:
                break
    return tau, hmax


def sample_first_passage(spec: WalkSpec, k: int, cap: int, rng_seed, reps: int = 1,
                         stop_height: Optional[int] = None) -> FirstPassageSample:
    """Simulate ``reps`` paths from ``k`` until they hit 0 or run ``cap`` steps.

    From ``k = 0`` the time recorded is the first return.  ``h_max`` is the
    running maximum (the excursion height when ``k = 0``).  With
    ``stop_height`` a run also stops on reaching that height; its ``tau`` is
    then -1 but ``h_max >= stop_height`` is exact.
    """
    k, cap, reps = int(k), int(cap), int(reps)
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if k < 0 or reps < 1:
        raise ValueError("need k >= 0 and reps >= 1")
    top = k + cap + 1 if stop_height is None else min(k + cap + 1, int(stop_height) + 1)
    p, _ = step_probs(spec, top)
    taus, hms = [], []
    for ss, size in _chunks(rng_seed, reps):
        t, h = _first_passage_chunk(p, k, cap, size, make_rng(ss), stop_height)
        taus.append(t)
        hms.append(h)
    return FirstPassageSample(k=k, cap=cap, tau=np.concatenate(taus), h_max=np.concatenate(hms))


def sample_positions(spec: WalkSpec, k: int, n: int, rng_seed, reps: int) -> np.ndarray:
    """``X_n`` for ``reps`` independent reflecting paths started at ``k``."""
    k, n = int(k), int(n)
    p, _ = step_probs(spec, k + n + 1)
    out = []
    for ss, size in _chunks(rng_seed, reps):
        rng = make_rng(ss)
        x = np.full(size, k, dtype=np.int64)
        for _ in range(n):
            x += np.where(rng.random(size) < p[x], 1, -1)
        out.append(x)
    return np.concatenate(out)


def _chunks(seed, reps):
    """Split ``reps`` into fixed-size chunks with spawned child seeds."""
    reps = int(reps)
    if reps <= CHUNK:
        yield (seed if isinstance(seed, np.random.SeedSequence)
               else np.random.SeedSequence(int(seed))), reps
        return
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    n_chunks = -(-reps // CHUNK)
    for i, child in enumerate(root.spawn(n_chunks)):
        yield child, min(CHUNK, reps - i * CHUNK)


# ---------------------------------------------------------------------------
# couplings

@dataclass(frozen=True)
class CouplingTrace:
    """One coupled run.

    Row ``t`` of ``steps`` holds ``(X_t, X'_t)``; ``events[t]`` is the event
    on the step from ``t - 1`` to ``t`` (``events[0]`` is always none).
    """

    steps: np.ndarray = field(repr=False)
    events: np.ndarray = field(repr=False)
    stop_reason: StopReason = StopReason.CAP_REACHED

    @property
    def alarms(self) -> List[int]:
        return np.flatnonzero(self.events == ALARM).tolist()

    @property
    def discrepancies(self) -> List[int]:
        return np.flatnonzero(self.events == DISCREPANCY).tolist()

    @property
    def missteps(self) -> np.ndarray:
        """``N(t)``: cumulative misstep count up to each time ``t``."""
        return np.cumsum(self.events != NO_EVENT)

    def gap_rule_holds(self) -> bool:
        gap = np.abs(self.steps[:, 0] - self.steps[:, 1])
        d = np.diff(gap)
        moved = d != 0
        return bool(np.all(np.abs(d[moved]) == 2) and np.all(self.events[1:][moved] != NO_EVENT))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "X", "X_prime", "event"])
        for t, ((xv, yv), ev) in enumerate(zip(self.steps.tolist(), self.events.tolist())):
            w.writerow([t, xv, yv, _EVENT_NAMES[ev]])
        return buf.getvalue()


@dataclass(frozen=True)
class CouplingBatch:
    """Summary of a batch of coupled runs.

    ``history`` (``(T+1, reps, 2)`` heights) and ``events`` (``(T+1, reps)``)
    are present only when requested; rows past a run's stop time repeat the
    final state with no event.
    """

    k: int
    cap: int
    stop_time: np.ndarray = field(repr=False)
    stop_reason: np.ndarray = field(repr=False)  # StopReason values as strings
    x_final: np.ndarray = field(repr=False)
    y_final: np.ndarray = field(repr=False)
    alarms: np.ndarray = field(repr=False)
    discrepancies: np.ndarray = field(repr=False)
    gap_checks: int = 0
    order_violations: int = 0
    history: Optional[np.ndarray] = field(default=None, repr=False)
    events: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def missteps(self) -> np.ndarray:
        return self.alarms + self.discrepancies

    def trace(self, i: int) -> CouplingTrace:
        if self.history is None:
            raise ValueError("batch was run without history")
        T = int(self.stop_time[i])
        return CouplingTrace(steps=self.history[:T + 1, i, :].copy(),
                             events=self.events[:T + 1, i].copy(),
                             stop_reason=StopReason(str(self.stop_reason[i])))


class _Recorder:
    def __init__(self, k, y0, reps, cap, keep_history):
        self.x = np.full(reps, k, dtype=np.int64)
        self.y = np.full(reps, y0, dtype=np.int64)
        self.stop = np.full(reps, cap, dtype=np.int64)
        self.reason = np.full(reps, StopReason.CAP_REACHED.value, dtype="<U16")
        self.alarms = np.zeros(reps, dtype=np.int64)
        self.disc = np.zeros(reps, dtype=np.int64)
        self.checks = 0
        self.order_bad = np.zeros(reps, dtype=bool)
        self.keep = keep_history
        if keep_history:
            self.hist = np.zeros((cap + 1, reps, 2), dtype=np.int64)
            self.ev = np.zeros((cap + 1, reps), dtype=np.int8)
            self.hist[0, :, 0] = k
            self.hist[0, :, 1] = y0

    def step(self, t, active, xa, ya, nx, ny, ev, order=0):
        gap_before = np.abs(xa - ya)
        d = np.abs(nx - ny) - gap_before
        bad = (d != 0) & ((np.abs(d) != 2) | (ev == NO_EVENT))
        if bad.any():
            i = int(active[np.flatnonzero(bad)[0]])
            raise CouplingInvariantError(f"gap changed outside a misstep in run {i} at step {t}")
        self.checks += int(active.size)
        if order:
            # order=+1 expects X <= X' throughout, order=-1 expects X >= X'
            self.order_bad[active] |= order * (nx - ny) > 0
        self.x[active] = nx
        self.y[active] = ny
        self.alarms[active] += ev == ALARM
        self.disc[active] += ev == DISCREPANCY
        if self.keep:
            self.hist[t] = self.hist[t - 1]
            self.hist[t, active, 0] = nx
            self.hist[t, active, 1] = ny
            self.ev[t, active] = ev

    def finish(self, t, idx, reason):
        self.stop[idx] = t
        self.reason[idx] = reason.value

    def batch(self, k, cap, used):
        hist = ev = None
        if self.keep:
            hist, ev = self.hist[:used + 1], self.ev[:used + 1]
        return CouplingBatch(k=k, cap=cap, stop_time=self.stop, stop_reason=self.reason,
                             x_final=self.x, y_final=self.y, alarms=self.alarms,
                             discrepancies=self.disc, gap_checks=self.checks,
                             order_violations=int(self.order_bad.sum()),
                             history=hist, events=ev)


def _sym_rates(spec, top):
    p, q = step_probs(spec, top)
    diff = q[1:] - p[1:]
    if np.all(diff >= 0):
        return q - p, -1
    if np.all(diff <= 0):
        return p - q, +1
    x = int(np.flatnonzero(diff > 0)[0]) + 1
    raise DriftSignError(
        f"q_x - p_x changes sign (e.g. at x={x}); the symmetric coupling needs one sign"
    )


def coupled_sym_batch(spec: WalkSpec, k: int, cap: int, rng_seed, reps: int = 1,
                      target: int = 0, keep_history: bool = False) -> CouplingBatch:
    """Couple the walk to a symmetric simple walk, ``reps`` independent runs.

    Runs stop when ``X`` hits ``target`` (default 0) or after ``cap`` steps.
    The symmetric walk does not reflect and may go negative.  Runs where the
    forced direction fails to dominate (``X > X'`` for the downward
    construction) are counted in ``order_violations``; there should be none.
    """
    k, cap, reps, target = int(k), int(cap), int(reps), int(target)
    if k < 1 or cap < 1 or reps < 1:
        raise ValueError("need k >= 1, cap >= 1, reps >= 1")
    if not 0 <= target < k:
        raise ValueError("target must lie in [0, k)")
    rate, forced = _sym_rates(spec, k + cap + 1)
    rate = np.clip(rate, 0.0, 1.0)
    rng = make_rng(rng_seed)
    rec = _Recorder(k, k, reps, cap, keep_history)
    active = np.arange(reps)
    used = 0
    for t in range(1, cap + 1):
        used = t
        xa, ya = rec.x[active], rec.y[active]
        xi = rng.random(active.size)
        alarm = rng.random(active.size) < rate[xa]
        free = np.where(xi > 0.5, 1, -1)
        nx = xa + np.where(alarm, forced, free)
        ny = ya + free
        ev = np.where(alarm, ALARM, NO_EVENT).astype(np.int8)
        rec.step(t, active, xa, ya, nx, ny, ev, order=-forced)
        hit = nx == target
        if hit.any():
            rec.finish(t, active[hit], StopReason.HIT_TARGET)
            active = active[~hit]
            if active.size == 0:
                break
    return rec.batch(k, cap, used)


def coupled_sym_run(spec: WalkSpec, k: int, cap: int, rng_seed, target: int = 0) -> CouplingTrace:
    """Single symmetric-coupling trace (see :func:`coupled_sym_batch`)."""
    return coupled_sym_batch(spec, k, cap, rng_seed, 1, target, keep_history=True).trace(0)


def imbedded_alarm_prob(spec: WalkSpec, x_max: int):
    """``(a, direction, qBI)`` over heights ``0..x_max``.

    ``direction`` is +1 where ``p_x >= p_x^BI`` (alarm forces up) and -1
    otherwise.  Entries at ``x = 0`` are unused.
    """
    p, q = step_probs(spec, x_max)
    xs = np.arange(1, x_max + 1, dtype=np.float64)
    qbi = np.empty(x_max + 1)
    qbi[0] = 0.0
    if spec.drift == 0.0:
        qbi[1:] = 0.5
    else:
        qbi[1:] = imbedded_down_prob(xs, spec.drift)
    pbi = 1.0 - qbi
    up = p >= pbi
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(up, (p - pbi) / qbi, (q - qbi) / pbi)
    a[0] = 0.0
    return a, np.where(up, 1, -1), qbi


def coupled_bessel_imbedded_batch(spec: WalkSpec, k: int, cap: int, rng_seed, reps: int = 1,
                                  h_floor: int = 8, target: Optional[int] = None,
                                  keep_history: bool = False) -> CouplingBatch:
    """Couple the walk to the Bessel-imbedded walk, ``reps`` independent runs.

    A run stops when ``X`` hits ``target`` (default ``h_floor``), when the
    imbedded walk hits ``h_floor``, or after ``cap`` steps.  Below the floor
    the coupling is not defined, so runs never enter it.
    """
    k, cap, reps, h_floor = int(k), int(cap), int(reps), int(h_floor)
    target = h_floor if target is None else int(target)
    if h_floor < 1:
        raise ValueError("h_floor must be >= 1")
    if not h_floor <= target < k:
        raise ValueError("need h_floor <= target < k")
    top = k + cap + 1
    a, direction, qbi = imbedded_alarm_prob(spec, top)
    seg = a[h_floor:]
    if np.any(~np.isfinite(seg)) or np.any(seg < 0) or np.any(seg > 1):
        bad = int(np.flatnonzero(~((seg >= 0) & (seg <= 1)))[0]) + h_floor
        raise CouplingConfigError(f"alarm probability a({bad}) = {a[bad]!r} is outside [0, 1]; "
                                  f"raise h_floor")
    rng = make_rng(rng_seed)
    rec = _Recorder(k, k, reps, cap, keep_history)
    active = np.arange(reps)
    used = 0
    for t in range(1, cap + 1):
        used = t
        xa, ya = rec.x[active], rec.y[active]
        xi = rng.random(active.size)
        alarm = rng.random(active.size) < a[xa]
        qx, qy = qbi[xa], qbi[ya]
        free_x = np.where(xi > qx, 1, -1)
        ny = ya + np.where(xi > qy, 1, -1)
        nx = xa + np.where(alarm, direction[xa], free_x)
        disc = ~alarm & (xi > np.minimum(qx, qy)) & (xi <= np.maximum(qx, qy))
        ev = np.where(alarm, ALARM, np.where(disc, DISCREPANCY, NO_EVENT)).astype(np.int8)
        rec.step(t, active, xa, ya, nx, ny, ev)
        hit = nx == target
        floor = ~hit & (ny <= h_floor)
        done = hit | floor
        if done.any():
            rec.finish(t, active[hit], StopReason.HIT_TARGET)
            rec.finish(t, active[floor], StopReason.FLOOR_REACHED)
            active = active[~done]
            if active.size == 0:
                break
    return rec.batch(k, cap, used)


def coupled_bessel_imbedded_run(spec: WalkSpec, k: int, cap: int, rng_seed, h_floor: int = 8,
                                target: Optional[int] = None) -> CouplingTrace:
    """Single imbedded-coupling trace (see :func:`coupled_bessel_imbedded_batch`)."""
    return coupled_bessel_imbedded_batch(spec, k, cap, rng_seed, 1, h_floor, target,
                                         keep_history=True).trace(0)


# ---------------------------------------------------------------------------
# estimation

@dataclass(frozen=True)
class Estimate:
    p_hat: float
    ci_halfwidth: float
    lo: float
    hi: float
    reps: int
    hits: int
    censored_fraction: float = 0.0

    def __iter__(self):
        return iter((self.p_hat, self.ci_halfwidth))

    @property
    def sigma(self) -> float:
        """Binomial standard error at ``p_hat``."""
        return math.sqrt(max(self.p_hat * (1.0 - self.p_hat), 0.0) / self.reps)


def wilson_interval(hits: int, reps: int, z: float = _Z95):
    """Wilson score interval ``(lo, hi)`` for a binomial proportion."""
    n = float(reps)
    ph = hits / n
    denom = 1.0 + z * z / n
    centre = (ph + z * z / (2 * n)) / denom
    half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if hits == 0 else max(centre - half, 0.0)
    hi = 1.0 if hits == reps else min(centre + half, 1.0)
    return lo, hi


EVENT_KINDS = ("tau_eq", "tau_ge", "x_eq", "h_ge", "missteps_ge")


def _count_chunk(kind, spec, params, size, ss):
    if kind == "tau_eq":
        m = int(params["m"])
        s = sample_first_passage(spec, params.get("k", 0), m, ss, size)
        return int(np.sum(s.tau == m)), 0
    if kind == "tau_ge":
        n = int(params["n"])
        if n <= 1:
            return size, 0
        s = sample_first_passage(spec, params.get("k", 0), n - 1, ss, size)
        return int(np.sum(s.censored)), 0
    if kind == "x_eq":
        x = sample_positions(spec, params.get("k", 0), int(params["n"]), ss, size)
        return int(np.sum(x == int(params["j"]))), 0
    if kind == "h_ge":
        h = int(params["h"])
        cap = int(params.get("cap", 100 * h * h + 100))
        s = sample_first_passage(spec, params.get("k", 0), cap, ss, size, stop_height=h)
        reached = s.h_max >= h
        return int(np.sum(reached)), int(np.sum(~reached & s.censored))
    if kind == "missteps_ge":
        coupling = params.get("coupling", "imbedded")
        kw = dict(k=int(params["k"]), cap=int(params["cap"]), rng_seed=ss, reps=size)
        if coupling == "sym":
            b = coupled_sym_batch(spec, target=int(params.get("target", 0)), **kw)
        else:
            b = coupled_bessel_imbedded_batch(spec, h_floor=int(params.get("h_floor", 8)),
                                              target=params.get("target"), **kw)
        censored = np.sum(b.stop_reason == StopReason.CAP_REACHED.value)
        return int(np.sum(b.missteps >= int(params["t"]))), int(censored)
    raise ValueError(f"unknown event kind {kind!r}; expected one of {EVENT_KINDS}")


def estimate(event_kind: str, spec: WalkSpec, params: dict, reps: int, rng_seed,
             threads: int = 1) -> Estimate:
    """Monte-Carlo probability of an event with a Wilson 95% interval.

    Event kinds and their ``params``:

    ``tau_eq``  {m, k=0}     ``tau_0 = m``
    ``tau_ge``  {n, k=0}     ``tau_0 >= n``
    ``x_eq``    {n, j, k=0}  ``X_n = j``
    ``h_ge``    {h, k=0, cap}  the running maximum before ``tau_0`` reaches ``h``
    ``missteps_ge`` {t, k, cap, coupling, h_floor, target}  ``N(stop) >= t``

    Work is split into fixed chunks with spawned seeds, so the result does
    not depend on ``threads``.  Runs censored at ``cap`` count as misses
    and are reported in ``censored_fraction``.
    """
    reps = int(reps)
    if reps < 100:
        raise ValueError("reps must be >= 100")
    if event_kind not in EVENT_KINDS:
        raise ValueError(f"unknown event kind {event_kind!r}; expected one of {EVENT_KINDS}")
    root = np.random.SeedSequence(int(rng_seed))
    n_chunks = -(-reps // CHUNK)
    jobs = [(child, min(CHUNK, reps - i * CHUNK)) for i, child in enumerate(root.spawn(n_chunks))]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as ex:
            results = list(ex.map(lambda j: _count_chunk(event_kind, spec, params, j[1], j[0]), jobs))
    else:
        results = [_count_chunk(event_kind, spec, params, size, ss) for ss, size in jobs]
    hits = sum(r[0] for r in results)
    cens = sum(r[1] for r in results)
    lo, hi = wilson_interval(hits, reps)
    return Estimate(p_hat=hits / reps, ci_halfwidth=(hi - lo) / 2, lo=lo, hi=hi, reps=reps,
                    hits=hits, censored_fraction=cens / reps)
