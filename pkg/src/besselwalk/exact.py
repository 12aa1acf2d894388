"""Exact finite-horizon laws of a Bessel-like walk by forward recursion.

All tables are computed in binary64 by pushing probability mass one step at
a time:

    P(X_{n+1} = j) = P(X_n = j-1) p_{j-1} + P(X_n = j+1) q_{j+1}

with ``p_0 = 1``.  Only the support window ``[max(0, k-n), k+n]`` is touched
each step, and rows are kept in a two-buffer rolling store unless the full
grid is requested.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np

from .walk import WalkSpec, step_probs

__all__ = [
    "ResourceLimitError",
    "FirstPassageTable",
    "OccupancyGrid",
    "occupancy",
    "first_passage",
    "return_prob_zero",
    "renewal_return_prob",
    "confinement_prob",
    "DEFAULT_MAX_CELLS",
]

# Full-grid storage above this many float64 cells is refused (~400 MB).
DEFAULT_MAX_CELLS = 50_000_000


class ResourceLimitError(MemoryError):
    """A table would exceed the configured cell budget."""

    def __init__(self, what: str, cells: int, limit: int):
        super().__init__(f"{what}: {cells} cells exceeds the limit of {limit}")
        self.cells = cells
        self.limit = limit


def _fmt17(v: float) -> str:
    return format(float(v), ".17g")


@dataclass(frozen=True)
class FirstPassageTable:
    """Exact law of ``tau_0`` from height ``k`` up to ``n_max``.

    ``f[m] = P_k(tau_0 = m)`` and ``tail[m] = P_k(tau_0 >= m)`` for
    ``0 <= m <= n_max``.  For ``k = 0`` the time is the first *return*.
    """

    k: int
    n_max: int
    f: np.ndarray = field(repr=False)
    tail: np.ndarray = field(repr=False)

    def interval(self, lo: int, hi: Optional[int]) -> float:
        """``P_k(tau_0 in [lo, hi])``; ``hi=None`` means ``[lo, infinity]``."""
        lo = max(int(lo), 0)
        if hi is None:
            return float(self.tail[lo]) if lo <= self.n_max else float("nan")
        hi = int(hi)
        if hi < lo:
            return 0.0
        if hi > self.n_max:
            raise ValueError(f"interval end {hi} beyond horizon {self.n_max}")
        return float(self.f[lo:hi + 1].sum())

    def mean_truncated(self, n: Optional[int] = None) -> float:
        """``sum_{m <= n} m f_m``."""
        n = self.n_max if n is None else min(int(n), self.n_max)
        m = np.arange(n + 1, dtype=np.float64)
        return float(np.dot(m, self.f[:n + 1]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("m,f,tail\n")
        for m in range(self.n_max + 1):
            buf.write(f"{m},{_fmt17(self.f[m])},{_fmt17(self.tail[m])}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, k: int) -> "FirstPassageTable":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if lines[0].strip() != "m,f,tail":
            raise ValueError("expected header 'm,f,tail'")
        rows = [ln.split(",") for ln in lines[1:]]
        f = np.array([float(r[1]) for r in rows])
        tail = np.array([float(r[2]) for r in rows])
        return cls(k=k, n_max=len(rows) - 1, f=f, tail=tail)


@dataclass(frozen=True)
class OccupancyGrid:
    """Exact rows ``P_k(X_n = j)``.

    ``rows`` is the full ``(n_max+1, k+n_max+1)`` grid when it was requested,
    otherwise ``None``; ``tracked`` always holds the time series of each
    tracked height and ``final`` the last row.
    """

    k: int
    n_max: int
    rows: Optional[np.ndarray] = field(repr=False)
    final: np.ndarray = field(repr=False)
    tracked: Dict[int, np.ndarray] = field(repr=False)

    def prob(self, n: int, j: int) -> float:
        if self.rows is not None:
            if j < 0 or j >= self.rows.shape[1]:
                return 0.0
            return float(self.rows[n, j])
        if j in self.tracked:
            return float(self.tracked[j][n])
        if n == self.n_max:
            return float(self.final[j]) if 0 <= j < self.final.size else 0.0
        raise KeyError(f"height {j} was not tracked; request the full grid")

    def column(self, j: int) -> np.ndarray:
        if self.rows is not None:
            return self.rows[:, j]
        return self.tracked[j]


def _propagate(p, q, start, n_max, width, *, absorb_zero=False, ceiling=None,
               prune_to_zero=False, keep_rows=False, track=(), max_cells=DEFAULT_MAX_CELLS):
    """Core forward recursion.

    Returns ``(rows or None, final_row, tracked, absorbed)`` where
    ``absorbed[t]`` is the mass entering 0 (when ``absorb_zero``) at step t,
    and ``tracked[j][t]`` is the mass at height ``j`` after step t (before
    any absorption is cleared).
    """
    if keep_rows:
        cells = (n_max + 1) * width
        if cells > max_cells:
            raise ResourceLimitError("full occupancy grid", cells, max_cells)
        rows = np.zeros((n_max + 1, width))
    else:
        rows = None
    cur = np.zeros(width)
    nxt = np.zeros(width)
    cur[start] = 1.0
    track = tuple(int(j) for j in track)
    tracked = {j: np.zeros(n_max + 1) for j in track}
    absorbed = np.zeros(n_max + 1)
    for j in track:
        if 0 <= j < width:
            tracked[j][0] = cur[j]
    if rows is not None:
        rows[0] = cur
    lo, hi = start, start
    for t in range(1, n_max + 1):
        nlo = max(lo - 1, 0)
        nhi = min(hi + 1, width - 1)
        nxt[nlo:nhi + 1] = 0.0
        b = min(hi, width - 2)
        if b >= lo:
            nxt[lo + 1:b + 2] += cur[lo:b + 1] * p[lo:b + 1]
        a = max(lo, 1)
        if hi >= a:
            nxt[a - 1:hi] += cur[a:hi + 1] * q[a:hi + 1]
        for j in track:
            if 0 <= j < width:
                tracked[j][t] = nxt[j]
        if absorb_zero:
            absorbed[t] = nxt[0]
            nxt[0] = 0.0
            nlo = max(nlo, 1)
        if ceiling is not None and nhi >= ceiling:
            nxt[ceiling:nhi + 1] = 0.0
            nhi = ceiling - 1
        if prune_to_zero and nhi > n_max - t:
            # mass above n_max - t cannot reach 0 by the horizon
            nxt[max(n_max - t + 1, 0):nhi + 1] = 0.0
            nhi = n_max - t
        if rows is not None and nhi >= nlo:
            rows[t, nlo:nhi + 1] = nxt[nlo:nhi + 1]
        cur[lo:hi + 1] = 0.0
        cur, nxt = nxt, cur
        lo, hi = nlo, nhi
        if hi < lo:
            break
    return rows, cur.copy(), tracked, absorbed


def occupancy(spec: WalkSpec, k: int, n_max: int, *, full: bool = True,
              track: Iterable[int] = (), max_cells: int = DEFAULT_MAX_CELLS) -> OccupancyGrid:
    """Exact law of ``X_n`` for ``0 <= n <= n_max`` started from ``k``.

    With ``full=False`` only the rolling two-row store is used; the heights in
    ``track`` (plus 0 and ``k``) are recorded over time.
    """
    k, n_max = int(k), int(n_max)
    if k < 0 or n_max < 1:
        raise ValueError("need k >= 0 and n_max >= 1")
    width = k + n_max + 2
    p, q = step_probs(spec, width - 1)
    tr = sorted(set(track) | {0, k})
    rows, final, tracked, _ = _propagate(p, q, k, n_max, width, keep_rows=full,
                                         track=tr, max_cells=max_cells)
    if rows is not None:
        rows = rows[:, :width - 1]
        rows.setflags(write=False)
    return OccupancyGrid(k=k, n_max=n_max, rows=rows, final=final[:width - 1],
                         tracked=tracked)


def first_passage(spec: WalkSpec, k: int, n_max: int) -> FirstPassageTable:
    """Exact ``P_k(tau_0 = m)`` for ``m <= n_max``, read as mass entering 0.

    From ``k = 0`` the first step is forced to 1 and ``tau_0`` is the first
    return time, so ``f`` is supported on even ``m >= 2``.
    """
    k, n_max = int(k), int(n_max)
    if k < 0 or n_max < 2:
        raise ValueError("need k >= 0 and n_max >= 2")
    width = k + n_max + 2
    p, q = step_probs(spec, width - 1)
    _, _, _, f = _propagate(p, q, k, n_max, width, absorb_zero=True, prune_to_zero=True)
    f = f.copy()
    tail = np.empty(n_max + 1)
    tail[0] = 1.0
    tail[1:] = 1.0 - np.cumsum(f[:-1])
    # rounding can push the tail a hair below zero for walks that are nearly surely absorbed
    np.maximum(tail, 0.0, out=tail)
    f.setflags(write=False)
    tail.setflags(write=False)
    return FirstPassageTable(k=k, n_max=n_max, f=f, tail=tail)


def return_prob_zero(spec: WalkSpec, n_max: int) -> np.ndarray:
    """``P_0(X_n = 0)`` for ``0 <= n <= n_max`` read off the occupancy rows.

    :func:`renewal_return_prob` computes the same sequence independently by
    renewal convolution; the identity audit compares the two.
    """
    grid = occupancy(spec, 0, n_max, full=False)
    return grid.tracked[0].copy()


def renewal_return_prob(f0: np.ndarray, n_max: int) -> np.ndarray:
    """Solve ``u_n = sum_{m=1}^n f_m u_{n-m}``, ``u_0 = 1`` for return probabilities."""
    n_max = int(n_max)
    f0 = np.asarray(f0, dtype=np.float64)
    if f0.size < n_max + 1:
        raise ValueError("first-return law shorter than the horizon")
    u = np.zeros(n_max + 1)
    u[0] = 1.0
    fr = f0[1:n_max + 1]
    for n in range(2, n_max + 1, 2):
        # u at odd times vanishes; f at odd times vanishes
        u[n] = np.dot(fr[:n], u[n - 1::-1])
    return u


def confinement_prob(spec: WalkSpec, q: int, h: int, m: int) -> float:
    """``P_q(X_n in (0, h) for all n <= m)`` on the strip absorbed at 0 and h."""
    q, h, m = int(q), int(h), int(m)
    if not 0 < q < h:
        raise ValueError("need 0 < q < h")
    if m < 0:
        raise ValueError("m must be >= 0")
    if m == 0:
        return 1.0
    pp, qq = step_probs(spec, h + 1)
    _, final, _, _ = _propagate(pp, qq, q, m, h + 2, absorb_zero=True, ceiling=h)
    return float(final[1:h].sum())
