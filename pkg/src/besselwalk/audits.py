"""Exact audits of identities and inequalities satisfied by the walk laws.

Identities (residuals should sit at float noise, <= 1e-12):

* reversal   ``P_k(X_n = 0) = p_k lambda_k P_0(X_n = k)``
* renewal    ``P_k(X_n = 0) = sum_j P_k(tau_0 = n-j) P_0(X_j = 0)``
* duality    ``P_0(tau_0 > n) = P~_0(X_n = 0)`` for even n, ``P~`` the dual walk

Inequalities (checked in cross-multiplied form, violation when the
left side exceeds the right by more than ``slack``):

* convexity / averaging of the first-return law ``f_m``
* the lattice-path interval inequality for two starting heights and its
  point, domination and lower-bound corollaries.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .exact import first_passage, occupancy, renewal_return_prob
from .walk import WalkSpec, build_scale_table, dual_spec, step_probs

__all__ = [
    "IdentityReport",
    "InequalityReport",
    "Violation",
    "audit_identities",
    "audit_inequalities",
    "INEQUALITY_FAMILIES",
]

INEQUALITY_FAMILIES = (
    "convex", "average", "intervals", "intervals2",
    "lattice1", "lattice2", "lattice3", "lattice4", "lattice5", "lattice5a",
)


@functools.lru_cache(maxsize=32)
def _zero_start(spec: WalkSpec, n: int, heights: tuple):
    return occupancy(spec, 0, n, full=False, track=heights)


@functools.lru_cache(maxsize=64)
def _fp(spec: WalkSpec, k: int, n: int):
    return first_passage(spec, k, n)


@dataclass(frozen=True)
class IdentityReport:
    spec: str
    n: int
    k: int
    reversal: float
    renewal: float
    duality: float
    return_routes: float
    parity_zero: int
    parity_violations: int

    @property
    def max_residual(self) -> float:
        return max(self.reversal, self.renewal, self.duality, self.return_routes)

    def passed(self, tol: float = 1e-12) -> bool:
        return self.max_residual <= tol and self.parity_violations == 0


def audit_identities(spec: WalkSpec, n: int, k: int) -> IdentityReport:
    """Max absolute residuals of the three identities over all times ``t <= n``.

    Entries that vanish by parity on both sides are counted in
    ``parity_zero`` rather than reported as residuals; a nonzero value where
    parity forces zero is counted in ``parity_violations``.
    """
    n, k = int(n), int(k)
    if k < 1:
        raise ValueError("reversal identity needs k >= 1")
    if n < 2:
        raise ValueError("need n >= 2")
    t = np.arange(n + 1)

    from_zero = _zero_start(spec, n, (k,))
    u = from_zero.tracked[0]
    to_k = from_zero.tracked[k]
    from_k = occupancy(spec, k, n, full=False)
    back = from_k.tracked[0]

    p, q = step_probs(spec, k)
    lam_k = float(np.prod(q[1:k + 1] / p[1:k + 1]))
    rev = np.abs(back - p[k] * lam_k * to_k)

    fk = _fp(spec, k, n).f
    ren_k = np.abs(back - np.convolve(fk, u)[:n + 1])
    f0 = _fp(spec, 0, n).f
    routes = np.abs(u - renewal_return_prob(f0, n))

    dual = _zero_start(dual_spec(spec), n, ())
    tail0 = _fp(spec, 0, n + 1).tail
    even = t[t % 2 == 0]
    dua = np.abs(tail0[even + 1] - dual.tracked[0][even])

    odd_k = (t - k) % 2 == 1
    parity_zero = int(np.count_nonzero(odd_k)) + int(np.count_nonzero(t % 2 == 1))
    parity_violations = int(
        np.count_nonzero(back[odd_k]) + np.count_nonzero(to_k[odd_k])
        + np.count_nonzero(u[t % 2 == 1])
    )
    return IdentityReport(
        spec=spec.digest(), n=n, k=k,
        reversal=float(rev[~odd_k].max(initial=0.0)),
        renewal=float(ren_k.max(initial=0.0)),
        duality=float(dua.max(initial=0.0)),
        return_routes=float(routes.max(initial=0.0)),
        parity_zero=parity_zero,
        parity_violations=parity_violations,
    )


# ---------------------------------------------------------------------------
# inequalities

@dataclass(frozen=True)
class Violation:
    family: str
    indices: tuple
    lhs: float
    rhs: float

    @property
    def excess(self) -> float:
        return self.lhs - self.rhs


@dataclass
class InequalityReport:
    spec: str
    n_max: int
    heights: tuple
    checked: Dict[str, int] = field(default_factory=dict)
    worst_slack: Dict[str, float] = field(default_factory=dict)
    violations: List[Violation] = field(default_factory=list)
    violation_counts: Dict[str, int] = field(default_factory=dict)
    excluded: Dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.violations

    def _record(self, family, lhs, rhs, idx_cols, slack, keep=20):
        lhs = np.asarray(lhs, dtype=np.float64)
        rhs = np.asarray(rhs, dtype=np.float64)
        self.checked[family] = self.checked.get(family, 0) + int(lhs.size)
        if lhs.size == 0:
            return
        margin = rhs - lhs
        worst = float(margin.min())
        self.worst_slack[family] = min(self.worst_slack.get(family, np.inf), worst)
        bad = np.flatnonzero(margin < -slack)
        if bad.size:
            self.violation_counts[family] = self.violation_counts.get(family, 0) + int(bad.size)
            order = bad[np.argsort(margin[bad])][:keep]
            for i in order:
                idx = tuple(int(c[i]) if np.isfinite(c[i]) else None for c in idx_cols)
                self.violations.append(Violation(family, idx, float(lhs[i]), float(rhs[i])))


class _Intervals:
    """Vectorized ``P_h(tau_0 in [a, b])`` with ``b = inf`` allowed (encoded as -1)."""

    def __init__(self, f: np.ndarray):
        self.f = f
        self.cum = np.concatenate(([0.0], np.cumsum(f)))
        self.N = f.size - 1

    def __call__(self, a, b):
        a = np.maximum(np.asarray(a), 0)
        b = np.asarray(b)
        inf = b < 0
        bb = np.where(inf, self.N, np.minimum(b, self.N))
        if np.any(~inf & (b > self.N)):
            raise ValueError("interval beyond table horizon")
        val = np.where(bb >= a, self.cum[bb + 1] - self.cum[np.minimum(a, self.N + 1)], 0.0)
        tail = 1.0 - self.cum[np.minimum(a, self.N + 1)]
        return np.where(inf, tail, np.maximum(val, 0.0))


def _shift(b, by):
    b = np.asarray(b)
    return np.where(b < 0, b, b + by)


@functools.lru_cache(maxsize=4)
def _all_quadruples(n_max):
    vals = range(n_max + 2)  # n_max + 1 stands for infinity
    quads = np.array(list(itertools.combinations_with_replacement(vals, 4)), dtype=np.int64)
    # infinity may only be used for s
    quads = quads[quads[:, 2] <= n_max]
    quads.setflags(write=False)
    return quads


@functools.lru_cache(maxsize=4)
def _all_triples(n_max):
    trip = np.array(list(itertools.combinations(range(n_max + 1), 3)), dtype=np.int64)
    trip.setflags(write=False)
    return trip


def _quadruples(n_max, exhaustive_limit, samples, rng):
    if n_max <= exhaustive_limit:
        quads = _all_quadruples(n_max)
    else:
        quads = np.sort(rng.integers(0, n_max + 1, size=(samples, 4)), axis=1)
        inf_rows = rng.random(samples) < 0.1
        quads[inf_rows, 3] = n_max + 1
    p, q, r, s = quads.T
    s = np.where(s == n_max + 1, -1, s)
    return p, q, r, s


def _pairs_nj(n_max, l, exhaustive_limit, samples, rng):
    if n_max <= exhaustive_limit:
        nn, jj = np.meshgrid(np.arange(n_max + 1), np.arange(1, n_max + 1), indexing="ij")
        nn, jj = nn.ravel(), jj.ravel()
    else:
        nn = rng.integers(l, n_max + 1, size=samples)
        jj = rng.integers(1, n_max + 1, size=samples)
    keep = (nn >= l) & (nn + jj <= n_max)
    return nn[keep], jj[keep]


def _triples(n_max, exhaustive_limit, samples, rng):
    if n_max <= exhaustive_limit:
        trip = _all_triples(n_max)
    else:
        trip = np.sort(rng.integers(0, n_max + 1, size=(samples, 3)), axis=1)
        trip = trip[(trip[:, 0] < trip[:, 1]) & (trip[:, 1] < trip[:, 2])]
    return trip.T


def _keep(rep, family, degenerate, literal_domain):
    degenerate = np.asarray(degenerate)
    if literal_domain:
        return np.ones(degenerate.shape, dtype=bool)
    rep.excluded[family] = rep.excluded.get(family, 0) + int(np.count_nonzero(degenerate))
    return ~degenerate


def audit_inequalities(spec: WalkSpec, n_max: int, heights: Sequence[int], *,
                       seed: int = 0, samples: int = 100_000,
                       exhaustive_limit: int = 64, slack: float = 1e-13,
                       literal_domain: bool = False) -> InequalityReport:
    """Check every inequality family on exact first-passage tables.

    Pairwise families (convexity, averaging, domination) are enumerated
    exhaustively at every horizon.  Families over three or four indices are
    enumerated exhaustively when ``n_max <= exhaustive_limit`` and otherwise
    checked on ``samples`` seeded random index tuples per height pair.

    With starting height 0, ``tau_0`` is the first return time.  In the
    odd-parity families the height-0 path is shifted one step, and when its
    window reaches back to time 0 or 1 the path swap behind the inequality
    degenerates (the other path can hit 0 at the instant the shifted one
    starts).  Those tuples are false in general, e.g.
    ``P_1(tau_0 in [0,1]) P_0(tau_0 >= 1) = q_1 > 0`` while the right side is
    0, so by default they are skipped and counted in ``excluded``.
    ``literal_domain=True`` keeps them.
    """
    n_max = int(n_max)
    hs = tuple(sorted(set(int(h) for h in heights) | {0}))
    rng = np.random.default_rng(seed)
    horizon = n_max + 2
    fps = {h: _fp(spec, h, horizon) for h in hs}
    iv = {h: _Intervals(fps[h].f) for h in hs}
    table = build_scale_table(spec, max(max(hs), 1))
    M = table.M.astype(np.float64)
    rep = InequalityReport(spec=spec.digest(), n_max=n_max, heights=hs)

    # convexity and averaging of the first-return law
    f = fps[0].f
    cum0 = iv[0].cum
    for k in range(2, n_max, 2):
        m = np.arange(k + 2, n_max - k + 1, 2)
        if m.size == 0:
            continue
        rhs = (f[m + k] + f[m - k]) / 2.0
        kk = np.full(m.size, k)
        rep._record("convex", f[m], rhs, (m, kk), slack)
        avg = (cum0[m + k + 1] - cum0[m - k]) / (k + 1)
        rep._record("average", f[m], avg, (m, kk), slack)

    for k, l in itertools.combinations(hs, 2):
        fk, fl = fps[k].f, fps[l].f
        Ik, Il = iv[k], iv[l]
        even = (l - k) % 2 == 0
        p, q, r, s = _quadruples(n_max, exhaustive_limit, samples, rng)
        kl = (np.full(p.size, k), np.full(p.size, l))
        if even:
            lhs = Il(p, q) * Ik(r, s)
            rep._record("intervals", lhs, Il(r, s) * Ik(p, q), kl + (p, q, r, s), slack)
        else:
            ok = _keep(rep, "intervals2", (k == 0) & (p <= 1), literal_domain)
            p, q, r, s = p[ok], q[ok], r[ok], s[ok]
            kl = (kl[0][ok], kl[1][ok])
            lhs = Il(p, q) * Ik(r, s)
            rhs = Il(r + 1, _shift(s, 1)) * Ik(p - 1, q - 1)
            rep._record("intervals2", lhs, rhs, kl + (p, q, r, s), slack)

        nn, jj = _pairs_nj(n_max, l, exhaustive_limit, samples, rng)
        ok = ((nn - l) % 2 == 0) & ((nn + jj - k) % 2 == 0)
        nn, jj = nn[ok], jj[ok]
        if not even:
            ok = _keep(rep, "lattice2", (k == 0) & (nn <= 1), literal_domain)
            nn, jj = nn[ok], jj[ok]
        kl = (np.full(nn.size, k), np.full(nn.size, l))
        if even:
            rep._record("lattice1", fk[nn + jj] * fl[nn], fl[nn + jj] * fk[nn],
                        kl + (nn, jj), slack)
        else:
            rep._record("lattice2", fk[nn + jj] * fl[nn], fl[nn + jj + 1] * fk[nn - 1],
                        kl + (nn, jj), slack)

    for l in hs:
        if l < 1:
            continue
        fl = fps[l].f
        m = np.arange(max(l, 1), n_max + 1)
        ll = np.full(m.size, l)
        if l % 2 == 0:
            rep._record("lattice3", fl[m], M[l] * f[m], (ll, m), slack)
        else:
            ok = _keep(rep, "lattice4", m <= 1, literal_domain)
            rep._record("lattice4", fl[m[ok]], M[l] * f[m[ok] - 1], (ll[ok], m[ok]), slack)

        p, q, m3 = _triples(n_max, exhaustive_limit, samples, rng)
        ll = np.full(p.size, l)
        # P_0(tau_0 - tau_l in [p, q]) = P_l(tau_0 in [p, q]) / M_l by the strong Markov property
        after_l = iv[l](p, q) / M[l]
        if l % 2 == 0:
            rep._record("lattice5", M[l] * f[m3] * after_l, fl[m3] * iv[0](p, q),
                        (ll, p, q, m3), slack)
        else:
            ok = _keep(rep, "lattice5a", p <= 1, literal_domain)
            p, q, m3, ll, after_l = p[ok], q[ok], m3[ok], ll[ok], after_l[ok]
            rep._record("lattice5a", M[l] * f[m3 - 1] * after_l, fl[m3] * iv[0](p - 1, q - 1),
                        (ll, p, q, m3), slack)
    return rep
