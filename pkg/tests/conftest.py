from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
import pytest

from besselwalk.walk import PerturbationKind, WalkSpec, step_probs


def enumerate_paths(spec: WalkSpec, k: int, n: int):
    """Brute force over all 2^n step sequences from ``k``.

    Arithmetic is exact (rationals built from the binary64 step
    probabilities).  Each full path carries its whole weight, and summing
    ``1[X_t = j]`` over paths gives ``P_k(X_t = j)``.  Returns ``(occ, f)``
    with ``f[t] = P_k(tau_0 = t)`` (first return when ``k = 0``).
    """
    p, q = step_probs(spec, k + n + 2)
    pf = [Fraction(float(v)) for v in p]
    qf = [Fraction(float(v)) for v in q]
    occ = [[Fraction(0)] * (k + n + 2) for _ in range(n + 1)]
    f = [Fraction(0)] * (n + 1)
    for steps in itertools.product((1, -1), repeat=n):
        xs = [k]
        w = Fraction(1)
        for s in steps:
            x = xs[-1]
            w *= pf[x] if s == 1 else qf[x]
            if w == 0:
                break
            xs.append(x + s)
        if w == 0:
            continue
        hit = False
        for t, x in enumerate(xs):
            occ[t][x] += w
            if t > 0 and x == 0 and not hit:
                f[t] += w
                hit = True
    return (np.array([[float(v) for v in row] for row in occ]),
            np.array([float(v) for v in f]))


SPECS = {
    "ssrw": WalkSpec(0.0),
    "rational1": WalkSpec(1.0, PerturbationKind.RATIONAL),
    "invsq": WalkSpec(0.5, PerturbationKind.INVERSE_SQUARE, c=0.3),
    "logdrift": WalkSpec(-0.5, PerturbationKind.LOG_DRIFT, c=0.2),
}


@pytest.fixture(params=sorted(SPECS))
def spec(request):
    return SPECS[request.param]
