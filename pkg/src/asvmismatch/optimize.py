"""Bounded scalar minimization (Brent: golden section with parabolic steps)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

_GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))


@dataclass(frozen=True)
class ScalarMinimum:
    x: float
    fun: float
    iterations: int
    evaluations: int
    converged: bool


def brent_minimize(
    f: Callable[[float], float],
    lower: float,
    upper: float,
    xtol: float = 1e-10,
    rtol: float = 1.5e-8,
    max_iter: int = 200,
) -> ScalarMinimum:
    """Minimize ``f`` on ``[lower, upper]``.

    Stops when the bracket around the current best point is narrower than
    ``2 * (rtol * |x| + xtol)``.
    """
    if not lower <= upper:
        raise ValueError("lower must not exceed upper")
    a, b = lower, upper
    x = w = v = a + _GOLDEN * (b - a)
    fx = fw = fv = f(x)
    nfev = 1
    d = e = 0.0
    for it in range(1, max_iter + 1):
        m = 0.5 * (a + b)
        tol = rtol * abs(x) + xtol
        tol2 = 2.0 * tol
        if abs(x - m) <= tol2 - 0.5 * (b - a):
            return ScalarMinimum(x, fx, it - 1, nfev, True)
        golden = True
        if abs(e) > tol:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            e_prev, e = e, d
            if abs(p) < abs(0.5 * q * e_prev) and q * (a - x) < p < q * (b - x):
                d = p / q
                u = x + d
                if u - a < tol2 or b - u < tol2:
                    d = tol if x < m else -tol
                golden = False
        if golden:
            e = (b - x) if x < m else (a - x)
            d = _GOLDEN * e
        u = x + (d if abs(d) >= tol else math.copysign(tol, d))
        fu = f(u)
        nfev += 1
        if fu <= fx:
            if u < x:
                b = x
            else:
                a = x
            v, fv, w, fw, x, fx = w, fw, x, fx, u, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, fv, w, fw = w, fw, u, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    return ScalarMinimum(x, fx, max_iter, nfev, False)
