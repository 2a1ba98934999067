"""Special functions: inverse normal CDF and the chi-square upper tail."""

from __future__ import annotations

import math

import numpy as np

# Wichura (1988), algorithm AS 241 (PPND16); relative accuracy about 1e-16.
_A = (3.387132872796366608, 133.14166789178437745, 1971.5909503065514427,
      13731.693765509461125, 45921.953931549871457, 67265.770927008700853,
      33430.575583588128105, 2509.0809287301226727)
_B = (1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
      21213.794301586595867, 39307.89580009271061, 28729.085735721942674,
      5226.495278852545925)
_C = (1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055,
      3.64784832476320460504, 1.27045825245236838258, 0.24178072517745061177,
      0.0227238449892691845833, 7.7454501427834140764e-4)
_D = (1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
      0.14810397642748007459, 0.0151986665636164571966, 5.475938084995344946e-4,
      1.05075007164441684324e-9)
_E = (6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358,
      0.29656057182850489123, 0.026532189526576123093, 0.0012426609473880784386,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 0.59983220655588793769, 0.13692988092273580531, 0.0148753612908506148525,
      7.868691311456132591e-4, 1.8463183175100546818e-5, 1.4215117583164458887e-7,
      2.04426310338993978564e-15)


def _poly(coef, x):
    acc = np.zeros_like(x)
    for c in reversed(coef):
        acc = acc * x + c
    return acc


def ndtri(p):
    """Inverse of the standard normal CDF; accepts scalars or arrays.

    Returns -inf/inf at 0/1 and NaN outside [0, 1].
    """
    p = np.asarray(p, dtype=float)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    q = p - 0.5
    out = np.full(p.shape, np.nan)

    central = np.abs(q) <= 0.425
    if central.any():
        qc = q[central]
        r = 0.180625 - qc * qc
        out[central] = qc * _poly(_A, r) / _poly(_B, r)

    tail = ~central & (p > 0) & (p < 1)
    if tail.any():
        pt, qt = p[tail], q[tail]
        r = np.sqrt(-np.log(np.where(qt < 0, pt, 1.0 - pt)))
        near = r <= 5.0
        x = np.empty_like(r)
        rn = r[near] - 1.6
        x[near] = _poly(_C, rn) / _poly(_D, rn)
        rf = r[~near] - 5.0
        x[~near] = _poly(_E, rf) / _poly(_F, rf)
        out[tail] = np.where(qt < 0, -x, x)

    out[p == 0] = -np.inf
    out[p == 1] = np.inf
    return float(out[0]) if scalar else out


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def gammaincc(a: float, x: float, eps: float = 1e-15, max_iter: int = 1000) -> float:
    """Regularized upper incomplete gamma function Q(a, x).

    Series for P(a, x) when ``x < a + 1``, Lentz continued fraction for Q
    otherwise.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    log_prefix = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1.0:
        term = total = 1.0 / a
        ap = a
        for _ in range(max_iter):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * eps:
                break
        else:
            raise ArithmeticError("incomplete gamma series did not converge")
        return max(0.0, 1.0 - total * math.exp(log_prefix))
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    else:
        raise ArithmeticError("incomplete gamma continued fraction did not converge")
    return math.exp(log_prefix) * h


def chi2_sf(x: float, df: int) -> float:
    """Upper tail P(X > x) of a chi-square variable with ``df`` degrees of freedom."""
    if df <= 0:
        return 1.0 if x <= 0 else 0.0
    if x <= 0:
        return 1.0
    return gammaincc(0.5 * df, 0.5 * x)
