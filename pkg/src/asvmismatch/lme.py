"""Random-intercept linear mixed model fitted by profiled ML or REML.

Model: ``y_ij = x_ij' beta + b_i + e_ij`` with ``b_i ~ N(0, sigma_b2)`` and
``e_ij ~ N(0, sigma2)``.  With ``theta = sigma_b2 / sigma2`` the marginal
covariance of speaker i is ``sigma2 * (I + theta * 1 1')`` whose inverse is
``(I - w_i 1 1') / sigma2`` with ``w_i = theta / (1 + n_i theta)``.  beta
and sigma2 are concentrated out, leaving a one-dimensional search over
theta.  All per-row work reduces to per-speaker sums, so a deviance
evaluation costs O(n p + K p^2 + p^3).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize, stats
from scipy.linalg import cho_solve

from asvmismatch.errors import CollinearityError, DesignError, NotNestedError
from asvmismatch.optimize import brent_minimize
from asvmismatch.predictors import Design
from asvmismatch.special import chi2_sf

INTERCEPT = "(Intercept)"
ML = "ML"
REML = "REML"

THETA_MAX = 1e6
_GRID = np.concatenate([[0.0], np.logspace(-4, 6, 41)])
_COLLINEAR_TOL = 1e-10
# keeps log(sigma2) finite for noiseless data
_RSS_FLOOR = 1e-300


def _criterion(name: str) -> str:
    c = str(name).upper()
    if c not in (ML, REML):
        raise ValueError(f"criterion must be ML or REML, not {name!r}")
    return c


def _pairwise_cross(A: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    """``A' A`` (or ``A' b``) by per-column pairwise summation.

    Avoids BLAS so the result does not depend on the thread count.
    """
    p = A.shape[1]
    if B is not None:
        return np.array([np.add.reduce(A[:, i] * B) for i in range(p)])
    out = np.empty((p, p))
    for i in range(p):
        for j in range(i, p):
            out[i, j] = out[j, i] = np.add.reduce(A[:, i] * A[:, j])
    return out


def _matvec(X: np.ndarray, beta: np.ndarray) -> np.ndarray:
    acc = X[:, 0] * beta[0]
    for j in range(1, X.shape[1]):
        acc = acc + X[:, j] * beta[j]
    return acc


def _collinear_columns(A: np.ndarray, names: Sequence[str]) -> list[str]:
    """Columns whose scaled Schur complement against earlier accepted
    columns falls below tolerance."""
    d = np.sqrt(np.clip(np.diag(A), 0.0, None))
    bad, acc = [], []
    for k in range(len(names)):
        if d[k] == 0.0:
            bad.append(names[k])
            continue
        if acc:
            S = A[np.ix_(acc, acc)] / np.outer(d[acc], d[acc])
            s = A[acc, k] / (d[acc] * d[k])
            resid = 1.0 - s @ np.linalg.solve(S, s)
        else:
            resid = 1.0
        if resid < _COLLINEAR_TOL:
            bad.append(names[k])
        else:
            acc.append(k)
    return bad


def _cholesky(A: np.ndarray, names: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Cholesky factor of the diagonally scaled matrix plus the scaling."""
    diag = np.diag(A).copy()
    if not (diag > 0).all():
        raise CollinearityError(_collinear_columns(A, names) or list(names))
    scale = 1.0 / np.sqrt(diag)
    As = A * np.outer(scale, scale)
    try:
        L = np.linalg.cholesky(As)
    except np.linalg.LinAlgError:
        raise CollinearityError(_collinear_columns(A, names) or list(names)) from None
    if np.min(np.diag(L)) ** 2 < _COLLINEAR_TOL:
        raise CollinearityError(_collinear_columns(A, names) or list(names))
    return L, scale


def _chol_solve(L: np.ndarray, scale: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = scale if b.ndim == 1 else scale[:, None]
    return d * cho_solve((L, True), d * b)


@dataclass
class _Profile:
    theta: float
    beta: np.ndarray
    rss: float
    L: np.ndarray
    scale: np.ndarray
    w: np.ndarray
    resid_sums: np.ndarray


class RandomInterceptModel:
    """Sufficient statistics of a design, sorted by speaker."""

    def __init__(self, design: Design):
        self.design = design
        self.names = (INTERCEPT, *design.predictor_names)
        self.speakers, codes = np.unique(np.asarray(design.speaker_ids, dtype=object).astype(str), return_inverse=True)
        self.order = np.argsort(codes, kind="stable")
        codes = codes[self.order]
        self.codes = codes
        n = design.n
        X = np.empty((n, len(self.names)), order="F")
        X[:, 0] = 1.0
        X[:, 1:] = design.predictors[self.order]
        self.X = X
        self.y = design.response[self.order]
        self.starts = np.flatnonzero(np.r_[True, codes[1:] != codes[:-1]])
        self.n_i = np.diff(np.r_[self.starts, n]).astype(float)
        self.S = np.add.reduceat(X, self.starts, axis=0)
        self.t = np.add.reduceat(self.y, self.starts)
        self.XtX = _pairwise_cross(X)
        self.Xty = _pairwise_cross(X, self.y)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_speakers(self) -> int:
        return len(self.starts)

    def profile(self, theta: float) -> _Profile:
        if theta < 0 or not math.isfinite(theta):
            raise ValueError("theta must be finite and non-negative")
        w = theta / (1.0 + self.n_i * theta)
        A = self.XtX - np.einsum("k,ki,kj->ij", w, self.S, self.S)
        c = self.Xty - np.einsum("k,ki,k->i", w, self.S, self.t)
        L, scale = _cholesky(A, self.names)
        beta = _chol_solve(L, scale, c)
        r = self.y - _matvec(self.X, beta)
        rs = np.add.reduceat(r, self.starts)
        rss = float(np.add.reduce(r * r) - np.add.reduce(w * rs * rs))
        return _Profile(theta, beta, max(rss, _RSS_FLOOR), L, scale, w, rs)

    def _deviance(self, prof: _Profile, criterion: str) -> tuple[float, float]:
        n, p = self.n, self.p
        logdet_h = float(np.add.reduce(np.log1p(self.n_i * prof.theta)))
        if criterion == ML:
            sigma2 = prof.rss / n
            return n * math.log(2 * math.pi * sigma2) + logdet_h + n, sigma2
        df = n - p
        sigma2 = prof.rss / df
        logdet_a = 2.0 * float(np.sum(np.log(np.diag(prof.L)))) - 2.0 * float(np.sum(np.log(prof.scale)))
        return df * math.log(2 * math.pi * sigma2) + logdet_h + logdet_a + df, sigma2

    def deviance(self, theta: float, criterion: str = ML) -> tuple[float, np.ndarray, float]:
        prof = self.profile(theta)
        dev, sigma2 = self._deviance(prof, _criterion(criterion))
        return dev, prof.beta, sigma2

    def gradient(self, theta: float, criterion: str = ML) -> float:
        """d deviance / d theta, with beta and sigma2 profiled out."""
        prof = self.profile(theta)
        v = 1.0 / (1.0 + self.n_i * theta)
        g = float(np.add.reduce(self.n_i * v))
        dr = float(np.add.reduce(v * v * prof.resid_sums * prof.resid_sums))
        if criterion == ML:
            return g - self.n * dr / prof.rss
        Q = _chol_solve(prof.L, prof.scale, self.S.T)
        quad = np.einsum("ki,ik->k", self.S, Q)
        return g - (self.n - self.p) * dr / prof.rss - float(np.add.reduce(v * v * quad))

    def _polish(self, theta: float, criterion: str) -> float:
        """Root of the deviance derivative near an interior minimum.

        The deviance is flat at its minimum, so a function-value search only
        fixes theta to about sqrt(machine epsilon); the derivative's sign
        change pins it to rounding level.
        """
        def g(th):
            return self.gradient(th, criterion)

        delta = 1e-6
        for _ in range(30):
            lo, hi = theta * (1.0 - delta), theta * (1.0 + delta)
            glo, ghi = g(lo), g(hi)
            if glo < 0.0 < ghi:
                return float(optimize.brentq(g, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps))
            if delta > 0.5:
                break
            delta *= 4.0
        return theta

    def optimize(self, criterion: str, theta_max: float = THETA_MAX, xtol: float = 1e-10,
                 max_iter: int = 200) -> tuple[float, int, bool, int]:
        """Grid scan over theta, then Brent refinement between the grid
        neighbours of the best grid point.  Returns (theta, iterations,
        converged, evaluations)."""
        grid = _GRID[_GRID <= theta_max]
        if grid[-1] < theta_max:
            grid = np.r_[grid, theta_max]

        def f(th):
            return self._deviance(self.profile(th), criterion)[0]

        devs = np.array([f(th) for th in grid])
        k = int(np.argmin(devs))
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
        res = brent_minimize(f, lo, hi, xtol=xtol, max_iter=max_iter)
        nfev = len(grid) + res.evaluations
        best, fbest = (float(res.x), res.fun) if res.fun < devs[k] else (float(grid[k]), devs[k])
        if res.converged and 0.0 < best < theta_max:
            th = self._polish(best, criterion)
            if th != best and f(th) <= fbest + 1e-12 * abs(fbest):
                best = th
        return best, res.iterations, res.converged, nfev


@dataclass
class LmeFit:
    names: tuple[str, ...]
    beta: np.ndarray
    se: np.ndarray
    t_values: np.ndarray
    cov_beta: np.ndarray
    sigma_b2: float
    sigma2: float
    theta: float
    criterion: str
    loglik: float
    loglik_ml: float
    aic: float
    n: int
    n_speakers: int
    blups: dict[str, float]
    converged: bool
    iterations: int
    evaluations: int
    boundary: bool
    response: np.ndarray = field(repr=False)
    fitted: np.ndarray = field(repr=False)
    fitted_fixed: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)
    speaker_ids: list[str] = field(repr=False, default_factory=list)
    theta_ml: float | None = None

    @property
    def p(self) -> int:
        return len(self.beta)

    @property
    def k(self) -> int:
        return self.p + 2

    @property
    def df_resid(self) -> int:
        return self.n - self.p

    def coef(self, name: str) -> float:
        return float(self.beta[self.names.index(name)])


def profiled_deviance(theta: float, design: Design, criterion: str = ML) -> tuple[float, np.ndarray, float]:
    """(deviance, beta(theta), sigma2(theta)) at a fixed variance ratio."""
    return RandomInterceptModel(design).deviance(theta, criterion)


def fit(
    design: Design,
    criterion: str = REML,
    theta_max: float = THETA_MAX,
    xtol: float = 1e-10,
    max_iter: int = 200,
    theta: float | None = None,
    model: RandomInterceptModel | None = None,
) -> LmeFit:
    """Fit the random-intercept model.

    ``theta`` pins the variance ratio instead of estimating it (``theta=0``
    is ordinary least squares).  The ML log-likelihood is always computed,
    re-optimizing under ML when ``criterion`` is REML, so AIC and
    likelihood-ratio tests are available for every fit.
    """
    criterion = _criterion(criterion)
    m = model or RandomInterceptModel(design)
    if m.n_speakers < 2:
        raise DesignError("at least 2 speakers are required")
    if m.n <= m.p + 2:
        raise DesignError(f"insufficient rows: n={m.n} must exceed p+2={m.p + 2}")

    if theta is None and m.n_i.max() == 1:
        # one row per speaker: speaker and residual variance are confounded
        theta = 0.0
    if theta is None:
        th, iters, converged, nfev = m.optimize(criterion, theta_max, xtol, max_iter)
    else:
        th, iters, converged, nfev = float(theta), 0, True, 0
    prof = m.profile(th)
    dev, sigma2 = m._deviance(prof, criterion)

    if criterion == ML:
        dev_ml, th_ml = dev, th
    elif theta is None:
        th_ml, _, conv_ml, _ = m.optimize(ML, theta_max, xtol, max_iter)
        converged = converged and conv_ml
        dev_ml = m._deviance(m.profile(th_ml), ML)[0]
    else:
        th_ml = th
        dev_ml = m._deviance(prof, ML)[0]
    loglik_ml = -0.5 * dev_ml

    cov = sigma2 * _chol_solve(prof.L, prof.scale, np.eye(m.p))
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.diag(cov))
    blup_sorted = prof.w * prof.resid_sums
    fixed_sorted = _matvec(m.X, prof.beta)
    fitted_sorted = fixed_sorted + np.repeat(blup_sorted, m.n_i.astype(int))

    inv = np.empty_like(m.order)
    inv[m.order] = np.arange(m.n)
    fitted = fitted_sorted[inv]
    response = design.response.copy()
    return LmeFit(
        names=m.names,
        beta=prof.beta,
        se=se,
        t_values=prof.beta / se,
        cov_beta=cov,
        sigma_b2=th * sigma2,
        sigma2=sigma2,
        theta=th,
        criterion=criterion,
        loglik=-0.5 * dev,
        loglik_ml=loglik_ml,
        aic=2.0 * (m.p + 2) - 2.0 * loglik_ml,
        n=m.n,
        n_speakers=m.n_speakers,
        blups={str(s): float(b) for s, b in zip(m.speakers, blup_sorted)},
        converged=bool(converged),
        iterations=iters,
        evaluations=nfev,
        boundary=bool(th == 0.0 or th >= theta_max),
        response=response,
        fitted=fitted,
        fitted_fixed=fixed_sorted[inv],
        residuals=response - fitted,
        speaker_ids=list(design.speaker_ids),
        theta_ml=th_ml,
    )


def aic(fit: LmeFit) -> float:
    """``2k - 2 loglik_ml`` with k = fixed effects + 2 variance parameters."""
    return 2.0 * fit.k - 2.0 * fit.loglik_ml


@dataclass(frozen=True)
class WaldResult:
    F: float
    df_num: int
    df_den: int
    p_value: float


def _contrast(fit: LmeFit, C) -> np.ndarray:
    if C is None:
        raise ValueError("empty contrast")
    if isinstance(C, str):
        C = [C]
    C = list(C) if not isinstance(C, np.ndarray) else C
    if isinstance(C, list) and C and all(isinstance(c, str) for c in C):
        rows = np.zeros((len(C), fit.p))
        for i, name in enumerate(C):
            if name not in fit.names:
                raise ValueError(f"unknown coefficient {name!r}")
            rows[i, fit.names.index(name)] = 1.0
        return rows
    M = np.atleast_2d(np.asarray(C, dtype=float))
    if M.size == 0:
        raise ValueError("empty contrast")
    if M.shape[1] != fit.p:
        raise ValueError(f"contrast has {M.shape[1]} columns, model has {fit.p} coefficients")
    return M


def wald_test(fit: LmeFit, C) -> WaldResult:
    """Joint Wald F test of ``C beta = 0``.

    ``C`` is a list of coefficient names or a ``q x p`` contrast matrix.  The
    denominator degrees of freedom are the residual df, ``n - p``.
    """
    M = _contrast(fit, C)
    q = M.shape[0]
    if q == 0:
        raise ValueError("empty contrast")
    if np.linalg.matrix_rank(M) < q:
        raise ValueError("contrast matrix is rank deficient")
    est = M @ fit.beta
    V = M @ fit.cov_beta @ M.T
    F = float(est @ np.linalg.solve(V, est)) / q
    return WaldResult(F, q, fit.df_resid, float(stats.f.sf(F, q, fit.df_resid)))


@dataclass(frozen=True)
class LRTResult:
    chi2: float
    df: int
    p_value: float
    aic_full: float
    aic_reduced: float

    @property
    def preferred(self) -> str:
        """Model with the smaller AIC (``"full"`` on ties goes to ``"reduced"``)."""
        return "full" if self.aic_full < self.aic_reduced else "reduced"


def likelihood_ratio_test(fit_full: LmeFit, fit_reduced: LmeFit) -> LRTResult:
    """ML likelihood-ratio test of nested fixed-effect sets.

    No boundary correction is applied; both models share the random-effect
    structure.
    """
    if not set(fit_reduced.names) <= set(fit_full.names):
        extra = sorted(set(fit_reduced.names) - set(fit_full.names))
        raise NotNestedError(f"models are not nested: reduced model has {', '.join(extra)}")
    if fit_full.n != fit_reduced.n or not np.array_equal(fit_full.response, fit_reduced.response):
        raise NotNestedError("models were fitted on different rows")
    chi2 = max(0.0, 2.0 * (fit_full.loglik_ml - fit_reduced.loglik_ml))
    df = fit_full.p - fit_reduced.p
    p = chi2_sf(chi2, df) if df > 0 else 1.0
    return LRTResult(chi2, df, p, aic(fit_full), aic(fit_reduced))


def fit_to_dict(fit: LmeFit) -> dict:
    return {
        "criterion": fit.criterion,
        "n": fit.n,
        "n_speakers": fit.n_speakers,
        "fixed_effects": [
            {"name": nm, "estimate": float(b), "se": float(s), "t": float(t)}
            for nm, b, s, t in zip(fit.names, fit.beta, fit.se, fit.t_values)
        ],
        "cov_beta": fit.cov_beta.tolist(),
        "sigma_b2": fit.sigma_b2,
        "sigma2": fit.sigma2,
        "theta": fit.theta,
        "theta_ml": fit.theta_ml,
        "loglik": fit.loglik,
        "loglik_ml": fit.loglik_ml,
        "aic": fit.aic,
        "boundary": fit.boundary,
        "convergence": {"converged": fit.converged, "iterations": fit.iterations,
                        "evaluations": fit.evaluations},
        "wald_df_method": "residual (n - p)",
        "blups": dict(sorted(fit.blups.items())),
    }


def save_fit(fit: LmeFit, json_path: str | Path, rows_path: str | Path | None = None,
             extra: dict | None = None) -> None:
    """Write ``fit.json`` and the per-trial ``fitted.csv`` next to it."""
    json_path = Path(json_path)
    rows_path = Path(rows_path) if rows_path else json_path.with_name("fitted.csv")
    doc = fit_to_dict(fit)
    doc["rows_file"] = rows_path.name
    if extra:
        doc.update(extra)
    json_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    with open(rows_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial_index", "speaker_id", "score", "fitted", "fitted_fixed", "residual"])
        for i in range(fit.n):
            w.writerow([i, fit.speaker_ids[i], repr(float(fit.response[i])), repr(float(fit.fitted[i])),
                        repr(float(fit.fitted_fixed[i])), repr(float(fit.residuals[i]))])


def load_fit(json_path: str | Path) -> LmeFit:
    json_path = Path(json_path)
    doc = json.loads(json_path.read_text(encoding="utf-8"))
    rows_path = json_path.with_name(doc.get("rows_file", "fitted.csv"))
    spk, y, fv, ff, res = [], [], [], [], []
    with open(rows_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            spk.append(row["speaker_id"])
            y.append(float(row["score"]))
            fv.append(float(row["fitted"]))
            ff.append(float(row["fitted_fixed"]))
            res.append(float(row["residual"]))
    fe = doc["fixed_effects"]
    conv = doc["convergence"]
    return LmeFit(
        names=tuple(e["name"] for e in fe),
        beta=np.array([e["estimate"] for e in fe]),
        se=np.array([e["se"] for e in fe]),
        t_values=np.array([e["t"] for e in fe]),
        cov_beta=np.array(doc["cov_beta"]),
        sigma_b2=doc["sigma_b2"],
        sigma2=doc["sigma2"],
        theta=doc["theta"],
        criterion=doc["criterion"],
        loglik=doc["loglik"],
        loglik_ml=doc["loglik_ml"],
        aic=doc["aic"],
        n=doc["n"],
        n_speakers=doc["n_speakers"],
        blups=doc["blups"],
        converged=conv["converged"],
        iterations=conv["iterations"],
        evaluations=conv["evaluations"],
        boundary=doc["boundary"],
        response=np.array(y),
        fitted=np.array(fv),
        fitted_fixed=np.array(ff),
        residuals=np.array(res),
        speaker_ids=spk,
        theta_ml=doc.get("theta_ml"),
    )
