"""Model-checking data: normal Q-Q points, residuals vs fitted, residual
histogram, fitted-vs-score scatter and summary statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from asvmismatch.lme import LmeFit
from asvmismatch.ranking import pearson
from asvmismatch.special import ndtri

MAX_BINS = 200


def qq_data(residuals) -> np.ndarray:
    """``(n, 2)`` array of (theoretical quantile, standardized residual).

    Residuals are centred, divided by their sample SD and sorted; the
    theoretical quantiles sit at plotting positions ``(i - 0.5) / n``.
    """
    x = np.asarray(residuals, dtype=float)
    n = len(x)
    if n < 3:
        raise ValueError("too few points for a Q-Q plot (need at least 3)")
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        raise ValueError("constant residuals")
    z = np.sort((x - np.mean(x)) / sd)
    q = ndtri((np.arange(1, n + 1) - 0.5) / n)
    return np.column_stack([q, z])


def histogram(values, max_bins: int = MAX_BINS) -> tuple[np.ndarray, np.ndarray]:
    """Freedman-Diaconis binning, capped at ``max_bins`` bins."""
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    span = float(x[-1] - x[0]) if n else 0.0
    q25, q75 = np.percentile(x, [25, 75]) if n else (0.0, 0.0)
    width = 2.0 * float(q75 - q25) / n ** (1 / 3) if n else 0.0
    if width > 0 and span > 0:
        bins = min(max_bins, max(1, math.ceil(span / width)))
    else:
        # zero IQR: Sturges
        bins = min(max_bins, max(1, math.ceil(math.log2(max(n, 1))) + 1)) if span > 0 else 1
    counts, edges = np.histogram(x, bins=bins)
    return edges, counts


def scatter_and_r(fit: LmeFit, fixed_only: bool = False) -> tuple[np.ndarray, float]:
    fitted = fit.fitted_fixed if fixed_only else fit.fitted
    pts = np.column_stack([fitted, fit.response])
    return pts, pearson(fitted, fit.response)


@dataclass(frozen=True)
class ResidualSummary:
    n: int
    residual_sd: float
    speaker_sd: float
    skewness: float
    excess_kurtosis: float
    minimum: float
    maximum: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def residual_summary(fit: LmeFit) -> ResidualSummary:
    r = np.asarray(fit.residuals, dtype=float)
    if np.ptp(r) == 0.0:
        skew = kurt = 0.0
    else:
        skew = float(stats.skew(r))
        kurt = float(stats.kurtosis(r))
    return ResidualSummary(
        n=len(r),
        residual_sd=float(np.std(r, ddof=1)),
        speaker_sd=math.sqrt(max(fit.sigma_b2, 0.0)),
        skewness=skew,
        excess_kurtosis=kurt,
        minimum=float(r.min()),
        maximum=float(r.max()),
    )


@dataclass
class DiagnosticBundle:
    qq_points: np.ndarray
    residual_vs_fitted: np.ndarray
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    scatter: np.ndarray
    r: float
    summary: ResidualSummary


def diagnose(fit: LmeFit, fixed_only: bool = False) -> DiagnosticBundle:
    edges, counts = histogram(fit.residuals)
    scatter, r = scatter_and_r(fit, fixed_only)
    return DiagnosticBundle(
        qq_points=qq_data(fit.residuals),
        residual_vs_fitted=np.column_stack([fit.fitted, fit.residuals]),
        hist_edges=edges,
        hist_counts=counts,
        scatter=scatter,
        r=r,
        summary=residual_summary(fit),
    )


def _write(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_bundle(bundle: DiagnosticBundle, outdir: str | Path) -> list[Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "qq.csv", out / "resid_fitted.csv", out / "scatter.csv", out / "hist.csv"]
    _write(paths[0], ["theoretical", "standardized_residual"],
           ([repr(float(a)), repr(float(b))] for a, b in bundle.qq_points))
    _write(paths[1], ["fitted", "residual"],
           ([repr(float(a)), repr(float(b))] for a, b in bundle.residual_vs_fitted))
    _write(paths[2], ["fitted", "score"], ([repr(float(a)), repr(float(b))] for a, b in bundle.scatter))
    e = bundle.hist_edges
    _write(paths[3], ["bin_lower", "bin_upper", "count"],
           ([repr(float(e[i])), repr(float(e[i + 1])), int(c)] for i, c in enumerate(bundle.hist_counts)))
    return paths
