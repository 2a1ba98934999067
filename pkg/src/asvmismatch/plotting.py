"""Figures written next to the delimited outputs.

SVG output is made reproducible by fixing the id hash salt and dropping
the date metadata; dense scatters are rasterized inside the SVG.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "asvmismatch",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (4.0, 3.2),
    "figure.dpi": 150,
    "savefig.bbox": "tight",
}

_RASTER_ABOVE = 2000


def _save(fig, path: Path) -> Path:
    fmt = path.suffix.lstrip(".") or "svg"
    meta = {"Date": None} if fmt == "svg" else {}
    fig.savefig(path, format=fmt, metadata=meta)
    plt.close(fig)
    return path


def _points(ax, x, y, **kw):
    x, y = np.asarray(x), np.asarray(y)
    size = 4 if len(x) > _RASTER_ABOVE else 10
    ax.scatter(x, y, s=size, linewidths=0, alpha=0.4 if len(x) > _RASTER_ABOVE else 0.8,
               rasterized=len(x) > _RASTER_ABOVE, **kw)


def fitted_vs_score(fitted, score, r: float, path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        _points(ax, fitted, score, color="0.2")
        lo = float(min(np.min(fitted), np.min(score)))
        hi = float(max(np.max(fitted), np.max(score)))
        ax.plot([lo, hi], [lo, hi], lw=0.8, color="tab:red")
        ax.set_xlabel("fitted value")
        ax.set_ylabel("score")
        ax.set_title(f"Pearson r = {r:.2f}")
        return _save(fig, Path(path))


def qq_plot(qq: np.ndarray, path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        _points(ax, qq[:, 0], qq[:, 1], color="0.2")
        lim = float(np.max(np.abs(qq)))
        ax.plot([-lim, lim], [-lim, lim], lw=0.8, color="tab:red")
        ax.set_xlabel("normal quantile")
        ax.set_ylabel("standardized residual")
        return _save(fig, Path(path))


def residuals_vs_fitted(fitted, resid, path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        _points(ax, fitted, resid, color="0.2")
        ax.axhline(0.0, lw=0.8, color="tab:red")
        ax.set_xlabel("fitted value")
        ax.set_ylabel("residual")
        return _save(fig, Path(path))


def residual_histogram(edges, counts, path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.stairs(counts, edges, fill=True, color="0.6")
        ax.set_xlabel("residual")
        ax.set_ylabel("count")
        return _save(fig, Path(path))


def ranking_bars(blocks: Sequence[tuple[str, Sequence[str], Sequence[float]]], path: str | Path) -> Path:
    """Horizontal bars of r, one panel per block, best at the top."""
    n = max(len(b[1]) for b in blocks)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(blocks), squeeze=False,
                                 figsize=(3.2 * len(blocks), 0.8 + 0.25 * n))
        for ax, (title, labels, rs) in zip(axes[0], blocks):
            pos = np.arange(len(labels))[::-1]
            ax.barh(pos, rs, color="0.4")
            ax.set_yticks(pos, labels)
            ax.set_xlabel("r")
            lo = min(rs) if len(rs) else 0.0
            ax.set_xlim(max(0.0, lo - 0.05) if lo > 0 else None)
            if title:
                ax.set_title(title)
        return _save(fig, Path(path))
