"""Report tables rendered three ways from one canonical document:
aligned text, CSV (full precision) and JSON."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Sequence

from asvmismatch.lme import LmeFit, LRTResult
from asvmismatch.ranking import FinalModel, RankingResult


def _num(v, digits: int) -> str:
    if v is None:
        return ""
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return f"{v:.{digits}f}"


def _se(v: float) -> str:
    # keep one significant digit for small standard errors
    return _num(v, 3 if abs(v) < 0.01 else 2)


def align(headers: Sequence[str], rows: Sequence[Sequence[str]], left: int = 1) -> list[str]:
    """Right-align every column except the first ``left`` ones."""
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]

    def fmt(cells):
        return "  ".join(c.ljust(w) if i < left else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))

    return [fmt(headers).rstrip(), *(fmt(r).rstrip() for r in rows)]


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: str | Path, headers: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(headers)
        for row in rows:
            w.writerow([_csv_value(row.get(h)) for h in headers])


def write_json(path: str | Path, doc: Any) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")


# -- model report -------------------------------------------------------------

def model_document(final: FinalModel, context: dict | None = None) -> dict:
    fit = final.fit
    return {
        "title": "Mixed-effects model of target scores on acoustic mismatch",
        "model": "score ~ distances + (1 | speaker)",
        "criterion": fit.criterion,
        "ranking_mode": final.ranking.mode,
        "n_trials": fit.n,
        "n_speakers": fit.n_speakers,
        "fixed_effects": final.fixed_rows,
        "random_effects": final.random_rows,
        "loglik": fit.loglik,
        "loglik_ml": fit.loglik_ml,
        "aic": fit.aic,
        "wald_df": fit.df_resid,
        "boundary": fit.boundary,
        "converged": fit.converged,
        **(context or {}),
    }


def model_text(doc: dict) -> str:
    lines = [
        doc["title"],
        f"model: {doc['model']}",
        f"criterion: {doc['criterion']}   trials: {doc['n_trials']}   speakers: {doc['n_speakers']}",
        f"r: correlation of single-predictor fitted values with scores ({doc['ranking_mode']} ranking)",
        "",
        "Fixed effects:",
    ]
    rows = [[r["label"], _num(r["estimate"], 2), _se(r["se"]), _num(r["t"], 2), _num(r["r"], 3)]
            for r in doc["fixed_effects"]]
    lines += align(["", "Estimate", "Std. error", "t-value", "r"], rows)
    lines += ["", "Random effects:"]
    rows = [[r["label"], _num(r["variance"], 2), _num(r["sd"], 2)] for r in doc["random_effects"]]
    lines += align(["", "Variance", "Std.Dev."], rows)
    lines += [
        "",
        f"log-likelihood ({doc['criterion']}): {doc['loglik']:.3f}   ML: {doc['loglik_ml']:.3f}"
        f"   AIC: {doc['aic']:.3f}",
        f"Wald tests use residual df = {doc['wald_df']} (n - p)",
    ]
    if doc["boundary"]:
        lines.append("note: speaker variance estimate on the boundary (sigma_b2 = 0)")
    return "\n".join(lines) + "\n"


MODEL_CSV_HEADERS = ("section", "label", "estimate", "se", "t", "r", "variance", "sd")


def model_csv_rows(doc: dict) -> list[dict]:
    rows = [{"section": "fixed", **r} for r in doc["fixed_effects"]]
    rows += [{"section": "random", **r} for r in doc["random_effects"]]
    return rows


def write_model_report(outdir: Path, doc: dict) -> list[Path]:
    paths = [outdir / "report.txt", outdir / "report.csv", outdir / "report.json"]
    paths[0].write_text(model_text(doc), encoding="utf-8")
    write_csv(paths[1], MODEL_CSV_HEADERS, model_csv_rows(doc))
    write_json(paths[2], doc)
    return paths


# -- ranking report -----------------------------------------------------------

RANK_HEADERS = ("rank", "label", "r", "estimate", "se", "t")


def ranking_document(blocks: Sequence[tuple[str, RankingResult]], scope: str, criterion: str) -> dict:
    return {
        "scope": scope,
        "criterion": criterion,
        "mode": blocks[0][1].mode if blocks else None,
        "blocks": [
            {"block": name, "rows": res.rows(),
             "failures": [{"label": a, "error": b} for a, b in res.failures]}
            for name, res in blocks
        ],
    }


def ranking_text(doc: dict, display=None) -> str:
    display = display or (lambda s: s)
    lines = [f"Ranking of {doc['scope']} by fitted-vs-score correlation "
             f"({doc['mode']}, {doc['criterion']})"]
    for block in doc["blocks"]:
        lines.append("")
        if block["block"]:
            lines.append(f"[{block['block']}]")
        rows = [[str(r["rank"]), display(r["label"]), _num(r["r"], 3), _num(r["estimate"], 2),
                 _se(r["se"]), _num(r["t"], 2)] for r in block["rows"]]
        lines += align(["rank", "label", "r", "estimate", "se", "t"], rows, left=2)
        for f in block["failures"]:
            lines.append(f"failed: {f['label']}: {f['error']}")
    return "\n".join(lines) + "\n"


def write_ranking_report(outdir: Path, doc: dict, display=None) -> list[Path]:
    paths = [outdir / "rank.txt", outdir / "rank.csv", outdir / "rank.json"]
    paths[0].write_text(ranking_text(doc, display), encoding="utf-8")
    blocked = any(b["block"] for b in doc["blocks"])
    headers = (("block",) if blocked else ()) + RANK_HEADERS
    rows = [{"block": b["block"], **r} for b in doc["blocks"] for r in b["rows"]]
    write_csv(paths[1], headers, rows)
    write_json(paths[2], doc)
    return paths


# -- model comparison ---------------------------------------------------------

def anova_document(full: LmeFit, reduced: LmeFit, lrt: LRTResult) -> dict:
    return {
        "test": "likelihood ratio (ML fits)",
        "full": {"predictors": list(full.names[1:]), "loglik_ml": full.loglik_ml, "aic": lrt.aic_full,
                 "k": full.k},
        "reduced": {"predictors": list(reduced.names[1:]), "loglik_ml": reduced.loglik_ml,
                    "aic": lrt.aic_reduced, "k": reduced.k},
        "chi2": lrt.chi2,
        "df": lrt.df,
        "p_value": lrt.p_value,
        "aic_prefers": lrt.preferred,
        "boundary_correction": "none",
    }


def anova_text(doc: dict) -> str:
    rows = []
    for key in ("reduced", "full"):
        m = doc[key]
        rows.append([key, str(m["k"]), f"{m['aic']:.3f}", f"{m['loglik_ml']:.3f}",
                     ", ".join(m["predictors"]) or "(intercept only)"])
    lines = align(["model", "k", "AIC", "logLik", "predictors"], rows)
    lines.append("")
    lines.append(f"chi2 = {doc['chi2']:.4f}   df = {doc['df']}   p = {doc['p_value']:.4g}")
    lines.append(f"AIC prefers the {doc['aic_prefers']} model")
    return "\n".join(lines) + "\n"


def write_anova_report(outdir: Path, doc: dict) -> list[Path]:
    paths = [outdir / "anova.txt", outdir / "anova.csv", outdir / "anova.json"]
    paths[0].write_text(anova_text(doc), encoding="utf-8")
    rows = [{"model": k, "k": doc[k]["k"], "aic": doc[k]["aic"], "loglik_ml": doc[k]["loglik_ml"],
             "predictors": " ".join(doc[k]["predictors"])} for k in ("reduced", "full")]
    rows.append({"model": "test", "chi2": doc["chi2"], "df": doc["df"], "p_value": doc["p_value"]})
    write_csv(paths[1], ("model", "k", "aic", "loglik_ml", "predictors", "chi2", "df", "p_value"), rows)
    write_json(paths[2], doc)
    return paths
