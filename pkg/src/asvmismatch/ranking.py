"""Ranking predictors by the correlation between fitted values and scores."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from asvmismatch import lme
from asvmismatch.errors import AnalysisError, StatisticalError
from asvmismatch.predictors import Design

log = logging.getLogger(__name__)

SINGLE = "single"
FORWARD = "forward"


def pearson(a, b) -> float:
    """Product-moment correlation of two equal-length vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("pearson needs two vectors of equal length")
    if len(a) < 2:
        raise ValueError("pearson needs at least 2 points")
    da = a - np.add.reduce(a) / len(a)
    db = b - np.add.reduce(b) / len(b)
    saa = float(np.add.reduce(da * da))
    sbb = float(np.add.reduce(db * db))
    if saa == 0.0 or sbb == 0.0:
        raise ValueError("undefined correlation: constant input")
    r = float(np.add.reduce(da * db)) / np.sqrt(saa * sbb)
    return float(min(1.0, max(-1.0, r)))


def fitted_correlation(fit: lme.LmeFit, fixed_only: bool = False) -> float:
    return pearson(fit.fitted_fixed if fixed_only else fit.fitted, fit.response)


Candidate = tuple[str, ...]


def _as_candidate(c) -> Candidate:
    return (c,) if isinstance(c, str) else tuple(c)


def candidate_label(c: Candidate) -> str:
    return "+".join(c)


@dataclass
class RankingEntry:
    label: str
    columns: Candidate
    r: float
    estimate: float
    se: float
    t: float
    fit: lme.LmeFit = field(repr=False)


@dataclass
class RankingResult:
    mode: str
    entries: list[RankingEntry]
    failures: list[tuple[str, str]] = field(default_factory=list)

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    def r_of(self, label: str) -> float:
        for e in self.entries:
            if e.label == label:
                return e.r
        raise KeyError(label)

    def rows(self) -> list[dict]:
        return [
            {"rank": i + 1, "label": e.label, "r": e.r, "estimate": e.estimate, "se": e.se, "t": e.t}
            for i, e in enumerate(self.entries)
        ]


def _order_key(design: Design, cand: Candidate) -> int:
    return min(design.predictor_names.index(c) for c in cand)


def _entry(fit: lme.LmeFit, cand: Candidate, r: float) -> RankingEntry:
    i = fit.names.index(cand[0])
    return RankingEntry(candidate_label(cand), cand, r, float(fit.beta[i]),
                        float(fit.se[i]), float(fit.t_values[i]), fit)


def rank_single(
    design: Design,
    candidates: Iterable,
    criterion: str = lme.REML,
    fixed_only: bool = False,
) -> RankingResult:
    """Fit one model per candidate (its predictors + speaker intercept) and
    sort by fitted-vs-score correlation, ties by catalog order."""
    cands = [_as_candidate(c) for c in candidates]
    if not cands:
        raise ValueError("no candidates to rank")
    scored, failures = [], []
    for cand in cands:
        try:
            f = lme.fit(design.subset(cand), criterion)
            r = fitted_correlation(f, fixed_only)
        except (AnalysisError, ValueError) as exc:
            log.warning("candidate %s failed: %s", candidate_label(cand), exc)
            failures.append((candidate_label(cand), str(exc)))
            continue
        scored.append((-r, _order_key(design, cand), _entry(f, cand, r)))
    scored.sort(key=lambda s: (s[0], s[1]))
    return RankingResult(SINGLE, [s[2] for s in scored], failures)


def rank_forward(
    design: Design,
    candidates: Iterable,
    criterion: str = lme.REML,
    fixed_only: bool = False,
) -> RankingResult:
    """Greedy forward selection; entries are in inclusion order and carry the
    r of the model after each addition."""
    remaining = [_as_candidate(c) for c in candidates]
    if not remaining:
        raise ValueError("no candidates to rank")
    selected: list[str] = []
    entries, failures = [], []
    while remaining:
        best = None
        for cand in list(remaining):
            try:
                f = lme.fit(design.subset([*selected, *cand]), criterion)
                r = fitted_correlation(f, fixed_only)
            except (AnalysisError, ValueError) as exc:
                log.warning("candidate %s skipped: %s", candidate_label(cand), exc)
                failures.append((candidate_label(cand), str(exc)))
                remaining.remove(cand)
                continue
            key = (-r, _order_key(design, cand))
            if best is None or key < best[0]:
                best = (key, cand, f, r)
        if best is None:
            break
        _, cand, f, r = best
        entries.append(_entry(f, cand, r))
        selected.extend(cand)
        remaining.remove(cand)
    return RankingResult(FORWARD, entries, failures)


@dataclass
class FinalModel:
    fit: lme.LmeFit
    ranking: RankingResult
    fixed_rows: list[dict]
    random_rows: list[dict]


def build_final_model(
    design: Design,
    predictors: Sequence[str] | None = None,
    criterion: str = lme.REML,
    ranking: RankingResult | None = None,
    fixed_only: bool = False,
) -> FinalModel:
    """Fit all predictors jointly and lay the estimates out in single-candidate
    r order (intercept first), followed by the two variance components."""
    names = tuple(predictors) if predictors is not None else design.predictor_names
    sub = design.subset(names)
    full = lme.fit(sub, criterion)
    if ranking is None:
        ranking = rank_single(sub, [(nm,) for nm in sub.predictor_names], criterion, fixed_only)
    if ranking.failures:
        raise StatisticalError(
            "single-predictor fits failed: " + "; ".join(f"{a}: {b}" for a, b in ranking.failures)
        )
    rows = [{"label": lme.INTERCEPT, "estimate": float(full.beta[0]), "se": float(full.se[0]),
             "t": float(full.t_values[0]), "r": None}]
    for e in ranking.entries:
        i = full.names.index(e.label)
        rows.append({"label": e.label, "estimate": float(full.beta[i]), "se": float(full.se[i]),
                     "t": float(full.t_values[i]), "r": e.r})
    random_rows = [
        {"label": "Speaker", "variance": full.sigma_b2, "sd": float(np.sqrt(full.sigma_b2))},
        {"label": "Residual", "variance": full.sigma2, "sd": float(np.sqrt(full.sigma2))},
    ]
    return FinalModel(full, ranking, rows, random_rows)
