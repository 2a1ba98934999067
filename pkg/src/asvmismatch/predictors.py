"""Regression design: standardized summary statistics, per-trial absolute
distances, and group-summed distance predictors."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from asvmismatch.catalog import FeatureCatalog, Group
from asvmismatch.errors import DesignError
from asvmismatch.ingest import TrialTable, UtteranceTable, hz_to_semitones  # noqa: F401

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Standardizer:
    """Per-column location and scale estimated over distinct utterances.

    ``mean``/``sd`` are indexed like ``labels``; ``dropped`` lists columns
    excluded for having zero variance.
    """

    labels: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    dropped: tuple[str, ...] = ()

    def transform(self, values: np.ndarray, all_labels: Sequence[str]) -> np.ndarray:
        """Z-scores for the retained columns, in ``self.labels`` order."""
        pos = {lab: i for i, lab in enumerate(all_labels)}
        cols = [pos[lab] for lab in self.labels]
        return (values[:, cols] - self.mean) / self.sd


def fit_standardizer(
    utterances: UtteranceTable,
    catalog: FeatureCatalog | None = None,
    rows: Sequence[int] | None = None,
) -> Standardizer:
    """Sample mean and SD (denominator n-1) of every catalog column.

    ``rows`` restricts the population to the given utterances; each one is
    counted once.  Sums are exactly rounded (``math.fsum``) so results do not
    depend on summation order.
    """
    catalog = catalog or utterances.catalog
    values = utterances.values if rows is None else utterances.values[np.asarray(rows, dtype=int)]
    labels, means, sds, dropped = [], [], [], []
    for j, lab in enumerate(catalog.column_labels):
        x = values[:, j]
        x = x[np.isfinite(x)]
        if len(x) < 2:
            raise DesignError(f"column {lab!r} has fewer than 2 finite values")
        m = math.fsum(x.tolist()) / len(x)
        sd = math.sqrt(math.fsum(((x - m) ** 2).tolist()) / (len(x) - 1))
        if not sd > 1e-14 * (1.0 + abs(m)):
            log.warning("column %s has zero variance; dropped", lab)
            dropped.append(lab)
            continue
        labels.append(lab)
        means.append(m)
        sds.append(sd)
    return Standardizer(tuple(labels), np.array(means), np.array(sds), tuple(dropped))


def distance_features(enroll_z: np.ndarray, test_z: np.ndarray) -> np.ndarray:
    """Absolute difference of standardized enrollment and test summaries."""
    return np.abs(np.asarray(enroll_z, dtype=float) - np.asarray(test_z, dtype=float))


def group_sum(
    distances: np.ndarray,
    groups: Iterable[Group],
    labels: Sequence[str],
    notes: list[str] | None = None,
) -> np.ndarray:
    """Sum distance columns within each group.

    ``distances`` is a vector or a matrix whose last axis is indexed like
    ``labels``.  Members absent from ``labels`` (dropped columns) are skipped
    and noted.  Output's last axis follows group order.
    """
    d = np.asarray(distances, dtype=float)
    pos = {lab: i for i, lab in enumerate(labels)}
    out = []
    for g in groups:
        acc = np.zeros(d.shape[:-1])
        used = 0
        for col in g.members:
            if col.label not in pos:
                msg = f"group {g.name}: member {col.label} unavailable, skipped"
                log.warning(msg)
                if notes is not None:
                    notes.append(msg)
                continue
            acc = acc + d[..., pos[col.label]]
            used += 1
        if not used:
            raise DesignError(f"group {g.name!r} has no available member columns")
        out.append(acc)
    return np.stack(out, axis=-1)


@dataclass
class Design:
    """Response, distance predictors (intercept implicit) and speaker labels."""

    response: np.ndarray
    predictors: np.ndarray
    predictor_names: tuple[str, ...]
    speaker_ids: list[str]
    trial_index: np.ndarray
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.response = np.asarray(self.response, dtype=float)
        self.predictors = np.asfortranarray(
            np.asarray(self.predictors, dtype=float).reshape(len(self.response), -1)
        )
        self.predictor_names = tuple(self.predictor_names)
        if self.predictors.shape[1] != len(self.predictor_names):
            raise DesignError("predictor names do not match predictor columns")
        if len(self.speaker_ids) != len(self.response):
            raise DesignError("speaker index length does not match response")
        if not np.isfinite(self.predictors).all() or not np.isfinite(self.response).all():
            raise DesignError("design contains non-finite entries")

    @property
    def n(self) -> int:
        return len(self.response)

    @property
    def n_speakers(self) -> int:
        return len(set(self.speaker_ids))

    def column(self, name: str) -> np.ndarray:
        return self.predictors[:, self.predictor_names.index(name)]

    def subset(self, names: Iterable[str]) -> "Design":
        """Design restricted to ``names`` (kept in this design's column order)."""
        wanted = set(names)
        unknown = wanted.difference(self.predictor_names)
        if unknown:
            raise DesignError(f"unknown predictor(s): {', '.join(sorted(unknown))}")
        idx = [i for i, nm in enumerate(self.predictor_names) if nm in wanted]
        return Design(
            self.response,
            self.predictors[:, idx],
            tuple(self.predictor_names[i] for i in idx),
            self.speaker_ids,
            self.trial_index,
            list(self.notes),
        )

    def with_response(self, response: np.ndarray) -> "Design":
        return Design(
            response, self.predictors, self.predictor_names, self.speaker_ids,
            self.trial_index, list(self.notes),
        )


def resolve_predictors(catalog: FeatureCatalog, selection: Iterable[str] | None) -> tuple[str, ...]:
    """Validate labels and put them in canonical order: groups (scheme order),
    then individual columns (catalog order)."""
    if selection is None:
        return catalog.group_names
    selection = list(selection)
    if not selection:
        raise DesignError("empty predictor selection")
    known = list(catalog.group_names) + list(catalog.column_labels)
    unknown = [s for s in selection if s not in known]
    if unknown:
        raise DesignError(f"unknown predictor label(s): {', '.join(unknown)}")
    chosen = set(selection)
    return tuple(lab for lab in known if lab in chosen)


def build_design(
    table: TrialTable,
    utterances: UtteranceTable,
    catalog: FeatureCatalog | None = None,
    predictors: Iterable[str] | None = None,
    standardizer: Standardizer | None = None,
) -> Design:
    """Build the regression design for a trial table.

    ``predictors`` mixes group names and ``<feature>_<stat>`` column labels;
    ``None`` selects every group.  The standardizer is fitted on the distinct
    utterances referenced by ``table`` unless one is supplied.
    """
    catalog = catalog or utterances.catalog
    names = resolve_predictors(catalog, predictors)
    n = len(table)
    if n < len(names) + 2:
        raise DesignError(f"insufficient rows: {n} trials for {len(names)} predictors")

    e_rows = np.fromiter((utterances.index[u] for u in table.enroll_ids), dtype=np.int64, count=n)
    t_rows = np.fromiter((utterances.index[u] for u in table.test_ids), dtype=np.int64, count=n)
    used = np.unique(np.concatenate([e_rows, t_rows]))
    if not utterances.complete[used].all():
        raise DesignError("trial table references incomplete utterances")
    std = standardizer or fit_standardizer(utterances, catalog, used)
    notes = [f"column {lab} dropped: zero variance" for lab in std.dropped]

    groups = {g.name: g for g in catalog.groups}
    needed = set()
    for nm in names:
        if nm in groups:
            needed.update(c.label for c in groups[nm].members)
        else:
            needed.add(nm)
    missing = [nm for nm in names if nm not in groups and nm not in std.labels]
    if missing:
        raise DesignError(f"selected column(s) dropped for zero variance: {', '.join(missing)}")
    sub = [lab for lab in std.labels if lab in needed]
    keep = [std.labels.index(lab) for lab in sub]
    sub_std = Standardizer(tuple(sub), std.mean[keep], std.sd[keep], std.dropped)
    z = np.full((len(utterances), len(sub)), np.nan)
    z[used] = sub_std.transform(utterances.values[used], catalog.column_labels)
    dist = distance_features(z[e_rows], z[t_rows])

    cols = []
    for nm in names:
        if nm in groups:
            cols.append(group_sum(dist, [groups[nm]], sub, notes)[:, 0])
        else:
            cols.append(dist[:, sub.index(nm)])
    X = np.column_stack(cols) if cols else np.empty((n, 0))
    return Design(
        np.array(table.scores, dtype=float),
        X,
        names,
        list(table.speaker_ids),
        np.arange(n),
        notes,
    )


def write_design(design: Design, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial_index", "speaker_id", "score", *design.predictor_names])
        for i in range(design.n):
            w.writerow([
                int(design.trial_index[i]),
                design.speaker_ids[i],
                repr(float(design.response[i])),
                *(repr(float(v)) for v in design.predictors[i]),
            ])
