"""Reading and writing utterance summaries and target-trial score lists.

Scores come from an external verification system and are only ever read
here.  Rows that cannot be used are rejected individually and reported;
structural problems (missing columns, duplicate ids, speaker mismatch)
raise :class:`~asvmismatch.errors.IngestError`.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from asvmismatch.catalog import Column, FeatureCatalog, StatKind
from asvmismatch.errors import IngestError

log = logging.getLogger(__name__)

UTTERANCE_KEYS = ("utterance_id", "speaker_id")
TRIAL_KEYS = ("enroll_id", "test_id", "speaker_id", "score")
_MISSING = {"", "na", "nan", "null", "none", "?"}

SEMITONE_REF_HZ = 27.5


def hz_to_semitones(hz):
    """Semitones relative to 27.5 Hz: ``12 * log2(hz / 27.5)``."""
    return 12.0 * np.log2(np.asarray(hz, dtype=float) / SEMITONE_REF_HZ)


@dataclass(frozen=True)
class UtteranceSummary:
    utterance_id: str
    speaker_id: str
    values: dict[Column, float]
    complete: bool


@dataclass(frozen=True)
class TrialRecord:
    enroll_id: str
    test_id: str
    speaker_id: str
    score: float


@dataclass(frozen=True)
class Rejection:
    line: int
    reason: str


@dataclass
class UtteranceTable:
    """Utterance-level summaries stored as one ``n_utt x n_columns`` matrix.

    Missing cells are NaN and mark the utterance incomplete.
    """

    catalog: FeatureCatalog
    utterance_ids: list[str]
    speaker_ids: list[str]
    values: np.ndarray
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        ncol = len(self.catalog.columns)
        if self.values.shape != (len(self.utterance_ids), ncol):
            raise IngestError(
                f"value matrix shape {self.values.shape} does not match "
                f"{len(self.utterance_ids)} utterances x {ncol} columns"
            )
        self.index = {}
        for i, uid in enumerate(self.utterance_ids):
            if uid in self.index:
                raise IngestError(f"duplicate utterance_id {uid!r}")
            self.index[uid] = i

    def __len__(self) -> int:
        return len(self.utterance_ids)

    @property
    def complete(self) -> np.ndarray:
        return np.isfinite(self.values).all(axis=1)

    def summary(self, i: int) -> UtteranceSummary:
        row = self.values[i]
        return UtteranceSummary(
            self.utterance_ids[i],
            self.speaker_ids[i],
            {c: float(v) for c, v in zip(self.catalog.columns, row)},
            bool(np.isfinite(row).all()),
        )

    def __iter__(self) -> Iterator[UtteranceSummary]:
        return (self.summary(i) for i in range(len(self)))


@dataclass
class TrialTable:
    enroll_ids: list[str]
    test_ids: list[str]
    speaker_ids: list[str]
    scores: np.ndarray
    rejections: list[Rejection] = field(default_factory=list)
    n_input: int | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if self.n_input is None:
            self.n_input = len(self.scores) + len(self.rejections)

    def __len__(self) -> int:
        return len(self.scores)

    def __iter__(self) -> Iterator[TrialRecord]:
        for e, t, s, y in zip(self.enroll_ids, self.test_ids, self.speaker_ids, self.scores):
            yield TrialRecord(e, t, s, float(y))

    @property
    def speakers(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for i, s in enumerate(self.speaker_ids):
            out.setdefault(s, []).append(i)
        return out

    def take(self, rows: Sequence[int]) -> "TrialTable":
        rows = list(rows)
        return TrialTable(
            [self.enroll_ids[i] for i in rows],
            [self.test_ids[i] for i in rows],
            [self.speaker_ids[i] for i in rows],
            self.scores[rows],
            list(self.rejections),
            self.n_input,
        )


def _parse_float(cell: str) -> float:
    if cell.strip().lower() in _MISSING:
        return math.nan
    try:
        v = float(cell)
    except ValueError:
        return math.nan
    return v if math.isfinite(v) else math.nan


def load_utterances(
    path: str | Path,
    catalog: FeatureCatalog,
    delimiter: str = ",",
    f0_unit: str = "st",
) -> UtteranceTable:
    """Load ``utterances.csv``.

    Non-numeric or non-finite feature cells become NaN and flag the
    utterance incomplete.  With ``f0_unit="hz"`` the ``F0_mean`` column is
    converted to semitones and ``F0_std`` by the first-order approximation
    ``12/ln2 * std/mean``.
    """
    labels = catalog.column_labels
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        pos = {h: i for i, h in enumerate(header)}
        for key in (*UTTERANCE_KEYS, *labels):
            if key not in pos:
                raise IngestError(f"{path}: missing column {key!r}")
        uid_at, spk_at = pos["utterance_id"], pos["speaker_id"]
        col_at = [pos[lab] for lab in labels]
        ids, spks, rows = [], [], []
        seen: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise IngestError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            uid = row[uid_at].strip()
            if uid in seen:
                raise IngestError(f"{path}:{lineno}: duplicate utterance_id {uid!r}")
            seen.add(uid)
            ids.append(uid)
            spks.append(row[spk_at].strip())
            rows.append([_parse_float(row[j]) for j in col_at])
    values = np.array(rows, dtype=float).reshape(len(rows), len(labels))
    if f0_unit.lower() == "hz":
        values = _f0_hz_to_semitones(values, labels)
    elif f0_unit.lower() not in ("st", "semitones"):
        raise IngestError(f"unknown F0 unit {f0_unit!r}")
    table = UtteranceTable(catalog, ids, spks, values)
    n_bad = int((~table.complete).sum())
    if n_bad:
        log.warning("%s: %d of %d utterances incomplete", path, n_bad, len(table))
    return table


def _f0_hz_to_semitones(values: np.ndarray, labels: Sequence[str]) -> np.ndarray:
    values = values.copy()
    if "F0_mean" not in labels:
        raise IngestError("f0_unit='hz' requires an F0 feature in the catalog")
    im, isd = labels.index("F0_mean"), labels.index("F0_std")
    mean_hz = values[:, im]
    with np.errstate(invalid="ignore", divide="ignore"):
        values[:, isd] = 12.0 / math.log(2.0) * values[:, isd] / mean_hz
        values[:, im] = hz_to_semitones(mean_hz)
    values[~np.isfinite(values)] = np.nan
    return values


def load_trials(path: str | Path, utterances: UtteranceTable, delimiter: str = ",") -> TrialTable:
    """Load ``trials.csv`` against an utterance table.

    Rows are rejected (and recorded in ``TrialTable.rejections``) for unknown
    or incomplete utterances, ``enroll_id == test_id``, a non-finite score,
    or a ``label`` other than ``target``.  A speaker id that disagrees with
    either utterance's speaker raises.
    """
    complete = utterances.complete
    enr, tst, spk, scores = [], [], [], []
    rejections: list[Rejection] = []
    n_input = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        pos = {h: i for i, h in enumerate(header)}
        for key in TRIAL_KEYS:
            if key not in pos:
                raise IngestError(f"{path}: missing column {key!r}")
        ie, it, isp, isc = (pos[k] for k in TRIAL_KEYS)
        ilab = pos.get("label")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            n_input += 1
            if len(row) < len(header):
                rejections.append(Rejection(lineno, "short row"))
                continue
            e, t, s = row[ie].strip(), row[it].strip(), row[isp].strip()
            reason = None
            if ilab is not None and row[ilab].strip().lower() != "target":
                reason = f"label {row[ilab].strip()!r} is not 'target'"
            elif e == t:
                reason = "enroll_id equals test_id"
            elif e not in utterances.index or t not in utterances.index:
                missing = e if e not in utterances.index else t
                reason = f"unknown utterance {missing!r}"
            if reason is None:
                ue, ut = utterances.index[e], utterances.index[t]
                for u in (ue, ut):
                    if utterances.speaker_ids[u] != s:
                        raise IngestError(
                            f"{path}:{lineno}: trial speaker {s!r} does not match speaker "
                            f"{utterances.speaker_ids[u]!r} of utterance {utterances.utterance_ids[u]!r}"
                        )
                y = _parse_float(row[isc])
                if not math.isfinite(y):
                    reason = f"non-finite score {row[isc].strip()!r}"
                elif not (complete[ue] and complete[ut]):
                    reason = "incomplete utterance summary"
            if reason is not None:
                rejections.append(Rejection(lineno, reason))
                continue
            enr.append(e)
            tst.append(t)
            spk.append(s)
            scores.append(y)
    if rejections:
        log.warning("%s: rejected %d of %d trials", path, len(rejections), n_input)
    if not scores:
        raise IngestError(f"{path}: no usable trials")
    return TrialTable(enr, tst, spk, np.array(scores, dtype=float), rejections, n_input)


def split_by_speaker_set(table: TrialTable, speaker_list: Iterable[str]) -> TrialTable:
    keep = set(speaker_list)
    if not keep:
        raise IngestError("empty speaker selection")
    rows = [i for i, s in enumerate(table.speaker_ids) if s in keep]
    if not rows:
        raise IngestError("no trials for selection")
    return table.take(rows)


def load_speaker_list(path: str | Path) -> list[str]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


def _fmt(v: float) -> str:
    return "NA" if not math.isfinite(v) else repr(float(v))


def write_utterances(table: UtteranceTable, path: str | Path, delimiter: str = ",") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow([*UTTERANCE_KEYS, *table.catalog.column_labels])
        for uid, spk, row in zip(table.utterance_ids, table.speaker_ids, table.values.tolist()):
            w.writerow([uid, spk, *map(_fmt, row)])


def write_trials(table: TrialTable, path: str | Path, delimiter: str = ",") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(TRIAL_KEYS)
        for e, t, s, y in zip(table.enroll_ids, table.test_ids, table.speaker_ids, table.scores.tolist()):
            w.writerow([e, t, s, _fmt(y)])


__all__ = [
    "StatKind",
    "UtteranceSummary",
    "TrialRecord",
    "Rejection",
    "UtteranceTable",
    "TrialTable",
    "hz_to_semitones",
    "load_utterances",
    "load_trials",
    "split_by_speaker_set",
    "load_speaker_list",
    "write_utterances",
    "write_trials",
]
