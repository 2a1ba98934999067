"""Synthetic utterance summaries and target-trial scores with known truth.

Each speaker draws from its own generator keyed on ``(seed, speaker
index)``, so a speaker's data do not depend on how many speakers come
before it.  Gaussian draws are inverse-CDF transforms of uniforms.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from asvmismatch.catalog import FeatureCatalog, default_catalog
from asvmismatch.errors import InputError
from asvmismatch.ingest import TrialTable, UtteranceTable, write_trials, write_utterances
from asvmismatch.predictors import Design, build_design, resolve_predictors
from asvmismatch.special import ndtri


# Intercept and per-group effects (default catalog order) at the scale of
# x-vector/PLDA target scores; used as the CLI's default generator.
REFERENCE_BETA = (28.36, -1.02, -0.36, -0.20, -0.15, -0.16, -0.31, -0.29, -0.01)


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings.

    ``beta`` is ``(intercept, *coefficients)`` with coefficients aligned to
    ``predictors`` (group names or column labels; ``None`` means every group
    of the catalog).  Utterance summaries are ``loc + scale * z`` with ``z``
    standard normal; ``group_correlation`` is the correlation between
    columns of the same group.
    """

    n_speakers: int = 200
    trials_per_speaker: int = 50
    beta: tuple[float, ...] = (28.0,)
    predictors: tuple[str, ...] | None = ()
    sigma_b: float = 4.5
    sigma: float = 9.0
    utterances_per_speaker: int | None = None
    loc: float | Mapping[str, float] = 0.0
    scale: float | Mapping[str, float] = 1.0
    group_correlation: float = 0.0
    seed: int = 0


@dataclass
class SynthData:
    utterances: UtteranceTable
    trials: TrialTable
    truth: dict
    design: Design | None = field(default=None, repr=False)


def _normals(rng: np.random.Generator, size) -> np.ndarray:
    # uniforms on a 2**-52 grid, strictly inside (0, 1)
    k = rng.integers(0, 2**52, size=size, dtype=np.int64)
    return ndtri((k + 0.5) / 2.0**52)


def _per_column(value, labels, default: float) -> np.ndarray:
    if isinstance(value, Mapping):
        return np.array([float(value.get(lab, default)) for lab in labels])
    return np.full(len(labels), float(value))


def _utterances_needed(trials: int) -> int:
    u = 2
    while u * (u - 1) // 2 < trials:
        u += 1
    return u


def _validate(spec: SynthSpec, n_pred: int) -> None:
    if spec.n_speakers < 2:
        raise InputError("n_speakers must be at least 2")
    if spec.trials_per_speaker < 1:
        raise InputError("trials_per_speaker must be at least 1")
    if spec.sigma_b < 0 or spec.sigma < 0:
        raise InputError("standard deviations must be non-negative")
    if not 0.0 <= spec.group_correlation < 1.0:
        raise InputError("group_correlation must lie in [0, 1)")
    if len(spec.beta) != n_pred + 1:
        raise InputError(f"beta has {len(spec.beta)} entries; expected intercept + {n_pred}")


def generate(spec: SynthSpec, catalog: FeatureCatalog | None = None) -> SynthData:
    catalog = catalog or default_catalog()
    labels = catalog.column_labels
    preds = catalog.group_names if spec.predictors is None else tuple(spec.predictors)
    _validate(spec, len(preds))
    coef = dict(zip(preds, spec.beta[1:]))
    canonical = resolve_predictors(catalog, preds) if preds else ()

    u = spec.utterances_per_speaker or _utterances_needed(spec.trials_per_speaker)
    pairs = list(itertools.combinations(range(u), 2))
    if len(pairs) < spec.trials_per_speaker:
        raise InputError(f"{u} utterances per speaker give only {len(pairs)} distinct pairs")

    col_pos = {lab: j for j, lab in enumerate(labels)}
    blocks = [[col_pos[c.label] for c in g.members] for g in catalog.groups]
    rho = spec.group_correlation
    loc = _per_column(spec.loc, labels, 0.0)
    scale = _per_column(spec.scale, labels, 1.0)
    width = max(5, len(str(spec.n_speakers - 1)))

    utt_ids, utt_spk, rows = [], [], []
    enr, tst, spk_of_trial = [], [], []
    b = np.empty(spec.n_speakers)
    eps = []
    for k in range(spec.n_speakers):
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(k,)))
        spk = f"spk{k:0{width}d}"
        z = _normals(rng, (u, len(labels)))
        if rho > 0:
            for cols in blocks:
                g = _normals(rng, u)
                z[:, cols] = math.sqrt(rho) * g[:, None] + math.sqrt(1.0 - rho) * z[:, cols]
        ids = [f"{spk}_u{j:03d}" for j in range(u)]
        utt_ids.extend(ids)
        utt_spk.extend([spk] * u)
        rows.append(loc + scale * z)
        pick = np.sort(rng.permutation(len(pairs))[: spec.trials_per_speaker])
        for i in pick:
            a, c = pairs[i]
            enr.append(ids[a])
            tst.append(ids[c])
            spk_of_trial.append(spk)
        b[k] = spec.sigma_b * _normals(rng, 1)[0]
        eps.append(spec.sigma * _normals(rng, spec.trials_per_speaker))

    utterances = UtteranceTable(catalog, utt_ids, utt_spk, np.vstack(rows))
    n = len(enr)
    table = TrialTable(enr, tst, spk_of_trial, np.zeros(n))
    y = np.full(n, float(spec.beta[0]))
    design = None
    if canonical:
        design = build_design(table, utterances, catalog, canonical)
        for j, name in enumerate(design.predictor_names):
            y = y + coef[name] * design.predictors[:, j]
    y = y + np.repeat(b, spec.trials_per_speaker) + np.concatenate(eps)
    table = TrialTable(enr, tst, spk_of_trial, y)
    if design is not None:
        design = design.with_response(y)

    truth = {
        "spec": {**asdict(spec), "predictors": list(preds), "beta": list(map(float, spec.beta))},
        "coefficients": {"(Intercept)": float(spec.beta[0]), **{k: float(v) for k, v in coef.items()}},
        "sigma_b": float(spec.sigma_b),
        "sigma": float(spec.sigma),
        "speaker_effects": {f"spk{k:0{width}d}": float(b[k]) for k in range(spec.n_speakers)},
    }
    return SynthData(utterances, table, truth, design)


def null_generate(spec: SynthSpec, catalog: FeatureCatalog | None = None) -> SynthData:
    """Like :func:`generate` but every distance coefficient is zero."""
    catalog = catalog or default_catalog()
    preds = catalog.group_names if spec.predictors is None else tuple(spec.predictors)
    beta = (float(spec.beta[0]),) + (0.0,) * len(preds)
    return generate(
        SynthSpec(**{**asdict(spec), "beta": beta, "predictors": preds}), catalog
    )


def write_synth(data: SynthData, outdir: str | Path) -> list[Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "utterances.csv", out / "trials.csv", out / "truth.json"]
    write_utterances(data.utterances, paths[0])
    write_trials(data.trials, paths[1])
    paths[2].write_text(json.dumps(data.truth, indent=2, default=_json_default) + "\n", encoding="utf-8")
    return paths


def _json_default(obj):
    if isinstance(obj, Mapping):
        return dict(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
