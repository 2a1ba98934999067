"""Command-line interface.

Subcommands: ``fit``, ``rank``, ``anova``, ``diag``, ``synth``.  Every run
writes ``manifest.json`` (configuration, input digests, tool version) to
its output directory.  Exit codes: 0 success, 1 statistical failure,
2 input/configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

from asvmismatch import __version__, lme, reports
from asvmismatch.catalog import FeatureCatalog, default_catalog, load_catalog_file
from asvmismatch.errors import InputError, StatisticalError
from asvmismatch.ingest import (
    load_speaker_list,
    load_trials,
    load_utterances,
    split_by_speaker_set,
)
from asvmismatch.predictors import Design, build_design, resolve_predictors, write_design
from asvmismatch.ranking import SINGLE, FORWARD, build_final_model, rank_forward, rank_single

log = logging.getLogger("asvmismatch")

EXIT_OK, EXIT_STAT, EXIT_INPUT = 0, 1, 2


class UsageError(InputError):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out: Path, args: argparse.Namespace, inputs: list[Path], outputs: list[Path]) -> None:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
              if k not in ("func", "verbose")}
    doc = {
        "tool": "asvmismatch",
        "version": __version__,
        "subcommand": args.command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {p.name: _sha256(p) for p in sorted(outputs)},
    }
    reports.write_json(out / "manifest.json", doc)


def _labels(text: str | None) -> list[str] | None:
    if text is None:
        return None
    return [s.strip() for s in text.split(",") if s.strip()]


def _require(path: Path | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    if not path.is_file():
        raise FileNotFoundError(f"{what} file not found: {path}")
    return path


class _Inputs:
    def __init__(self, args: argparse.Namespace):
        self.paths: list[Path] = []
        cat_path = args.catalog
        if cat_path is not None:
            self.catalog: FeatureCatalog = load_catalog_file(_require(cat_path, "catalog"))
            self.paths.append(cat_path)
        else:
            self.catalog = default_catalog()
        utt = _require(args.utterances, "utterances")
        tri = _require(args.trials, "trials")
        self.paths += [utt, tri]
        self.utterances = load_utterances(utt, self.catalog, args.delimiter, args.f0_unit)
        self.trials = load_trials(tri, self.utterances, args.delimiter)
        if args.speakers is not None:
            self.paths.append(_require(args.speakers, "speakers"))
            self.trials = split_by_speaker_set(self.trials, load_speaker_list(args.speakers))

    def design(self, predictors) -> Design:
        return build_design(self.trials, self.utterances, self.catalog, predictors)

    def rejection_rows(self) -> list[dict]:
        return [{"line": r.line, "reason": r.reason} for r in self.trials.rejections]


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _display_label(catalog: FeatureCatalog):
    def show(label: str) -> str:
        for col in catalog.columns:
            if col.label == label:
                return col.feature
        return label
    return show


def cmd_fit(args) -> int:
    inp = _Inputs(args)
    design = inp.design(_labels(args.predictors))
    final = build_final_model(design, criterion=args.criterion, fixed_only=args.fixed_only)
    fit = final.fit
    if not fit.converged:
        raise StatisticalError(f"variance-ratio search did not converge after {fit.iterations} iterations")
    out = _out(args)
    doc = reports.model_document(final, {
        "trials_input": inp.trials.n_input,
        "trials_rejected": len(inp.trials.rejections),
        "design_notes": design.notes,
    })
    outputs = reports.write_model_report(out, doc)
    lme.save_fit(fit, out / "fit.json", out / "fitted.csv",
                 extra={"ranking": {e.label: e.r for e in final.ranking.entries}})
    outputs += [out / "fit.json", out / "fitted.csv", out / "rejections.csv"]
    reports.write_csv(out / "rejections.csv", ("line", "reason"), inp.rejection_rows())
    if args.dump_design:
        write_design(design, out / "design.csv")
        outputs.append(out / "design.csv")
    if not args.no_plots:
        from asvmismatch import plotting
        from asvmismatch.ranking import fitted_correlation

        r = fitted_correlation(fit, args.fixed_only)
        outputs.append(plotting.fitted_vs_score(
            fit.fitted_fixed if args.fixed_only else fit.fitted, fit.response, r, out / "fitted_vs_score.svg"))
    _write_manifest(out, args, inp.paths, outputs)
    sys.stdout.write(reports.model_text(doc))
    return EXIT_OK


def _parse_scope(scope: str, catalog: FeatureCatalog) -> tuple[str, str | None]:
    if scope == "groups":
        return "groups", None
    kind, sep, group = scope.partition(":")
    if kind != "features" or not sep or not group:
        raise UsageError(f"invalid --scope {scope!r}; use 'groups' or 'features:GROUP'")
    if group not in catalog.group_names:
        raise UsageError(f"unknown group {group!r}; known: {', '.join(catalog.group_names)}")
    return "features", group


def cmd_rank(args) -> int:
    inp = _Inputs(args)
    kind, group = _parse_scope(args.scope, inp.catalog)
    ranker = rank_single if args.mode == SINGLE else rank_forward
    if kind == "groups":
        blocks_in = [("", list(inp.catalog.group_names))]
    else:
        members = inp.catalog.group(group).members
        blocks_in = [
            ("mean", [c.label for c in members if c.stat.value == "mean"]),
            ("std", [c.label for c in members if c.stat.value == "std"]),
        ]
    design = inp.design([lab for _, labs in blocks_in for lab in labs])
    blocks = [(name, ranker(design, labs, args.criterion, args.fixed_only)) for name, labs in blocks_in]
    if not any(res.entries for _, res in blocks):
        raise StatisticalError("every candidate fit failed")
    out = _out(args)
    doc = reports.ranking_document(blocks, args.scope, args.criterion)
    display = _display_label(inp.catalog) if kind == "features" else None
    outputs = reports.write_ranking_report(out, doc, display)
    if not args.no_plots:
        from asvmismatch import plotting

        show = display or (lambda s: s)
        outputs.append(plotting.ranking_bars(
            [(name, [show(e.label) for e in res.entries], [e.r for e in res.entries]) for name, res in blocks],
            out / "rank.svg"))
    _write_manifest(out, args, inp.paths, outputs)
    sys.stdout.write(reports.ranking_text(doc, display))
    return EXIT_OK


def cmd_anova(args) -> int:
    inp = _Inputs(args)
    a = resolve_predictors(inp.catalog, _labels(args.model_a))
    b = resolve_predictors(inp.catalog, _labels(args.model_b)) if _labels(args.model_b) else ()
    design = inp.design(sorted(set(a) | set(b), key=(list(a) + list(b)).index))
    fa = lme.fit(design.subset(a), lme.ML)
    fb = lme.fit(design.subset(b), lme.ML) if b else lme.fit(_intercept_only(design), lme.ML)
    if set(fb.names) <= set(fa.names):
        full, reduced = fa, fb
    elif set(fa.names) <= set(fb.names):
        full, reduced = fb, fa
    else:
        raise lme.NotNestedError("models are not nested: neither predictor set contains the other")
    if not (full.converged and reduced.converged):
        raise StatisticalError("a model fit did not converge")
    lrt = lme.likelihood_ratio_test(full, reduced)
    out = _out(args)
    doc = reports.anova_document(full, reduced, lrt)
    outputs = reports.write_anova_report(out, doc)
    _write_manifest(out, args, inp.paths, outputs)
    sys.stdout.write(reports.anova_text(doc))
    return EXIT_OK


def _intercept_only(design: Design) -> Design:
    import numpy as np

    return Design(design.response, np.empty((design.n, 0)), (), design.speaker_ids, design.trial_index)


def cmd_diag(args) -> int:
    from asvmismatch import diagnostics

    fit_path = Path(args.fit)
    if not fit_path.is_file():
        raise FileNotFoundError(f"fit file not found: {fit_path} (run 'fit' first or pass --fit)")
    out = Path(args.out) if args.out else fit_path.parent / "diag"
    fit = lme.load_fit(fit_path)
    rows = fit_path.with_name("fitted.csv")
    bundle = diagnostics.diagnose(fit, args.fixed_only)
    out.mkdir(parents=True, exist_ok=True)
    outputs = diagnostics.write_bundle(bundle, out)
    summary = {"r": bundle.r, **bundle.summary.as_dict(),
               "histogram_rule": f"Freedman-Diaconis, at most {diagnostics.MAX_BINS} bins"}
    reports.write_json(out / "summary.json", summary)
    outputs.append(out / "summary.json")
    if not args.no_plots:
        from asvmismatch import plotting

        outputs += [
            plotting.fitted_vs_score(bundle.scatter[:, 0], bundle.scatter[:, 1], bundle.r, out / "scatter.svg"),
            plotting.qq_plot(bundle.qq_points, out / "qq.svg"),
            plotting.residuals_vs_fitted(bundle.residual_vs_fitted[:, 0], bundle.residual_vs_fitted[:, 1],
                                         out / "resid_fitted.svg"),
            plotting.residual_histogram(bundle.hist_edges, bundle.hist_counts, out / "hist.svg"),
        ]
    _write_manifest(out, args, [fit_path, rows], outputs)
    s = bundle.summary
    sys.stdout.write(
        f"r = {bundle.r:.3f}  residual SD = {s.residual_sd:.3f}  speaker SD = {s.speaker_sd:.3f}  "
        f"skewness = {s.skewness:.3f}  excess kurtosis = {s.excess_kurtosis:.3f}\n"
    )
    return EXIT_OK


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise UsageError(f"invalid number list {text!r}") from None


def cmd_synth(args) -> int:
    from asvmismatch import synth

    catalog = load_catalog_file(_require(args.catalog, "catalog")) if args.catalog else default_catalog()
    preds = _labels(args.predictors)
    if preds is None:
        preds = list(catalog.group_names)
        beta = args.beta and _floats(args.beta)
        if not beta and catalog == default_catalog():
            beta = synth.REFERENCE_BETA
    else:
        beta = _floats(args.beta) if args.beta else None
    if not beta:
        raise UsageError("--beta is required for a custom predictor set")
    spec = synth.SynthSpec(
        n_speakers=args.n_speakers,
        trials_per_speaker=args.trials_per_speaker,
        beta=tuple(beta),
        predictors=tuple(preds),
        sigma_b=args.sigma_b,
        sigma=args.sigma,
        utterances_per_speaker=args.utterances_per_speaker,
        group_correlation=args.group_correlation,
        seed=args.seed,
    )
    data = (synth.null_generate if args.null else synth.generate)(spec, catalog)
    out = _out(args)
    outputs = synth.write_synth(data, out)
    _write_manifest(out, args, [args.catalog] if args.catalog else [], outputs)
    sys.stdout.write(f"wrote {len(data.utterances)} utterances and {len(data.trials)} trials to {out}\n")
    return EXIT_OK


def _add_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--utterances", type=Path, help="utterance summary table (CSV)")
    p.add_argument("--trials", type=Path, help="target trial table (CSV)")
    p.add_argument("--catalog", type=Path, help="feature/group catalog (YAML or JSON)")
    p.add_argument("--speakers", type=Path, help="file listing the speakers to analyse, one per line")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--f0-unit", choices=("st", "hz"), default="st",
                   help="unit of the F0 columns; hz is converted to semitones re 27.5 Hz")
    p.add_argument("--criterion", type=str.upper, choices=(lme.ML, lme.REML), default=lme.REML)
    p.add_argument("--fixed-only", action="store_true",
                   help="correlate scores with fixed-effect fitted values only (no speaker BLUPs)")
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--no-plots", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asvmismatch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the grouped model and write the coefficient report")
    _add_inputs(p)
    p.add_argument("--predictors", help="comma-separated groups/columns (default: all groups)")
    p.add_argument("--dump-design", action="store_true", help="also write design.csv")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("rank", help="rank groups or the features of one group by fitted-vs-score r")
    _add_inputs(p)
    p.add_argument("--mode", choices=(SINGLE, FORWARD), default=SINGLE)
    p.add_argument("--scope", default="groups", help="'groups' or 'features:GROUP'")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("anova", help="likelihood-ratio comparison of two nested models")
    _add_inputs(p)
    p.add_argument("--model-a", help="comma-separated predictors of model A (default: all groups)")
    p.add_argument("--model-b", default="", help="comma-separated predictors of model B (default: none)")
    p.set_defaults(func=cmd_anova)

    p = sub.add_parser("diag", help="residual diagnostics for a saved fit")
    p.add_argument("--fit", type=Path, default=Path("out/fit.json"),
                   help="fit.json written by 'fit' (default: out/fit.json)")
    p.add_argument("--out", type=Path, help="output directory (default: <fit dir>/diag)")
    p.add_argument("--fixed-only", action="store_true")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("synth", help="generate synthetic utterances, trials and truth")
    p.add_argument("--out", type=Path, default=Path("synth"))
    p.add_argument("--catalog", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-speakers", type=int, default=200)
    p.add_argument("--trials-per-speaker", type=int, default=50)
    p.add_argument("--utterances-per-speaker", type=int)
    p.add_argument("--predictors", help="comma-separated groups/columns carrying effects (default: all groups)")
    p.add_argument("--beta", help="comma-separated intercept and coefficients")
    p.add_argument("--sigma-b", type=float, default=4.5)
    p.add_argument("--sigma", type=float, default=9.0)
    p.add_argument("--group-correlation", type=float, default=0.0)
    p.add_argument("--null", action="store_true", help="zero every distance coefficient")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StatisticalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAT


if __name__ == "__main__":
    raise SystemExit(main())
