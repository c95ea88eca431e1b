"""Command-line interface.

Each subcommand runs one analysis and writes a plot-ready report (JSON, or
CSV with a leading ``# config:`` line). Every report embeds the complete
effective configuration, defaults and seeds included, so rerunning with the
echoed settings reproduces it byte for byte.

Exit status: 0 success, 2 usage error, 3 data or file error, 4 numeric or
convergence failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from . import __version__
from .calibration import brier, ece, reliability_bins
from .cohort import (FEATURES, FIB4_CUTOFF, RAW_FIELDS, SyntheticSpec, compute_fib4, generate_synthetic_cohort,
                     plant_signal, read_cohort, split_cohort, development_spec, write_cohort)
from .dca import DEFAULT_RANGES, dca_curves, fit_fib4_calibration, summarize_dca
from .errors import DataError, NumericError
from .harness import (bootstrap_ci, import_predictions, loo_ablation, permutation_importance, threshold_audit)
from .metrics import ScoredSet, evaluate
from .sdnn import (DEFAULT_WIDTHS, TrainingConfig, count_parameters, load_model, predict, serialize_model,
                   train)
from .stats import ASSOCIATION_COLUMNS, univariable_table

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


# -- argument types -----------------------------------------------------------------

def _u64(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _grid(text):
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("grid must be LO:HI:STEP") from None
    return lo, hi, step


def _ranges(text):
    try:
        return tuple(tuple(float(v) for v in part.split(":")) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("ranges must be LO:HI[,LO:HI...]") from None


def _widths(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("hidden widths must be comma-separated integers") from None


def _features(text):
    feats = tuple(f.strip().lower() for f in text.split(","))
    bad = [f for f in feats if f not in FEATURES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown features {bad}; choose from {', '.join(FEATURES)}")
    return feats


def _class_weighting(text):
    if text in ("balanced", "none"):
        return text
    try:
        w_neg, w_pos = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("class weighting must be balanced, none or W_NEG,W_POS") from None
    return (w_neg, w_pos)


def _batch(text):
    return "full" if text == "full" else int(text)


# -- parser --------------------------------------------------------------------------

def _add_out(p, fmt=True):
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--force", action="store_true", help="overwrite an existing output file")
    if fmt:
        p.add_argument("--format", choices=("json", "csv"), default="json")


def _add_scorer(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--model", help="s-DNN model file")
    g.add_argument("--predictions", help="prediction CSV (prob[,label][,id])")
    g.add_argument("--fib4", action="store_true", help="score with the FIB-4 index itself")
    p.add_argument("--name", help="strategy name for imported predictions")


def _add_training(p):
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=_batch, default=32)
    p.add_argument("--class-weighting", type=_class_weighting, default="balanced")
    p.add_argument("--hidden", type=_widths, default=DEFAULT_WIDTHS, help="hidden widths, e.g. 17,5,23")
    p.add_argument("--features", type=_features, default=FEATURES)


def build_parser():
    parser = argparse.ArgumentParser(prog="mlenit", description="FIB-4 variable-space s-DNN toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fib4", help="compute the FIB-4 index")
    for f in RAW_FIELDS:
        p.add_argument(f"--{f}", type=float, required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort CSV")
    p.add_argument("--spec", help="SyntheticSpec JSON (default: development-cohort summary statistics)")
    p.add_argument("--n", type=int)
    p.add_argument("--prevalence", type=float)
    p.add_argument("--seed", type=_u64)
    p.add_argument("--plant", metavar="FEATURE:SDS", help="shift one feature's advanced-class mean by SDS sds")
    _add_out(p, fmt=False)

    p = sub.add_parser("split", help="stratified train/tune split")
    p.add_argument("--input", required=True)
    p.add_argument("--train-fraction", type=float, default=0.9)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--no-stratify", action="store_true")
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-tune", required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("train", help="train an s-DNN")
    p.add_argument("--input", required=True)
    p.add_argument("--seed", type=_u64, default=0)
    _add_training(p)
    _add_out(p, fmt=False)

    p = sub.add_parser("predict", help="score a cohort with a model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    _add_out(p, fmt=False)

    for name, help_ in (("eval", "operating-point metrics with bootstrap CIs"),
                        ("import-eval", "evaluate imported external predictions")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--input", required=True)
        if name == "eval":
            _add_scorer(p)
        else:
            p.add_argument("--predictions", required=True)
            p.add_argument("--name", default="external")
        p.add_argument("--threshold", type=float, default=0.5)
        p.add_argument("--fib4-cutoff", type=float, default=FIB4_CUTOFF)
        p.add_argument("--B", type=int, default=2000)
        p.add_argument("--seed", type=_u64, default=0)
        p.add_argument("--workers", type=int, default=1)
        _add_out(p)

    p = sub.add_parser("calibrate", help="Brier score, reliability bins and ECE")
    p.add_argument("--input", required=True)
    _add_scorer(p)
    p.add_argument("--bins", type=int, default=10)
    _add_out(p)

    p = sub.add_parser("dca", help="decision-curve analysis")
    p.add_argument("--input", required=True)
    p.add_argument("--model", action="append", default=[], metavar="[NAME=]PATH")
    p.add_argument("--predictions", action="append", default=[], metavar="NAME=PATH")
    p.add_argument("--fib4-train", help="cohort for the FIB-4 logistic calibration model")
    p.add_argument("--grid", type=_grid, default=(0.05, 0.50, 0.01))
    p.add_argument("--ranges", type=_ranges, default=DEFAULT_RANGES)
    _add_out(p)

    p = sub.add_parser("stats", help="univariable association table")
    p.add_argument("--input", required=True)
    _add_out(p)

    p = sub.add_parser("ablate", help="leave-one-feature-out ablation")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--workers", type=int, default=1)
    _add_training(p)
    _add_out(p)

    p = sub.add_parser("importance", help="permutation feature importance")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--repeats", type=int, default=30)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--workers", type=int, default=1)
    _add_out(p)

    p = sub.add_parser("bootstrap", help="bootstrap CI for one statistic")
    p.add_argument("--input", required=True)
    _add_scorer(p)
    p.add_argument("--statistic", choices=("thresholded_auc", "probability_auc", "brier"),
                   default="thresholded_auc")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--fib4-cutoff", type=float, default=FIB4_CUTOFF)
    p.add_argument("--B", type=int, default=2000)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--workers", type=int, default=1)
    _add_out(p)

    p = sub.add_parser("audit", help="exploratory threshold audit")
    p.add_argument("--input", required=True)
    _add_scorer(p)
    p.add_argument("--criterion", choices=("youden", "f1"), required=True)
    p.add_argument("--step", type=float, default=0.01)
    _add_out(p)

    p = sub.add_parser("inspect", help="summarize a model file")
    p.add_argument("--model", required=True)
    return parser


# -- helpers ----------------------------------------------------------------------------

def _config(args):
    cfg = {"mlenit_version": __version__}
    for key, value in sorted(vars(args).items()):
        if key in ("force", "out"):
            continue
        cfg[key] = list(value) if isinstance(value, tuple) else value
    return cfg


def _emit(args, text):
    out = getattr(args, "out", None)
    if not out:
        sys.stdout.write(text)
        return
    _write_file(out, text, args.force)


def _write_file(path, data, force):
    if os.path.exists(path) and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")
    mode = "wb" if isinstance(data, bytes) else "w"
    kwargs = {} if isinstance(data, bytes) else {"encoding": "utf-8", "newline": "\n"}
    with open(path, mode, **kwargs) as fh:
        fh.write(data)


def _json_report(args, result):
    return json.dumps({"config": _config(args), "result": result}, indent=2, allow_nan=False) + "\n"


def _csv_report(args, header, rows, extra=None):
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(_config(args), sort_keys=True) + "\n")
    if extra is not None:
        buf.write("# result: " + json.dumps(extra, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def _cohort(path, labeled=True):
    return read_cohort(path, Path(path).stem, require_labels=labeled)


def _scored(args, cohort):
    """Scored set and the default threshold for the chosen scorer."""
    if getattr(args, "fib4", False):
        scores = cohort.matrix(("fib4",))[:, 0]
        scored = ScoredSet(scores, cohort.labels(), "FIB-4", is_probability=False)
        return scored, getattr(args, "fib4_cutoff", FIB4_CUTOFF)
    if getattr(args, "model", None):
        return predict(load_model(args.model), cohort, Path(args.model).stem), getattr(args, "threshold", 0.5)
    with open(args.predictions, encoding="utf-8") as fh:
        name = args.name or Path(args.predictions).stem
        return import_predictions(fh, cohort, name), getattr(args, "threshold", 0.5)


def _require_probabilities(scored, what):
    if not scored.is_probability:
        raise UsageError(f"{what} needs probabilities; use --model or --predictions")


def _training_config(args):
    return TrainingConfig(epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size,
                          class_weighting=args.class_weighting, seed=args.seed)


# -- subcommands ---------------------------------------------------------------------------

def cmd_fib4(args):
    print(compute_fib4(args.age, args.ast, args.alt, args.plt))


def cmd_synth(args):
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            spec = SyntheticSpec.from_json(fh.read())
    else:
        spec = development_spec()
    doc = spec.to_dict()
    for key in ("n", "prevalence", "seed"):
        if getattr(args, key) is not None:
            doc[key] = getattr(args, key)
    spec = SyntheticSpec.from_dict(doc)
    if args.plant:
        feature, _, sds = args.plant.partition(":")
        try:
            spec = plant_signal(spec, feature.strip().lower(), float(sds))
        except ValueError as exc:
            raise UsageError(f"--plant: {exc}") from None
    cohort = generate_synthetic_cohort(spec)
    buf = io.StringIO()
    write_cohort(cohort, buf)
    _emit(args, buf.getvalue())
    print("# synth config: " + json.dumps(spec.to_dict(), sort_keys=True), file=sys.stderr)


def cmd_split(args):
    cohort = _cohort(args.input)
    train_c, tune_c = split_cohort(cohort, args.train_fraction, args.seed, not args.no_stratify)
    for path, part in ((args.out_train, train_c), (args.out_tune, tune_c)):
        buf = io.StringIO()
        write_cohort(part, buf)
        _write_file(path, buf.getvalue(), args.force)
    print(f"train: {len(train_c)}  tune: {len(tune_c)}")


def cmd_train(args):
    cohort = _cohort(args.input)
    model = train(cohort, _training_config(args), args.hidden, args.features)
    data = serialize_model(model)
    if args.out:
        _write_file(args.out, data, args.force)
    else:
        sys.stdout.write(data.decode("utf-8"))


def cmd_predict(args):
    cohort = _cohort(args.input, labeled=False)
    scored = predict(load_model(args.model), cohort)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["prob"] + (["label"] if scored.labels is not None else []) + ["id"]
    w.writerow(header)
    for i, p in enumerate(scored.scores):
        row = [repr(float(p))] + ([int(scored.labels[i])] if scored.labels is not None else [])
        w.writerow(row + [scored.ids[i]])
    _emit(args, buf.getvalue())


def cmd_eval(args):
    cohort = _cohort(args.input)
    scored, threshold = _scored(args, cohort)
    args.effective_threshold = threshold
    report = evaluate(scored, threshold)
    for stat in ("thresholded_auc", "probability_auc"):
        bs = bootstrap_ci(scored, stat, args.B, args.seed, threshold, args.workers)
        report.ci[stat] = (bs.ci_lo, bs.ci_hi)
    if args.format == "json":
        _emit(args, _json_report(args, {"model": scored.tag, "cohort": cohort.name, "n": len(cohort),
                                        "metrics": report.to_dict()}))
    else:
        _emit(args, _csv_report(args, ["cohort", "model", "metric", "value", "ci_lo", "ci_hi"],
                                report.rows(cohort.name, scored.tag)))


def cmd_calibrate(args):
    cohort = _cohort(args.input)
    scored, _ = _scored(args, cohort)
    _require_probabilities(scored, "calibration")
    bins = reliability_bins(scored, args.bins)
    summary = {"brier": brier(scored), "ece": ece(bins), "bins": args.bins, "n": len(scored)}
    if args.format == "json":
        summary["reliability"] = [dict(zip(("bin_lo", "bin_hi", "count", "mean_pred", "obs_freq"), r))
                                  for r in bins.rows()]
        _emit(args, _json_report(args, summary))
    else:
        _emit(args, _csv_report(args, ["bin_lo", "bin_hi", "count", "mean_pred", "obs_freq"], bins.rows(),
                                extra=summary))


def cmd_dca(args):
    cohort = _cohort(args.input)
    models = {}
    if args.fib4_train:
        models["calibrated_fib4"] = fit_fib4_calibration(_cohort(args.fib4_train)).score(cohort)
    for spec in args.model:
        name, _, path = spec.rpartition("=")
        models[name or Path(path).stem] = predict(load_model(path), cohort)
    for spec in args.predictions:
        name, sep, path = spec.partition("=")
        if not sep:
            raise UsageError("--predictions for dca must be NAME=PATH")
        with open(path, encoding="utf-8") as fh:
            models[name] = import_predictions(fh, cohort, name)
    if not models:
        raise UsageError("dca needs at least one of --model, --predictions, --fib4-train")
    table = dca_curves(models, args.grid)
    summary = summarize_dca(table, args.ranges)
    if args.format == "json":
        _emit(args, _json_report(args, {
            "n": table.n, "prevalence": table.prevalence, "strategies": list(table.strategies),
            "thresholds": [float(t) for t in table.thresholds],
            "net_benefit": {s: [float(v) for v in table.net_benefit[s]] for s in table.strategies},
            "summary": summary.to_dict()}))
    else:
        _emit(args, _csv_report(args, ["threshold", "strategy", "net_benefit"], table.long_rows(),
                                extra=summary.to_dict()))


def cmd_stats(args):
    rows = univariable_table(_cohort(args.input))
    if args.format == "json":
        _emit(args, _json_report(args, [r.__dict__ for r in rows]))
    else:
        _emit(args, _csv_report(args, ASSOCIATION_COLUMNS, ([getattr(r, c) for c in ASSOCIATION_COLUMNS]
                                                            for r in rows)))


def cmd_ablate(args):
    rows = loo_ablation(_cohort(args.input), _training_config(args), args.k, args.seed, args.hidden,
                        args.threshold, args.features, args.workers)
    if args.format == "json":
        _emit(args, _json_report(args, [{"removed": r.removed, "mean_auc": r.mean_auc,
                                         "fold_aucs": list(r.fold_aucs), "k": r.k, "seed": r.seed}
                                        for r in rows]))
    else:
        _emit(args, _csv_report(args, ["removed", "mean_auc"] + [f"fold{i}" for i in range(args.k)],
                                ([r.removed or "none", r.mean_auc, *r.fold_aucs] for r in rows)))


def cmd_importance(args):
    rows = permutation_importance(load_model(args.model), _cohort(args.input), args.threshold, args.repeats,
                                  args.seed, args.workers)
    if args.format == "json":
        _emit(args, _json_report(args, [{"feature": r.feature, "mean_drop": r.mean_drop, "sd_drop": r.sd_drop,
                                         "repeats": r.repeats, "seed": r.seed} for r in rows]))
    else:
        _emit(args, _csv_report(args, ["feature", "mean_drop", "sd_drop", "repeats", "seed"],
                                ([r.feature, r.mean_drop, r.sd_drop, r.repeats, r.seed] for r in rows)))


def cmd_bootstrap(args):
    cohort = _cohort(args.input)
    scored, threshold = _scored(args, cohort)
    if args.statistic == "brier":
        _require_probabilities(scored, "the Brier score")
    args.effective_threshold = threshold
    res = bootstrap_ci(scored, args.statistic, args.B, args.seed, threshold, args.workers)
    if args.format == "json":
        _emit(args, _json_report(args, res.to_dict()))
    else:
        d = res.to_dict()
        _emit(args, _csv_report(args, list(d), [list(d.values())]))


def cmd_audit(args):
    cohort = _cohort(args.input)
    scored, _ = _scored(args, cohort)
    if not scored.is_probability:
        raise UsageError("the audit sweeps probability thresholds; use --model or --predictions")
    res = threshold_audit(scored, args.criterion, args.step)
    header = ["threshold", "sensitivity", "specificity", "youden", "f1"]
    best = {"criterion": res.criterion, "threshold": res.threshold, "value": res.value}
    if args.format == "json":
        best["sweep"] = [dict(zip(header, row)) for row in res.sweep]
        _emit(args, _json_report(args, best))
    else:
        _emit(args, _csv_report(args, header, res.sweep, extra=best))


def cmd_inspect(args):
    model = load_model(args.model)
    arch = model.architecture
    print(f"architecture: {arch.input_dim}-{'-'.join(map(str, arch.hidden_widths))}-{arch.output_dim}")
    print(f"features: {', '.join(model.features)}")
    print(f"parameters: {count_parameters(arch)}")
    print(f"serialized bytes: {os.path.getsize(args.model)}")
    print(f"final loss: {model.final_loss}")
    print("training: " + json.dumps(model.config.to_dict(), sort_keys=True))


COMMANDS = {
    "fib4": cmd_fib4, "synth": cmd_synth, "split": cmd_split, "train": cmd_train, "predict": cmd_predict,
    "eval": cmd_eval, "import-eval": cmd_eval, "calibrate": cmd_calibrate, "dca": cmd_dca,
    "stats": cmd_stats, "ablate": cmd_ablate, "importance": cmd_importance, "bootstrap": cmd_bootstrap,
    "audit": cmd_audit, "inspect": cmd_inspect,
}


def run(argv=None):
    """Parse ``argv``, run one subcommand and return the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mlenit {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"mlenit {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"mlenit {args.command}: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"mlenit {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


def main():
    sys.exit(run())
