"""``monoheight`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from . import evaluation as ev
from . import pipeline as pl
from .config import load_config
from .errors import DivergenceFault, MonoHeightError, StageFailure, ValidationError
from .records import read_examples, write_jsonl

EXIT_OK, EXIT_VALIDATION, EXIT_STAGE, EXIT_DIVERGENCE = 0, 2, 3, 4

log = logging.getLogger("monoheight")


def _out(args, name: str | None, default: str) -> Path:
    path = Path(name or default)
    if not path.is_absolute() and args.out_dir is not None:
        path = Path(args.out_dir) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _overrides(args) -> dict:
    run = {}
    if args.seed is not None:
        run["seed"] = args.seed
    if args.threads is not None:
        run["threads"] = args.threads
    return {"run": run} if run else {}


def _context(args) -> pl.Context:
    return pl.Context(load_config(args.config, _overrides(args)), args.force)


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# --- subcommands ---------------------------------------------------------------------


def cmd_synth(args, ctx: pl.Context) -> None:
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.what == "population":
        paths = pl.stage_synth_population(ctx, out_dir, args.preset, args.n)
    else:
        paths = pl.stage_synth_identities(ctx, out_dir, args.preset or "imdb-like")
    for p in paths.values():
        print(p)


def cmd_propagate(args, ctx):
    out = _out(args, args.out, "assignments.jsonl")
    assignments = pl.stage_propagate(ctx, Path(args.detections), Path(args.subjects), out, args.tau)
    n_pairs = sum(len(a.pairs) for a in assignments)
    print(f"{len(assignments)} images, {n_pairs} labels propagated -> {out}")


def cmd_audit(args, ctx):
    out = _out(args, args.out, "audit.csv")
    r = pl.stage_audit(ctx, Path(args.assignments), Path(args.truth), out)
    print(f"precision {r.precision:.4f} recall {r.recall:.4f} -> {out}")


def cmd_preprocess(args, ctx):
    out = _out(args, args.out, "examples.jsonl")
    report = _out(args, args.report, "rejections.csv")
    detections = Path(args.detections) if args.detections else None
    exs = pl.stage_preprocess(ctx, Path(args.assignments), Path(args.poses), Path(args.subjects), detections, out, report)
    print(f"{len(exs)} examples -> {out}")


def cmd_split(args, ctx):
    out = _out(args, args.out, "split.json")
    split = pl.stage_split(ctx, Path(args.examples), out, args.mode)
    if args.write_sets:
        exs = read_examples(args.examples)
        for name in ev.SPLIT_NAMES:
            path = out.with_name(f"{name}.jsonl")
            write_jsonl(path, ev.select(exs, split[name]))
            ctx.wrote(path, "split", split=name)
    print(" ".join(f"{n}={len(split[n])}" for n in ev.SPLIT_NAMES) + f" -> {out}")


def _train_val(args, ctx):
    if args.train and args.val:
        return read_examples(ctx.need(args.train)), read_examples(ctx.need(args.val))
    if args.examples and args.splits:
        ex, sp = Path(args.examples), Path(args.splits)
        return pl.split_examples(ctx, ex, sp, "train"), pl.split_examples(ctx, ex, sp, "val")
    raise ValidationError("train needs --train and --val, or --examples and --splits")


def cmd_train(args, ctx):
    train, val = _train_val(args, ctx)
    out = _out(args, args.out, "model.ckpt")
    result = pl.stage_train(ctx, train, val, out, args.arch, args.features, args.gender)
    best = result.history[result.best_epoch]
    print(f"best epoch {result.best_epoch}: val MAE {best['val_mae']:.4f} cm -> {out}")


def cmd_predict(args, ctx):
    out = _out(args, args.out, "predictions.csv")
    preds = pl.stage_predict(ctx, Path(args.model), Path(args.examples), out)
    print(f"{len(preds)} predictions -> {out}")


def _print_report(report: ev.EvalReport, out: Path) -> None:
    for group, n, m in report.rows():
        if n:
            print(f"{group:8s} n={n:6d}  MAE {m:.4f} cm")
    print(f"-> {out}")


def cmd_evaluate(args, ctx):
    out = _out(args, args.out, "report.csv")
    hist = _out(args, args.histogram, "histogram.csv")
    report = pl.stage_evaluate(ctx, Path(args.model), Path(args.examples), Path(args.splits), out, args.split, hist)
    _print_report(report, out)


def cmd_baseline(args, ctx):
    out = _out(args, args.out, f"baseline_{args.kind}.csv")
    raw = Path(args.raw) if args.raw else None
    report = pl.stage_baseline(ctx, args.kind, Path(args.examples), Path(args.splits), out, raw, args.split, args.method)
    _print_report(report, out)


def cmd_ablation(args, ctx):
    out = _out(args, args.out, "grid.csv")
    for features, arch, m in pl.stage_ablation(ctx, Path(args.examples), Path(args.splits), out):
        print(f"{features:5s} {arch:8s} {m:.4f}")
    print(f"-> {out}")


def cmd_curve(args, ctx):
    out = _out(args, args.out, "curve.csv")
    curve = pl.stage_curve(ctx, Path(args.examples), Path(args.splits), out, args.sizes)
    print(f"crossover: {ev.crossover_size(curve)} -> {out}")


def cmd_run(args, ctx):
    out_dir = Path(args.out_dir or "run")
    manifest = pl.run_pipeline(args.config, out_dir, _overrides(args), args.force,
                               progress=lambda s: print(f"[{s}]", flush=True))
    print(f"config {manifest['config_hash']}; manifest -> {out_dir / 'manifest.json'}")


# --- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="global seed (overrides run.seed)")
    common.add_argument("--threads", type=int, help="BLAS thread cap (overrides run.threads)")
    common.add_argument("--out-dir", help="directory for outputs; relative --out paths resolve against it")
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--force", action="store_true", help="accept inputs produced under another config hash")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="monoheight", description="Single-image height estimation toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        s = sub.add_parser(name, help=help_, parents=[common])
        s.set_defaults(func=fn)
        return s

    s = add("synth", cmd_synth, "generate a synthetic population or identity benchmark")
    s.add_argument("what", choices=("population", "identities"))
    s.add_argument("--preset", help="population or identity preset name")
    s.add_argument("--n", type=int, help="number of images (population)")

    s = add("propagate", cmd_propagate, "assign subject labels to detections")
    s.add_argument("--detections", required=True)
    s.add_argument("--subjects", required=True)
    s.add_argument("--tau", type=float)
    s.add_argument("--out")

    s = add("audit", cmd_audit, "score assignments against a truth table")
    s.add_argument("--assignments", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--out")

    s = add("preprocess", cmd_preprocess, "build annotated examples from assignments and poses")
    s.add_argument("--assignments", required=True)
    s.add_argument("--poses", required=True)
    s.add_argument("--subjects", required=True)
    s.add_argument("--detections", help="detection sets, for image sizes")
    s.add_argument("--out")
    s.add_argument("--report", help="rejection counts CSV")

    s = add("split", cmd_split, "partition examples into train/test/val")
    s.add_argument("--examples", required=True)
    s.add_argument("--mode", choices=[m.value for m in ev.SplitMode])
    s.add_argument("--write-sets", action="store_true", help="also write train/test/val jsonl files")
    s.add_argument("--out")

    s = add("train", cmd_train, "train a height regressor")
    s.add_argument("--arch", choices=("linear", "shallow", "deep"))
    s.add_argument("--features", choices=("body", "face", "both"))
    s.add_argument("--gender", choices=("all", "female", "male"))
    s.add_argument("--train", help="training examples (jsonl)")
    s.add_argument("--val", help="validation examples (jsonl)")
    s.add_argument("--examples", help="all examples, used with --splits")
    s.add_argument("--splits", help="split.json from the split command")
    s.add_argument("--out")

    s = add("predict", cmd_predict, "predict heights for examples")
    s.add_argument("--model", required=True)
    s.add_argument("--examples", required=True)
    s.add_argument("--out")

    for name, fn, help_ in (("evaluate", cmd_evaluate, "MAE report and cumulative error histogram"),
                            ("baseline", cmd_baseline, "fit and score a reference predictor")):
        s = add(name, fn, help_)
        if name == "evaluate":
            s.add_argument("--model", required=True)
            s.add_argument("--histogram")
        else:
            s.add_argument("--kind", required=True, choices=("constant", "gendermean", "posenet-offset"))
            s.add_argument("--raw", help="CSV of example_id, raw_height_cm (posenet-offset)")
            s.add_argument("--method", choices=("mean", "median"))
        s.add_argument("--examples", required=True)
        s.add_argument("--splits", required=True)
        s.add_argument("--split", default="test", choices=ev.SPLIT_NAMES)
        s.add_argument("--out")

    s = add("ablation", cmd_ablation, "feature-set by architecture MAE grid")
    s.add_argument("--examples", required=True)
    s.add_argument("--splits", required=True)
    s.add_argument("--out")

    s = add("curve", cmd_curve, "MAE against training-set size, per gender")
    s.add_argument("--examples", required=True)
    s.add_argument("--splits", required=True)
    s.add_argument("--sizes", type=_csv_ints)
    s.add_argument("--out")

    add("run", cmd_run, "run the configured pipeline end to end")
    return p


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageFailure):
        exc = exc.cause
    if isinstance(exc, DivergenceFault):
        return EXIT_DIVERGENCE
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    return EXIT_STAGE


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = _context(args)
        with threadpool_limits(limits=int(ctx.cfg["run"]["threads"])):
            args.func(args, ctx)
    except (MonoHeightError, OSError) as exc:
        print(f"monoheight {args.command}: error: {exc}", file=sys.stderr)
        return exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
