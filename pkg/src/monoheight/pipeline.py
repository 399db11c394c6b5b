"""Stage implementations shared by the CLI subcommands and ``run_pipeline``.

Each stage reads and writes files; every output gets a ``.meta.json``
sidecar carrying the config hash, and inputs with a foreign hash are
refused unless forced.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import platform
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import baselines as bl
from . import evaluation as ev
from . import regressors as rg
from . import synth
from .assignment import Assignment, audit_assignments, propagate_labels
from .config import canonical_json, check_sidecar, config_hash, load_config, stage_seed, write_sidecar
from .errors import ConfigHashMismatch, InputMissing, SpecError, StageFailure, ValidationError
from .nn import kernels
from .preprocess import PreprocessConfig, build_examples
from .records import (
    AnnotatedExample,
    Gender,
    build_subject_store,
    iter_jsonl,
    read_detection_sets,
    read_examples,
    read_poses,
    read_subjects,
    write_jsonl,
)

log = logging.getLogger(__name__)

QUARANTINE_SUFFIX = ".quarantine"


@dataclass
class Context:
    cfg: dict
    force: bool = False

    @property
    def hash(self) -> str:
        return config_hash(self.cfg)

    def seed(self, stage: str) -> int:
        return stage_seed(self.cfg["run"]["seed"], stage)

    def need(self, path: str | Path) -> Path:
        path = Path(path)
        if not path.exists():
            raise InputMissing(f"input file not found: {path}")
        check_sidecar(path, self.hash, self.force)
        return path

    def wrote(self, path: str | Path, producer: str, **extra) -> Path:
        write_sidecar(path, self.hash, producer, extra)
        return Path(path)


# --- config -> objects -------------------------------------------------------------


def population_config(cfg: Mapping, seed: int) -> synth.PopulationConfig:
    section = dict(cfg["synth"])
    preset = section.pop("preset", "default")
    if preset not in synth.PRESETS:
        raise SpecError(f"unknown population preset {preset!r}; choose from {sorted(synth.PRESETS)}")
    section.pop("seed", None)
    base = synth.PRESETS[preset].to_dict()
    base.update(section)
    base["seed"] = seed
    return synth.PopulationConfig.from_dict(base)


def preprocess_config(cfg: Mapping) -> PreprocessConfig:
    p = cfg["preprocess"]
    return PreprocessConfig(float(p["margin"]), float(p["min_crop_px"]), tuple(p["required_joints"]), float(p["head_gate"]))


def split_spec(cfg: Mapping, seed: int) -> ev.SplitSpec:
    e = cfg["evaluation"]
    return ev.SplitSpec(tuple(e["fractions"]), ev.SplitMode(e["mode"]), seed)


def regressor_spec(cfg: Mapping, arch: str, features: str, seed: int) -> rg.RegressorSpec:
    r = cfg["regressors"]
    stream = rg.StreamSpec(kind="mlp", widths=tuple(r["stream_widths"]))
    return rg.RegressorSpec(
        kind=arch,
        features=features,
        widths=tuple(r["widths"]),
        face_stream=stream,
        body_stream=stream,
        fusion_width=int(r["fusion_width"]),
        ridge=float(r["ridge"]),
        seed=seed,
    )


def train_config(cfg: Mapping, seed: int) -> rg.TrainConfig:
    return rg.TrainConfig(**cfg["training"], seed=seed)


def experiment_config(cfg: Mapping, seed: int) -> ev.ExperimentConfig:
    feats = cfg["regressors"]["features"]
    return ev.ExperimentConfig(
        shallow=regressor_spec(cfg, "shallow", feats, seed),
        deep=regressor_spec(cfg, "deep", feats, seed),
        linear=regressor_spec(cfg, "linear", feats, seed),
        train=train_config(cfg, seed),
        seed=seed,
    )


# --- stages --------------------------------------------------------------------------


def stage_synth_population(
    ctx: Context, out_dir: Path, preset: str | None = None, n: int | None = None
) -> dict[str, Path]:
    """Command-line ``preset``/``n`` are recorded in the sidecars and leave
    the config hash unchanged."""
    section = dict(ctx.cfg["synth"])
    if preset is not None:
        section["preset"] = preset
    if n is not None:
        section["n"] = n
    pcfg = population_config({"synth": section}, ctx.seed("synth"))
    pop = synth.generate_population(pcfg)
    out = {
        "subjects": out_dir / "subjects.jsonl",
        "detections": out_dir / "detections.jsonl",
        "poses": out_dir / "poses.jsonl",
        "truth": out_dir / "truth.jsonl",
        "posenet_raw": out_dir / "posenet_raw.csv",
    }
    write_jsonl(out["subjects"], pop.subjects)
    write_jsonl(out["detections"], pop.detection_sets)
    write_jsonl(out["poses"], pop.poses)
    write_jsonl(out["truth"], ({"image_id": k, **v} for k, v in pop.image_truth.items()))
    labeled = [(ds.image_id, ds.candidate_subjects[0]) for ds in pop.detection_sets]
    raw = synth.posenet_proxy_heights([pop.truth[s].true_cm for _, s in labeled], ctx.seed("posenet"))
    ev.write_csv(out["posenet_raw"], ("example_id", "raw_height_cm"),
                 ((f"{i}/{s}", float(h)) for (i, s), h in zip(labeled, raw)))
    for p in out.values():
        ctx.wrote(p, "synth population", preset=section["preset"], n=pcfg.n)
    return out


def stage_synth_identities(ctx: Context, out_dir: Path, preset: str = "imdb-like", seed: int | None = None) -> dict[str, Path]:
    if preset not in synth.IDENTITY_PRESETS:
        raise SpecError(f"unknown identity preset {preset!r}; choose from {sorted(synth.IDENTITY_PRESETS)}")
    icfg = replace(synth.IDENTITY_PRESETS[preset], seed=ctx.seed("identities") if seed is None else seed)
    bench = synth.generate_identity_benchmark(icfg)
    out = {"subjects": out_dir / "subjects.jsonl", "detections": out_dir / "detections.jsonl", "truth": out_dir / "truth.jsonl"}
    write_jsonl(out["subjects"], bench.subjects)
    write_jsonl(out["detections"], bench.detection_sets)
    write_jsonl(out["truth"], ({"image_id": k, **v} for k, v in bench.truth.items()))
    for p in out.values():
        ctx.wrote(p, "synth identities", preset=preset)
    return out


def read_truth(path: Path) -> dict[str, dict]:
    return {d["image_id"]: {"labels": d["labels"], "detections": d["detections"]} for d in iter_jsonl(path)}


def stage_propagate(
    ctx: Context, detections: Path, subjects: Path, out: Path, tau: float | None = None
) -> list[Assignment]:
    tau = ctx.cfg["assignment"]["tau"] if tau is None else tau
    store = build_subject_store(read_subjects(ctx.need(subjects)))
    assignments = [propagate_labels(ds, store, tau) for ds in read_detection_sets(ctx.need(detections))]
    write_jsonl(out, assignments)
    ctx.wrote(out, "propagate", tau=tau)
    return assignments


def read_assignments(path: Path) -> list[Assignment]:
    return [Assignment.from_dict(d) for d in iter_jsonl(path)]


def stage_audit(ctx: Context, assignments: Path, truth: Path, out: Path):
    result = audit_assignments(read_assignments(ctx.need(assignments)), read_truth(ctx.need(truth)))
    row = result.as_row()
    ev.write_csv(out, list(row), [list(row.values())])
    ctx.wrote(out, "audit")
    return result


def stage_preprocess(
    ctx: Context, assignments: Path, poses: Path, subjects: Path, detections: Path | None, out: Path, report: Path
) -> list[AnnotatedExample]:
    store = build_subject_store(read_subjects(ctx.need(subjects)))
    sizes = None
    if detections is not None:
        sizes = {ds.image_id: ds.image_size for ds in read_detection_sets(ctx.need(detections))}
    examples, rep = build_examples(
        read_assignments(ctx.need(assignments)), read_poses(ctx.need(poses)), store, preprocess_config(ctx.cfg), sizes
    )
    write_jsonl(out, examples)
    ev.write_csv(report, ("reason", "count"), ((r["reason"], r["count"]) for r in rep.rows()))
    ctx.wrote(out, "preprocess", n_candidates=rep.n_candidates, n_kept=rep.n_kept)
    ctx.wrote(report, "preprocess")
    return examples


def stage_split(ctx: Context, examples: Path, out: Path, mode: str | None = None) -> ev.Split:
    exs = read_examples(ctx.need(examples))
    spec = split_spec(ctx.cfg, ctx.seed("split"))
    if mode is not None:
        spec = replace(spec, mode=ev.SplitMode(mode))
    split = ev.split_dataset(exs, spec)
    Path(out).write_bytes(canonical_json(split.to_dict()) + b"\n")
    ctx.wrote(out, "split", mode=spec.mode.value)
    return split


def read_split(path: Path) -> ev.Split:
    return ev.Split.from_dict(json.loads(Path(path).read_text()))


def _gender_rows(examples: Sequence[AnnotatedExample], gender: str) -> list[AnnotatedExample]:
    if gender == "all":
        return list(examples)
    g = Gender.parse(gender)
    return [e for e in examples if e.gender is g]


def stage_train(
    ctx: Context,
    train: Sequence[AnnotatedExample],
    val: Sequence[AnnotatedExample],
    out: Path,
    arch: str | None = None,
    features: str | None = None,
    gender: str | None = None,
) -> rg.TrainResult:
    r = ctx.cfg["regressors"]
    arch, features, gender = arch or r["arch"], features or r["features"], gender or r["gender"]
    train, val = _gender_rows(train, gender), _gender_rows(val, gender)
    if not train or not val:
        raise ValidationError(f"no {gender} rows in the train or validation set")
    seed = ctx.seed("train")
    spec = regressor_spec(ctx.cfg, arch, features, seed)
    train_b, val_b = rg.make_batch(train), rg.make_batch(val)
    model = rg.build_model(spec, train_b)
    result = rg.train_regressor(model, (train_b, rg.labels_of(train)), (val_b, rg.labels_of(val)), train_config(ctx.cfg, seed))
    rg.save_model(out, model, ctx.hash)
    ctx.wrote(out, "train", arch=arch, features=features, gender=gender, best_epoch=result.best_epoch)
    history = Path(str(out) + ".history.csv")
    ev.write_csv(history, ("epoch", "train_loss", "val_mae"),
                 ((h["epoch"], float(h["train_loss"]), float(h["val_mae"])) for h in result.history))
    ctx.wrote(history, "train")
    return result


def split_examples(ctx: Context, examples: Path, split: Path, name: str) -> list[AnnotatedExample]:
    return ev.select(read_examples(ctx.need(examples)), read_split(ctx.need(split))[name])


def load_model_checked(ctx: Context, path: Path) -> rg.HeightModel:
    model, meta = rg.load_model(ctx.need(path))
    if meta.get("config_hash") not in ("", ctx.hash) and not ctx.force:
        raise ConfigHashMismatch(f"{path} was trained under config {meta.get('config_hash')} (use --force)")
    return model


def stage_predict(ctx: Context, model_path: Path, examples: Path, out: Path, ids: Sequence[str] | None = None) -> np.ndarray:
    model = load_model_checked(ctx, model_path)
    exs = read_examples(ctx.need(examples))
    if ids is not None:
        exs = ev.select(exs, ids)
    preds = model.predict(rg.make_batch(exs))
    ev.write_csv(out, ("example_id", "height_cm", "label_cm", "gender"),
                 ((e.example_id, float(p), float(e.height_cm), e.gender.value) for e, p in zip(exs, preds)))
    ctx.wrote(out, "predict")
    return preds


def stage_evaluate(
    ctx: Context, model_path: Path, examples: Path, split: Path, out: Path, which: str = "test",
    histogram: Path | None = None,
) -> ev.EvalReport:
    model = load_model_checked(ctx, model_path)
    exs = ev.select(read_examples(ctx.need(examples)), read_split(ctx.need(split))[which])
    if not exs:
        raise ValidationError(f"the {which} split is empty")
    preds = model.predict(rg.make_batch(exs))
    report = ev.evaluate_predictions(preds, rg.labels_of(exs), [e.gender for e in exs])
    report.write(out, histogram)
    ctx.wrote(out, "evaluate", split=which)
    if histogram is not None:
        ctx.wrote(histogram, "evaluate", split=which)
    return report


def stage_baseline(
    ctx: Context, kind: str, examples: Path, split: Path, out: Path, raw: Path | None = None, which: str = "test",
    method: str | None = None,
) -> ev.EvalReport:
    """Fit a reference predictor on the train split, score it on ``which``.
    Writes the report CSV and the fitted parameters next to it as JSON."""
    exs = read_examples(ctx.need(examples))
    sp = read_split(ctx.need(split))
    train, test = ev.select(exs, sp.train), ev.select(exs, sp[which])
    if not test:
        raise ValidationError(f"the {which} split is empty")
    y_train = rg.labels_of(train)
    if kind == "constant":
        model = bl.fit_constant_mean(y_train)
        preds = model.predict(len(test))
    elif kind == "gendermean":
        model = bl.fit_gender_mean(y_train, [e.gender for e in train])
        preds = model.predict([e.gender for e in test])
    elif kind == "posenet-offset":
        if raw is None:
            raise InputMissing("posenet-offset needs --raw with (example_id, raw_height_cm) rows")
        raw_by_id = bl.read_raw_predictions(ctx.need(raw))
        missing = [e.example_id for e in train + test if e.example_id not in raw_by_id]
        if missing:
            raise ValidationError(f"{len(missing)} examples lack a raw prediction, e.g. {missing[0]!r}")
        model = bl.fit_posenet_offset([raw_by_id[e.example_id] for e in train], y_train,
                                      method or ctx.cfg["baselines"]["offset_method"])
        preds = model.predict([raw_by_id[e.example_id] for e in test])
    else:
        raise SpecError(f"unknown baseline kind {kind!r}")
    report = ev.evaluate_predictions(preds, rg.labels_of(test), [e.gender for e in test])
    report.write(out)
    params = Path(str(out) + ".params.json")
    params.write_bytes(canonical_json(model.to_dict()) + b"\n")
    ctx.wrote(out, "baseline", kind=kind, split=which)
    return report


def stage_ablation(ctx: Context, examples: Path, split: Path, out: Path) -> list:
    exs = read_examples(ctx.need(examples))
    cells = ev.run_ablation_grid(exs, read_split(ctx.need(split)), experiment_config(ctx.cfg, ctx.seed("ablation")))
    ev.write_grid(out, cells)
    ctx.wrote(out, "ablation")
    return cells


def stage_curve(ctx: Context, examples: Path, split: Path, out: Path, sizes: Sequence[int] | None = None) -> ev.SizeCurve:
    exs = read_examples(ctx.need(examples))
    sizes = list(sizes or ctx.cfg["evaluation"]["curve_sizes"])
    curve = ev.dataset_size_curve(exs, read_split(ctx.need(split)), sizes, experiment_config(ctx.cfg, ctx.seed("curve")))
    curve.write(out)
    ctx.wrote(out, "curve", crossover=ev.crossover_size(curve))
    return curve


# --- whole pipeline ------------------------------------------------------------------


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions() -> dict[str, str]:
    import numba

    return {
        "monoheight": __version__,
        "numpy": np.__version__,
        "numba": numba.__version__,
        "python": platform.python_version(),
        "kernel_backend": kernels.BACKEND,
    }


STAGE_FILES: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    # stage -> (inputs, outputs), relative to the run directory
    "synth": ((), ("subjects.jsonl", "detections.jsonl", "poses.jsonl", "truth.jsonl", "posenet_raw.csv")),
    "propagate": (("detections.jsonl", "subjects.jsonl", "truth.jsonl"), ("assignments.jsonl", "audit.csv")),
    "preprocess": (("assignments.jsonl", "poses.jsonl", "subjects.jsonl", "detections.jsonl"),
                   ("examples.jsonl", "rejections.csv")),
    "split": (("examples.jsonl",), ("split.json",)),
    "train": (("examples.jsonl", "split.json"), ("model.ckpt", "model.ckpt.history.csv")),
    "evaluate": (("model.ckpt", "examples.jsonl", "split.json", "posenet_raw.csv"),
                 ("predictions.csv", "report.csv", "histogram.csv", "baseline_constant.csv",
                  "baseline_gendermean.csv", "baseline_posenet.csv")),
    "ablation": (("examples.jsonl", "split.json"), ("grid.csv",)),
    "curve": (("examples.jsonl", "split.json"), ("curve.csv",)),
}


def _run_stage(ctx: Context, stage: str, d: Path) -> None:
    if stage == "synth":
        stage_synth_population(ctx, d)
    elif stage == "propagate":
        stage_propagate(ctx, d / "detections.jsonl", d / "subjects.jsonl", d / "assignments.jsonl")
        stage_audit(ctx, d / "assignments.jsonl", d / "truth.jsonl", d / "audit.csv")
    elif stage == "preprocess":
        stage_preprocess(ctx, d / "assignments.jsonl", d / "poses.jsonl", d / "subjects.jsonl",
                         d / "detections.jsonl", d / "examples.jsonl", d / "rejections.csv")
    elif stage == "split":
        stage_split(ctx, d / "examples.jsonl", d / "split.json")
    elif stage == "train":
        train = split_examples(ctx, d / "examples.jsonl", d / "split.json", "train")
        val = split_examples(ctx, d / "examples.jsonl", d / "split.json", "val")
        stage_train(ctx, train, val, d / "model.ckpt")
    elif stage == "evaluate":
        ids = read_split(d / "split.json").test
        stage_predict(ctx, d / "model.ckpt", d / "examples.jsonl", d / "predictions.csv", ids)
        stage_evaluate(ctx, d / "model.ckpt", d / "examples.jsonl", d / "split.json", d / "report.csv",
                       histogram=d / "histogram.csv")
        for kind, name in (("constant", "constant"), ("gendermean", "gendermean"), ("posenet-offset", "posenet")):
            stage_baseline(ctx, kind, d / "examples.jsonl", d / "split.json", d / f"baseline_{name}.csv",
                           raw=d / "posenet_raw.csv")
    elif stage == "ablation":
        stage_ablation(ctx, d / "examples.jsonl", d / "split.json", d / "grid.csv")
    elif stage == "curve":
        stage_curve(ctx, d / "examples.jsonl", d / "split.json", d / "curve.csv")
    else:
        raise SpecError(f"unknown stage {stage!r}")


def quarantine(paths: Sequence[Path]) -> list[Path]:
    moved = []
    for p in paths:
        for f in (p, Path(str(p) + ".meta.json")):
            if f.exists():
                target = Path(str(f) + QUARANTINE_SUFFIX)
                os.replace(f, target)
                moved.append(target)
    return moved


def run_pipeline(
    config_path: str | Path | None,
    out_dir: str | Path,
    overrides: Mapping | None = None,
    force: bool = False,
    progress: Callable[[str], None] | None = None,
) -> dict:
    """Run the configured stages in order and write ``manifest.json``.

    A failing stage has its partial outputs renamed with a quarantine suffix
    and is reported as :class:`StageFailure`.
    """
    cfg = load_config(config_path, overrides)
    ctx = Context(cfg, force)
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    stages = list(cfg["run"]["stages"])

    manifest = {
        "config_hash": ctx.hash,
        "config": cfg,
        "seeds": {s: ctx.seed(s) for s in stages},
        "versions": versions(),
        "stages": [],
    }
    with threadpool_limits(limits=int(cfg["run"]["threads"])):
        for stage in stages:
            inputs, outputs = STAGE_FILES[stage]
            if progress:
                progress(stage)
            try:
                _run_stage(ctx, stage, d)
            except Exception as exc:
                quarantine([d / o for o in outputs])
                raise StageFailure(stage, exc) from exc
            manifest["stages"].append({
                "name": stage,
                "inputs": {i: file_digest(d / i) for i in inputs if (d / i).exists()},
                "outputs": {o: file_digest(d / o) for o in outputs},
            })
    (d / "manifest.json").write_bytes(json.dumps(manifest, sort_keys=True, indent=2).encode() + b"\n")
    return manifest
