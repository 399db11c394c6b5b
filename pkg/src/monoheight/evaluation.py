"""Metrics, dataset splits, the feature-by-architecture ablation grid and
the training-set-size curve."""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .baselines import GenderMean, fit_gender_mean
from .errors import DivergenceFault, EmptyInput, MonoHeightError, SpecError, TooSmall, ValidationError
from .records import AnnotatedExample, Gender
from .regressors import (
    FEATURE_SETS,
    HeightModel,
    RegressorSpec,
    TrainConfig,
    build_model,
    labels_of,
    make_batch,
    train_regressor,
)

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = tuple(float(t) for t in range(31))
GROUPS = ("all", "female", "male", "unknown")
ARCHS = ("linear", "shallow", "deep")


def fmt(x: float) -> str:
    """Fixed CSV float formatting, so reports are byte-stable."""
    return "nan" if math.isnan(x) else f"{x:.6f}"


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, float) else v for v in row])


# --- metrics ---------------------------------------------------------------------


def mae(preds: Sequence[float], labels: Sequence[float]) -> float:
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise EmptyInput("mae of nothing")
    if p.shape != y.shape:
        raise ValidationError(f"mae: {p.shape} predictions vs {y.shape} labels")
    return math.fsum(np.abs(p - y).tolist()) / p.size


def cumulative_error_histogram(
    preds: Sequence[float], labels: Sequence[float], thresholds: Sequence[float] | None = None
) -> list[tuple[float, float]]:
    """(t, fraction of |error| <= t) per threshold.

    With the default thresholds (0..30 cm) the grid is extended in 1 cm steps
    until it covers the largest error; explicit thresholds must already do so.
    """
    err = np.abs(np.asarray(preds, dtype=np.float64) - np.asarray(labels, dtype=np.float64))
    if err.size == 0:
        raise EmptyInput("histogram of nothing")
    if thresholds is None:
        ts = list(DEFAULT_THRESHOLDS)
        while ts[-1] < err.max():
            ts.append(ts[-1] + 1.0)
    else:
        ts = [float(t) for t in thresholds]
        if not ts or any(b <= a for a, b in zip(ts, ts[1:])):
            raise SpecError("histogram thresholds must be non-empty and strictly ascending")
        if ts[-1] < err.max():
            raise SpecError(f"last threshold {ts[-1]} is below the largest error {err.max():.3f}")
    sorted_err = np.sort(err)
    return [(t, float(np.searchsorted(sorted_err, t, side="right")) / err.size) for t in ts]


@dataclass
class EvalReport:
    groups: dict[str, tuple[int, float]]  # group -> (n, mae); empty groups carry nan
    histogram: list[tuple[float, float]]

    @property
    def mae_all(self) -> float:
        return self.groups["all"][1]

    def rows(self) -> list[tuple[str, int, float]]:
        return [(g, n, m) for g, (n, m) in self.groups.items()]

    def write(self, report_path: str | Path, histogram_path: str | Path | None = None) -> None:
        write_csv(report_path, ("group", "n", "mae"), self.rows())
        if histogram_path is not None:
            write_csv(histogram_path, ("threshold_cm", "fraction"), self.histogram)


def evaluate_predictions(
    preds: Sequence[float], labels: Sequence[float], genders: Sequence[Gender], thresholds=None
) -> EvalReport:
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    g = np.array([Gender.parse(x).value for x in genders])
    groups = {"all": (int(p.size), mae(p, y))}
    for name, gender in (("female", Gender.FEMALE), ("male", Gender.MALE), ("unknown", Gender.UNKNOWN)):
        sel = g == gender.value
        n = int(sel.sum())
        groups[name] = (n, mae(p[sel], y[sel]) if n else math.nan)
    return EvalReport(groups, cumulative_error_histogram(p, y, thresholds))


# --- splits ----------------------------------------------------------------------


class SplitMode(str, Enum):
    BY_EXAMPLE = "ByExample"
    BY_SUBJECT = "BySubject"


SPLIT_NAMES = ("train", "test", "val")


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.80, 0.15, 0.05)  # train, test, val
    mode: SplitMode = SplitMode.BY_SUBJECT
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        object.__setattr__(self, "mode", SplitMode(self.mode))
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise SpecError("split fractions are three non-negative numbers (train, test, val)")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise SpecError(f"split fractions sum to {sum(self.fractions)}, not 1")


@dataclass(frozen=True)
class Split:
    train: tuple[str, ...]
    test: tuple[str, ...]
    val: tuple[str, ...]

    def __getitem__(self, name: str) -> tuple[str, ...]:
        if name not in SPLIT_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {name: list(self[name]) for name in SPLIT_NAMES}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Split":
        return cls(*(tuple(d[name]) for name in SPLIT_NAMES))


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    """Integer sizes summing to n; ties in the remainder go to the earlier split."""
    raw = [n * f for f in fractions]
    sizes = [math.floor(r) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    # every split with a positive fraction gets at least one item
    for i, f in enumerate(fractions):
        if f > 0 and sizes[i] == 0:
            donor = max(range(len(sizes)), key=lambda k: sizes[k])
            sizes[donor] -= 1
            sizes[i] += 1
    return sizes


def split_dataset(examples: Sequence[AnnotatedExample], spec: SplitSpec = SplitSpec()) -> Split:
    """Seeded partition into train/test/val example ids."""
    n_splits = sum(1 for f in spec.fractions if f > 0)
    ids = sorted(e.example_id for e in examples)
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate example ids")
    rng = np.random.default_rng([spec.seed, 31])

    if spec.mode is SplitMode.BY_EXAMPLE:
        if len(ids) < n_splits:
            raise TooSmall(f"{len(ids)} examples for {n_splits} splits")
        perm = [ids[i] for i in rng.permutation(len(ids))]
        sizes = largest_remainder(len(ids), spec.fractions)
        bounds = np.cumsum([0, *sizes])
        parts = [tuple(sorted(perm[bounds[i] : bounds[i + 1]])) for i in range(3)]
        return Split(*parts)

    by_subject: dict[str, list[str]] = defaultdict(list)
    for e in examples:
        by_subject[e.subject_id].append(e.example_id)
    subjects = sorted(by_subject)
    if len(subjects) < n_splits:
        raise TooSmall(f"{len(subjects)} subjects for {n_splits} splits")
    subjects = [subjects[i] for i in rng.permutation(len(subjects))]
    # assign whole subjects by where their examples fall on the cumulative
    # target line, then make sure no split is left empty
    targets = np.cumsum(spec.fractions) * len(ids)
    parts: list[list[str]] = [[], [], []]
    done = 0
    for s in subjects:
        mid = done + len(by_subject[s]) / 2
        k = min(int(np.searchsorted(targets, mid, side="right")), 2)
        parts[k].append(s)
        done += len(by_subject[s])
    for k in range(3):
        if spec.fractions[k] > 0 and not parts[k]:
            donor = max(range(3), key=lambda i: len(parts[i]))
            parts[k].append(parts[donor].pop())
    return Split(*(tuple(sorted(x for s in p for x in by_subject[s])) for p in parts))


def check_split(split: Split, example_ids: Iterable[str]) -> None:
    """Pairwise disjoint and jointly complete."""
    sets = [set(split[n]) for n in SPLIT_NAMES]
    for i in range(3):
        for j in range(i + 1, 3):
            if sets[i] & sets[j]:
                raise ValidationError(f"{SPLIT_NAMES[i]} and {SPLIT_NAMES[j]} overlap")
    if set().union(*sets) != set(example_ids):
        raise ValidationError("split does not cover the example set exactly")


def select(examples: Sequence[AnnotatedExample], ids: Iterable[str]) -> list[AnnotatedExample]:
    """Examples with the given ids, in id order."""
    index = {e.example_id: e for e in examples}
    return [index[i] for i in sorted(ids)]


# --- experiments -----------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Shared settings for the grid and the size curve."""

    shallow: RegressorSpec = field(default_factory=lambda: RegressorSpec(kind="shallow"))
    deep: RegressorSpec = field(default_factory=lambda: RegressorSpec(kind="deep"))
    linear: RegressorSpec = field(default_factory=lambda: RegressorSpec(kind="linear"))
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def spec_for(self, arch: str, features: str) -> RegressorSpec:
        if arch not in ARCHS:
            raise SpecError(f"unknown architecture {arch!r}")
        return replace(getattr(self, arch), features=features, seed=self.seed)


def _annotate(exc: MonoHeightError, where: str) -> MonoHeightError:
    new = type(exc).__new__(type(exc))
    Exception.__init__(new, f"[{where}] {exc}")
    new.__dict__.update(exc.__dict__)
    return new


def fit_and_score(
    spec: RegressorSpec,
    train: Sequence[AnnotatedExample],
    val: Sequence[AnnotatedExample],
    test: Sequence[AnnotatedExample],
    train_config: TrainConfig,
) -> tuple[HeightModel, float]:
    train_b, val_b, test_b = make_batch(train), make_batch(val), make_batch(test)
    model = build_model(spec, train_b)
    train_regressor(model, (train_b, labels_of(train)), (val_b, labels_of(val)), train_config)
    return model, mae(model.predict(test_b), labels_of(test))


def run_ablation_grid(
    examples: Sequence[AnnotatedExample], split: Split, config: ExperimentConfig = ExperimentConfig()
) -> list[tuple[str, str, float]]:
    """Test MAE for every (feature set, architecture) cell, row-major."""
    train, val, test = (select(examples, split[n]) for n in ("train", "val", "test"))
    cells = []
    for features in FEATURE_SETS:
        for arch in ARCHS:
            where = f"{features}/{arch}"
            try:
                _, score = fit_and_score(config.spec_for(arch, features), train, val, test, config.train)
            except (MonoHeightError, DivergenceFault) as exc:
                raise _annotate(exc, where) from exc
            log.info("grid %s: %.4f", where, score)
            cells.append((features, arch, score))
    return cells


def write_grid(path, cells) -> None:
    write_csv(path, ("features", "arch", "mae"), cells)


@dataclass
class SizeCurve:
    points: list[tuple[int, str, float]]  # (size, gender, test mae)
    reference: dict[str, float]  # GenderMean test mae per gender

    def rows(self) -> list[tuple]:
        return [*self.points, *(("GenderMean", g, m) for g, m in self.reference.items())]

    def write(self, path) -> None:
        write_csv(path, ("size", "gender", "mae"), self.rows())


def nested_subsamples(ids: Sequence[str], sizes: Sequence[int], seed: int) -> list[list[str]]:
    """Prefixes of one seeded permutation, so smaller samples nest in larger."""
    perm = [sorted(ids)[i] for i in np.random.default_rng([seed, 37]).permutation(len(ids))]
    return [perm[:s] for s in sizes]


def dataset_size_curve(
    examples: Sequence[AnnotatedExample],
    split: Split,
    sizes: Sequence[int],
    config: ExperimentConfig = ExperimentConfig(),
    arch: str = "deep",
    features: str = "both",
) -> SizeCurve:
    """Gender-specific models trained on nested subsamples of the train
    split, scored per gender on the test split, next to GenderMean."""
    sizes = [int(s) for s in sizes]
    if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])) or sizes[0] < 1:
        raise SpecError("sizes must be positive and strictly ascending")
    if sizes[-1] > len(split.train):
        raise SpecError(f"size {sizes[-1]} exceeds the train split ({len(split.train)})")
    train_all = select(examples, split.train)
    val_all, test_all = select(examples, split.val), select(examples, split.test)
    ref_model: GenderMean = fit_gender_mean(labels_of(train_all), [e.gender for e in train_all])

    genders = (("female", Gender.FEMALE), ("male", Gender.MALE))
    reference = {}
    for name, g in genders:
        test_g = [e for e in test_all if e.gender is g]
        reference[name] = mae(np.full(len(test_g), ref_model.height_for(g)), labels_of(test_g)) if test_g else math.nan

    points = []
    index = {e.example_id: e for e in train_all}
    for size, ids in zip(sizes, nested_subsamples(split.train, sizes, config.seed)):
        sample = [index[i] for i in sorted(ids)]
        for name, g in genders:
            tr = [e for e in sample if e.gender is g]
            va = [e for e in val_all if e.gender is g]
            te = [e for e in test_all if e.gender is g]
            if len(tr) < 2 or not va or not te:
                log.warning("size %d, %s: too few rows to train (%d); skipped", size, name, len(tr))
                points.append((size, name, math.nan))
                continue
            try:
                _, score = fit_and_score(config.spec_for(arch, features), tr, va, te, config.train)
            except (MonoHeightError, DivergenceFault) as exc:
                raise _annotate(exc, f"size {size}/{name}") from exc
            log.info("curve size %d %s: %.4f (GenderMean %.4f)", size, name, score, reference[name])
            points.append((size, name, score))
    return SizeCurve(points, reference)


def crossover_size(curve: SizeCurve) -> dict[str, int | None]:
    """Per gender, the smallest size from which the learned model stays
    below the GenderMean reference for every larger size in the curve."""
    out: dict[str, int | None] = {}
    for gender, ref in curve.reference.items():
        pts = sorted((s, m) for s, g, m in curve.points if g == gender)
        best = None
        for s, m in reversed(pts):
            if not (m < ref):
                break
            best = s
        out[gender] = best
    return out
