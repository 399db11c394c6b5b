"""Reference predictors: constant mean, oracle-gender mean, and an
offset-calibrated external pose-network estimate."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyInput, SpecError, ValidationError
from .records import Gender

log = logging.getLogger(__name__)


def _mean(values: Iterable[float]) -> float:
    vals = [float(v) for v in values]
    if not vals:
        raise EmptyInput("mean of an empty split")
    return math.fsum(vals) / len(vals)


@dataclass(frozen=True)
class ConstantMean:
    mean_cm: float

    def predict(self, n_or_genders) -> np.ndarray:
        n = n_or_genders if isinstance(n_or_genders, int) else len(n_or_genders)
        return np.full(n, self.mean_cm)

    def to_dict(self) -> dict:
        return {"kind": "constant", "mean_cm": self.mean_cm}


@dataclass(frozen=True)
class GenderMean:
    female_cm: float
    male_cm: float
    overall_cm: float

    def height_for(self, gender: Gender) -> float:
        if gender is Gender.FEMALE:
            return self.female_cm
        if gender is Gender.MALE:
            return self.male_cm
        return self.overall_cm

    def predict(self, genders: Sequence[Gender]) -> np.ndarray:
        return np.array([self.height_for(Gender.parse(g)) for g in genders], dtype=np.float64)

    @property
    def means(self) -> dict[Gender, float]:
        return {Gender.FEMALE: self.female_cm, Gender.MALE: self.male_cm}

    def to_dict(self) -> dict:
        return {"kind": "gendermean", "female_cm": self.female_cm, "male_cm": self.male_cm,
                "overall_cm": self.overall_cm}


def fit_constant_mean(heights: Sequence[float]) -> ConstantMean:
    return ConstantMean(_mean(heights))


def fit_gender_mean(heights: Sequence[float], genders: Sequence[Gender]) -> GenderMean:
    """Per-gender train means; a gender with no rows falls back to the
    overall mean (with a warning)."""
    if len(heights) != len(genders):
        raise ValidationError(f"{len(heights)} heights but {len(genders)} genders")
    overall = _mean(heights)
    groups: dict[Gender, list[float]] = {Gender.FEMALE: [], Gender.MALE: []}
    for h, g in zip(heights, genders):
        g = Gender.parse(g)
        if g in groups:
            groups[g].append(h)
    means = {}
    for g, vals in groups.items():
        if vals:
            means[g] = _mean(vals)
        else:
            log.warning("no %s rows in the training split; using the overall mean %.3f cm", g.value, overall)
            means[g] = overall
    return GenderMean(means[Gender.FEMALE], means[Gender.MALE], overall)


def calibrate_posenet_offset(pred: Sequence[float], true: Sequence[float], method: str = "mean") -> float:
    """Constant c such that pred + c best fits true: mean residual (squared
    error) or median residual (absolute error)."""
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.size == 0:
        raise EmptyInput("no predictions to calibrate")
    if pred.shape != true.shape:
        raise ValidationError(f"shape mismatch {pred.shape} vs {true.shape}")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(true))):
        raise ValidationError("offset calibration needs finite values")
    if method == "mean":
        # exact rational residual sum, rounded once: the float nearest the true mean
        total = sum(map(Fraction, true.tolist())) - sum(map(Fraction, pred.tolist()))
        return float(total / pred.size)
    if method == "median":
        return float(np.median(true - pred))
    raise SpecError(f"unknown offset method {method!r}")


@dataclass(frozen=True)
class PoseNetOffset:
    offset_cm: float
    method: str = "mean"

    def predict(self, raw: Sequence[float]) -> np.ndarray:
        return np.asarray(raw, dtype=np.float64) + self.offset_cm

    def to_dict(self) -> dict:
        return {"kind": "posenet-offset", "offset_cm": self.offset_cm, "method": self.method}


def fit_posenet_offset(pred, true, method: str = "mean") -> PoseNetOffset:
    return PoseNetOffset(calibrate_posenet_offset(pred, true, method), method)


def read_raw_predictions(path: str | Path) -> dict[str, float]:
    """Two-column CSV (example_id, raw_height_cm) from an external estimator."""
    out: dict[str, float] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"example_id", "raw_height_cm"} <= set(reader.fieldnames):
            raise ValidationError(f"{path}: expected columns example_id, raw_height_cm")
        for row in reader:
            v = float(row["raw_height_cm"])
            if not math.isfinite(v):
                raise ValidationError(f"{path}: non-finite prediction for {row['example_id']}")
            out[row["example_id"]] = v
    return out


def baseline_from_dict(d: Mapping) -> ConstantMean | GenderMean | PoseNetOffset:
    kind = d["kind"]
    if kind == "constant":
        return ConstantMean(d["mean_cm"])
    if kind == "gendermean":
        return GenderMean(d["female_cm"], d["male_cm"], d["overall_cm"])
    if kind == "posenet-offset":
        return PoseNetOffset(d["offset_cm"], d.get("method", "mean"))
    raise SpecError(f"unknown baseline kind {kind!r}")
