"""Domain records shared by every stage, plus their JSON-lines serialization.

All records are frozen dataclasses. Vector fields are stored as read-only
float64 arrays, so records can be shared between readers without copying.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    AmbiguousUnit,
    DescriptorDimMismatch,
    HeightOutOfRange,
    ValidationError,
)

# 18-joint COCO layout emitted by multi-person 2D pose estimators.
JOINT_NAMES = (
    "nose",
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_eye",
    "l_eye",
    "r_ear",
    "l_ear",
)
N_JOINTS = len(JOINT_NAMES)
JOINT = {name: i for i, name in enumerate(JOINT_NAMES)}

HEIGHT_RANGE_CM = (100.0, 250.0)


class Gender(str, Enum):
    FEMALE = "Female"
    MALE = "Male"
    UNKNOWN = "Unknown"

    @classmethod
    def parse(cls, value: Any) -> "Gender":
        if value is None:
            return cls.UNKNOWN
        if isinstance(value, Gender):
            return value
        text = str(value).strip().lower()
        for g in cls:
            if text in (g.value.lower(), g.value[0].lower()):
                return g
        raise ValidationError(f"unknown gender {value!r}")


def _frozen_vector(values: Any) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    arr.setflags(write=False)
    return arr


def _bbox(values: Sequence[float]) -> tuple[float, float, float, float]:
    if len(values) != 4:
        raise ValidationError(f"bbox needs 4 numbers, got {len(values)}")
    return tuple(float(v) for v in values)  # type: ignore[return-value]


def _floats(arr: np.ndarray) -> list[float]:
    return [float(v) for v in arr]


@dataclass(frozen=True, eq=False)
class Subject:
    id: str
    height_cm: float
    gender: Gender
    descriptor: np.ndarray

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "height_cm": self.height_cm,
            "gender": self.gender.value,
            "descriptor": _floats(self.descriptor),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Subject":
        return validate_subject(d)


@dataclass(frozen=True, eq=False)
class Detection:
    """A face detection. ``features`` is the regression feature vector; when
    absent the matching descriptor doubles as the facial feature vector."""

    bbox: tuple[float, float, float, float]
    descriptor: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "bbox", _bbox(self.bbox))
        object.__setattr__(self, "descriptor", _frozen_vector(self.descriptor))
        if self.features is not None:
            object.__setattr__(self, "features", _frozen_vector(self.features))
        if self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise ValidationError(f"detection bbox must have w, h > 0: {self.bbox}")

    @property
    def center(self) -> tuple[float, float]:
        x, y, w, h = self.bbox
        return x + w / 2.0, y + h / 2.0

    def to_dict(self) -> dict:
        d = {"bbox": list(self.bbox), "descriptor": _floats(self.descriptor)}
        if self.features is not None:
            d["features"] = _floats(self.features)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        return cls(d["bbox"], d["descriptor"], d.get("features"))


@dataclass(frozen=True, eq=False)
class DetectionSet:
    image_id: str
    detections: tuple[Detection, ...]
    candidate_subjects: tuple[str, ...]
    image_size: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        object.__setattr__(self, "candidate_subjects", tuple(self.candidate_subjects))
        object.__setattr__(self, "image_size", tuple(float(v) for v in self.image_size))

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "detections": [det.to_dict() for det in self.detections],
            "candidate_subjects": list(self.candidate_subjects),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionSet":
        return cls(
            d["image_id"],
            tuple(Detection.from_dict(x) for x in d["detections"]),
            tuple(d["candidate_subjects"]),
            tuple(d["image_size"]),
        )


@dataclass(frozen=True, eq=False)
class PoseRecord:
    """Per-image 2D poses; each person is an (N_JOINTS, 3) array of
    (x, y, confidence). Confidence 0 marks a missing joint."""

    image_id: str
    persons: tuple[np.ndarray, ...]

    def __post_init__(self):
        persons = []
        for p in self.persons:
            arr = np.array(p, dtype=np.float64)
            if arr.shape != (N_JOINTS, 3):
                raise ValidationError(f"person must be ({N_JOINTS}, 3), got {arr.shape}")
            conf = arr[:, 2]
            if np.any(conf < 0) or np.any(conf > 1):
                raise ValidationError("joint confidence outside [0, 1]")
            arr.setflags(write=False)
            persons.append(arr)
        object.__setattr__(self, "persons", tuple(persons))

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "persons": [[_floats(j) for j in p] for p in self.persons],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PoseRecord":
        return cls(d["image_id"], tuple(d["persons"]))


@dataclass(frozen=True, eq=False)
class AnnotatedExample:
    subject_id: str
    image_id: str
    body_crop: tuple[float, float, float, float]
    face_crop: tuple[float, float, float, float]
    keypoints_norm: np.ndarray
    visibility: np.ndarray
    face_features: np.ndarray
    height_cm: float
    gender: Gender = Gender.UNKNOWN

    def __post_init__(self):
        object.__setattr__(self, "body_crop", _bbox(self.body_crop))
        object.__setattr__(self, "face_crop", _bbox(self.face_crop))
        object.__setattr__(self, "keypoints_norm", _frozen_vector(self.keypoints_norm))
        object.__setattr__(self, "visibility", _frozen_vector(self.visibility))
        object.__setattr__(self, "face_features", _frozen_vector(self.face_features))
        object.__setattr__(self, "gender", Gender.parse(self.gender))
        if self.keypoints_norm.shape != (2 * N_JOINTS,):
            raise ValidationError("keypoints_norm must have 2J entries")
        if self.visibility.shape != (N_JOINTS,):
            raise ValidationError("visibility must have J entries")

    @property
    def example_id(self) -> str:
        return f"{self.image_id}/{self.subject_id}"

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "image_id": self.image_id,
            "body_crop": list(self.body_crop),
            "face_crop": list(self.face_crop),
            "keypoints_norm": _floats(self.keypoints_norm),
            "visibility": _floats(self.visibility),
            "face_features": _floats(self.face_features),
            "height_cm": self.height_cm,
            "gender": self.gender.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotatedExample":
        return cls(
            d["subject_id"],
            d["image_id"],
            d["body_crop"],
            d["face_crop"],
            d["keypoints_norm"],
            d["visibility"],
            d["face_features"],
            float(d["height_cm"]),
            Gender.parse(d.get("gender")),
        )


def validate_subject(record: dict, d_face: int | None = None) -> Subject:
    """Build a Subject from a raw record, raising on the first violated invariant."""
    sid = str(record.get("id", ""))
    if not sid:
        raise ValidationError("subject id must be non-empty")
    raw_height = record.get("height_cm")
    if isinstance(raw_height, str):
        height = unit_parse_height(raw_height)
    else:
        try:
            height = float(raw_height)
        except (TypeError, ValueError):
            raise ValidationError(f"subject {sid}: height_cm missing or not numeric") from None
    lo, hi = HEIGHT_RANGE_CM
    if not (lo <= height <= hi):
        raise HeightOutOfRange(f"subject {sid}: height {height} cm outside [{lo}, {hi}]")
    descriptor = _frozen_vector(record.get("descriptor", ()))
    if d_face is not None and descriptor.shape[0] != d_face:
        raise DescriptorDimMismatch(
            f"subject {sid}: descriptor has {descriptor.shape[0]} dims, expected {d_face}"
        )
    if not np.all(np.isfinite(descriptor)):
        raise ValidationError(f"subject {sid}: non-finite descriptor")
    return Subject(sid, height, Gender.parse(record.get("gender")), descriptor)


_HEIGHT_RE = re.compile(r"^\s*([0-9]+(?:\.[0-9]*)?|\.[0-9]+)\s*(m|cm)?\s*$", re.IGNORECASE)


def unit_parse_height(text: str) -> float:
    """Parse "1.78m", "178cm" or a bare number into centimeters.

    Bare numbers below 3 are meters, at least 100 are centimeters; anything
    in between is rejected.
    """
    m = _HEIGHT_RE.match(str(text))
    if not m:
        raise AmbiguousUnit(f"cannot parse height {text!r}")
    try:
        value = Decimal(m.group(1))
    except InvalidOperation:
        raise AmbiguousUnit(f"cannot parse height {text!r}") from None
    unit = (m.group(2) or "").lower()
    if unit == "m":
        return float(value * 100)
    if unit == "cm":
        return float(value)
    if value < 3:
        return float(value * 100)
    if value >= 100:
        return float(value)
    raise AmbiguousUnit(f"height {text!r} is neither meters (< 3) nor centimeters (>= 100)")


def build_subject_store(subjects: Iterable[Subject]) -> dict[str, Subject]:
    """Index subjects by id, enforcing unique ids and one descriptor dimension."""
    store: dict[str, Subject] = {}
    dim = None
    for s in subjects:
        if s.id in store:
            raise ValidationError(f"duplicate subject id {s.id!r}")
        if dim is None:
            dim = s.descriptor.shape[0]
        elif s.descriptor.shape[0] != dim:
            raise DescriptorDimMismatch(f"subject {s.id}: descriptor dimension {s.descriptor.shape[0]} != {dim}")
        store[s.id] = s
    return store


# --- JSON lines -------------------------------------------------------------


def iter_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None


def write_jsonl(path: str | Path, records: Iterable[Any]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            d = rec.to_dict() if hasattr(rec, "to_dict") else rec
            fh.write(json.dumps(d, separators=(",", ":"), allow_nan=False))
            fh.write("\n")
            n += 1
    return n


def read_subjects(path: str | Path) -> list[Subject]:
    subjects = [validate_subject(d) for d in iter_jsonl(path)]
    build_subject_store(subjects)
    return subjects


def read_detection_sets(path: str | Path) -> list[DetectionSet]:
    return [DetectionSet.from_dict(d) for d in iter_jsonl(path)]


def read_poses(path: str | Path) -> list[PoseRecord]:
    return [PoseRecord.from_dict(d) for d in iter_jsonl(path)]


def read_examples(path: str | Path) -> list[AnnotatedExample]:
    return [AnnotatedExample.from_dict(d) for d in iter_jsonl(path)]


@dataclass(frozen=True)
class FeatureMatrix:
    """Column-stacked arrays for a list of examples."""

    keypoints: np.ndarray
    face: np.ndarray
    heights: np.ndarray
    genders: tuple[Gender, ...] = field(default=())
    ids: tuple[str, ...] = field(default=())


def stack_examples(examples: Sequence[AnnotatedExample]) -> FeatureMatrix:
    if not examples:
        return FeatureMatrix(np.zeros((0, 2 * N_JOINTS)), np.zeros((0, 0)), np.zeros(0))
    return FeatureMatrix(
        np.stack([e.keypoints_norm for e in examples]),
        np.stack([e.face_features for e in examples]),
        np.array([e.height_cm for e in examples], dtype=np.float64),
        tuple(e.gender for e in examples),
        tuple(e.example_id for e in examples),
    )
