"""From assigned face detections and 2D poses to filtered training examples."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .assignment import Assignment
from .errors import DegenerateCrop, DuplicateExample, ValidationError, ZeroScale
from .records import JOINT, N_JOINTS, AnnotatedExample, Detection, PoseRecord, Subject

HEAD_JOINTS = (JOINT["nose"], JOINT["r_eye"], JOINT["l_eye"], JOINT["r_ear"], JOINT["l_ear"])
REQUIRED_JOINTS = ("neck", "r_shoulder", "l_shoulder", "r_hip", "l_hip")
MIN_CROP_PX = 32.0
CROP_MARGIN = 0.10
HEAD_GATE = 2.0  # in units of the face bbox diagonal


class Rejection(str, Enum):
    MISSING_POSE = "MissingPose"
    NO_POSE_MATCH = "NoPoseMatch"
    DEGENERATE_CROP = "DegenerateCrop"
    MISSING_UPPER_BODY = "MissingUpperBody"
    CROP_TOO_SMALL = "CropTooSmall"
    ZERO_SCALE = "ZeroScale"


@dataclass(frozen=True)
class PreprocessConfig:
    margin: float = CROP_MARGIN
    min_crop_px: float = MIN_CROP_PX
    required_joints: tuple[str, ...] = REQUIRED_JOINTS
    head_gate: float = HEAD_GATE

    def __post_init__(self):
        unknown = [j for j in self.required_joints if j not in JOINT]
        if unknown:
            raise ValidationError(f"unknown joint names {unknown}")


def _visible(joints: np.ndarray) -> np.ndarray:
    return np.asarray(joints)[:, 2] > 0


def head_proxy(joints: np.ndarray) -> tuple[float, float] | None:
    """Mean of the visible nose/eye/ear joints, else the neck, else None."""
    joints = np.asarray(joints, dtype=np.float64)
    head = [i for i in HEAD_JOINTS if joints[i, 2] > 0]
    if head:
        pts = joints[head, :2]
        return float(pts[:, 0].mean()), float(pts[:, 1].mean())
    neck = JOINT["neck"]
    if joints[neck, 2] > 0:
        return float(joints[neck, 0]), float(joints[neck, 1])
    return None


def associate_pose(detection: Detection, pose_record: PoseRecord, gate: float = HEAD_GATE) -> int | None:
    """Index of the person whose head is nearest the face box centre."""
    cx, cy = detection.center
    diag = math.hypot(detection.bbox[2], detection.bbox[3])
    best, best_dist = None, math.inf
    for i, person in enumerate(pose_record.persons):
        head = head_proxy(person)
        if head is None:
            continue
        dist = math.hypot(head[0] - cx, head[1] - cy)
        if dist < best_dist:
            best, best_dist = i, dist
    if best is None or best_dist > gate * diag:
        return None
    return best


def body_crop_from_keypoints(
    joints: np.ndarray,
    face_bbox: Sequence[float],
    margin: float = CROP_MARGIN,
    image_size: Sequence[float] | None = None,
) -> tuple[float, float, float, float]:
    """Box around the visible joints and the face, grown by ``margin`` times
    its longer side on every side and clamped to the image."""
    joints = np.asarray(joints, dtype=np.float64)
    vis = _visible(joints)
    if vis.sum() < 2:
        raise DegenerateCrop(f"need >= 2 visible joints, have {int(vis.sum())}")
    pts = joints[vis, :2]
    fx, fy, fw, fh = face_bbox
    x0 = min(pts[:, 0].min(), fx)
    y0 = min(pts[:, 1].min(), fy)
    x1 = max(pts[:, 0].max(), fx + fw)
    y1 = max(pts[:, 1].max(), fy + fh)
    pad = margin * max(x1 - x0, y1 - y0)
    x0, y0, x1, y1 = x0 - pad, y0 - pad, x1 + pad, y1 + pad
    if image_size is not None:
        w, h = image_size
        x0, y0 = max(x0, 0.0), max(y0, 0.0)
        x1, y1 = min(x1, float(w)), min(y1, float(h))
    if x1 <= x0 or y1 <= y0:
        raise DegenerateCrop("crop has zero area after clamping")
    return (float(x0), float(y0), float(x1 - x0), float(y1 - y0))


def filter_example(
    joints: np.ndarray,
    body_crop: Sequence[float],
    min_crop_px: float = MIN_CROP_PX,
    required_joints: Iterable[str] = REQUIRED_JOINTS,
) -> Rejection | None:
    """None keeps the candidate; otherwise the reason it is dropped."""
    joints = np.asarray(joints)
    if any(joints[JOINT[name], 2] <= 0 for name in required_joints):
        return Rejection.MISSING_UPPER_BODY
    if body_crop[3] < min_crop_px:
        return Rejection.CROP_TOO_SMALL
    return None


def normalize_keypoints(joints: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Center visible joints on their mean and divide by their RMS radius.

    Returns the flattened (x0, y0, x1, y1, ...) vector with missing joints
    at (0, 0), and the visibility mask.
    """
    joints = np.asarray(joints, dtype=np.float64)
    vis = _visible(joints)
    if vis.sum() < 2:
        raise DegenerateCrop(f"need >= 2 visible joints, have {int(vis.sum())}")
    pts = joints[vis, :2]
    centered = pts - pts.mean(axis=0)
    radius = math.sqrt(float(np.mean(np.sum(centered * centered, axis=1))))
    extent = float(np.abs(pts).max()) or 1.0
    if radius <= 1e-12 * extent:
        raise ZeroScale("visible joints coincide")
    out = np.zeros((joints.shape[0], 2))
    out[vis] = centered / radius
    return out.reshape(-1), vis.astype(np.float64)


@dataclass(frozen=True)
class PadGeometry:
    """Isotropic mapping of a crop into a square canvas:
    ``canvas = scale * (source - (x, y)) + offset``."""

    scale: float
    offset: tuple[float, float]
    target: int

    @property
    def source_padding(self) -> tuple[float, float]:
        """Total padding added on the x and y axes, in source pixels."""
        return (2 * self.offset[0] / self.scale, 2 * self.offset[1] / self.scale)

    def to_canvas(self, bbox: Sequence[float], points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * (pts - np.array(bbox[:2])) + np.array(self.offset)


def pad_crop_geometry(bbox: Sequence[float], target: int = 256) -> PadGeometry:
    _, _, w, h = bbox
    if w <= 0 or h <= 0:
        raise DegenerateCrop(f"bbox has zero area: {tuple(bbox)}")
    scale = target / max(w, h)
    return PadGeometry(scale, ((target - scale * w) / 2.0, (target - scale * h) / 2.0), target)


@dataclass
class BuildReport:
    rejections: Counter = field(default_factory=Counter)
    n_candidates: int = 0
    n_kept: int = 0

    def rows(self) -> list[dict]:
        return [{"reason": r.value, "count": self.rejections.get(r, 0)} for r in Rejection]


def build_examples(
    assignments: Iterable[Assignment],
    poses: Iterable[PoseRecord] | Mapping[str, PoseRecord],
    subjects: Mapping[str, Subject],
    config: PreprocessConfig = PreprocessConfig(),
    image_sizes: Mapping[str, Sequence[float]] | None = None,
) -> tuple[list[AnnotatedExample], BuildReport]:
    if not isinstance(poses, Mapping):
        poses = {p.image_id: p for p in poses}
    report = BuildReport()
    examples: list[AnnotatedExample] = []
    seen: set[tuple[str, str]] = set()

    for a in assignments:
        for pair in a.pairs:
            key = (a.image_id, pair.subject_id)
            if key in seen:
                raise DuplicateExample(f"duplicate example {key}")
            seen.add(key)
            report.n_candidates += 1
            if pair.detection is None:
                raise ValidationError(f"assignment for {key} carries no detection payload")

            pose = poses.get(a.image_id)
            if pose is None or not pose.persons:
                report.rejections[Rejection.MISSING_POSE] += 1
                continue
            person = associate_pose(pair.detection, pose, config.head_gate)
            if person is None:
                report.rejections[Rejection.NO_POSE_MATCH] += 1
                continue
            joints = pose.persons[person]
            size = image_sizes.get(a.image_id) if image_sizes else None
            try:
                crop = body_crop_from_keypoints(joints, pair.detection.bbox, config.margin, size)
            except DegenerateCrop:
                report.rejections[Rejection.DEGENERATE_CROP] += 1
                continue
            reason = filter_example(joints, crop, config.min_crop_px, config.required_joints)
            if reason is not None:
                report.rejections[reason] += 1
                continue
            try:
                kp, vis = normalize_keypoints(joints)
            except (ZeroScale, DegenerateCrop):
                report.rejections[Rejection.ZERO_SCALE] += 1
                continue

            subject = subjects[pair.subject_id]
            det = pair.detection
            features = det.features if det.features is not None else det.descriptor
            examples.append(
                AnnotatedExample(
                    subject_id=subject.id,
                    image_id=a.image_id,
                    body_crop=crop,
                    face_crop=det.bbox,
                    keypoints_norm=kp,
                    visibility=vis,
                    face_features=features,
                    height_cm=subject.height_cm,
                    gender=subject.gender,
                )
            )
            report.n_kept += 1
    return examples, report


def lint_examples(examples: Sequence[AnnotatedExample], min_crop_px: float = MIN_CROP_PX) -> list[str]:
    """Invariant violations of a finalized dataset; empty when clean."""
    problems = []
    d_feat = None
    ids = set()
    for e in examples:
        tag = e.example_id
        if tag in ids:
            problems.append(f"{tag}: duplicate example")
        ids.add(tag)
        if e.body_crop[3] < min_crop_px:
            problems.append(f"{tag}: body crop {e.body_crop[3]:.1f} px tall")
        vis = e.visibility > 0
        pts = e.keypoints_norm.reshape(N_JOINTS, 2)[vis]
        if len(pts) < 2:
            problems.append(f"{tag}: fewer than 2 visible joints")
            continue
        if np.abs(pts.mean(axis=0)).max() >= 1e-9:
            problems.append(f"{tag}: keypoints not centered")
        if abs(float(np.mean(np.sum(pts * pts, axis=1))) - 1.0) >= 1e-9:
            problems.append(f"{tag}: keypoints not unit scale")
        if d_feat is None:
            d_feat = e.face_features.shape[0]
        elif e.face_features.shape[0] != d_feat:
            problems.append(f"{tag}: face_features has {e.face_features.shape[0]} dims, expected {d_feat}")
    return problems
