"""Height-label propagation from subject profiles to face detections.

An image comes with a list of candidate subjects but no locations. Each
detection descriptor is compared with every candidate's profile descriptor;
a (detection, subject) pair is accepted when its distance is strictly the
smallest in both its row and its column, and the best detection for the
subject beats the runner-up detection by the ratio threshold ``tau``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DescriptorDimMismatch, EmptyInput, OracleTooLarge, UnknownSubject, ValidationError
from .records import Detection, DetectionSet, Subject

DEFAULT_TAU = 0.9


@dataclass(frozen=True)
class Pair:
    detection_index: int
    subject_id: str
    q: float
    detection: Detection | None = None

    def key(self) -> tuple[int, str, float]:
        return (self.detection_index, self.subject_id, self.q)


@dataclass(frozen=True)
class Assignment:
    image_id: str
    pairs: tuple[Pair, ...]
    unassigned_subjects: tuple[str, ...]
    unassigned_detections: tuple[int, ...]
    tau: float = DEFAULT_TAU

    def keys(self) -> list[tuple[int, str, float]]:
        return [p.key() for p in self.pairs]

    def to_dict(self) -> dict:
        pairs = []
        for p in self.pairs:
            d = {"detection_index": p.detection_index, "subject_id": p.subject_id, "q": p.q}
            if p.detection is not None:
                d["detection"] = p.detection.to_dict()
            pairs.append(d)
        return {
            "image_id": self.image_id,
            "pairs": pairs,
            "unassigned_subjects": list(self.unassigned_subjects),
            "unassigned_detections": list(self.unassigned_detections),
            "tau": self.tau,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Assignment":
        pairs = tuple(
            Pair(
                int(p["detection_index"]),
                str(p["subject_id"]),
                float(p["q"]),
                Detection.from_dict(p["detection"]) if p.get("detection") else None,
            )
            for p in d["pairs"]
        )
        return cls(
            d["image_id"],
            pairs,
            tuple(d.get("unassigned_subjects", ())),
            tuple(int(k) for k in d.get("unassigned_detections", ())),
            float(d.get("tau", DEFAULT_TAU)),
        )


def _as_matrix(vectors, what: str) -> np.ndarray:
    rows = [v.descriptor if isinstance(v, (Detection, Subject)) else v for v in vectors]
    if not rows:
        raise EmptyInput(f"no {what} descriptors")
    dims = {len(r) for r in rows}
    if len(dims) != 1:
        raise DescriptorDimMismatch(f"{what} descriptors have mixed dimensions {sorted(dims)}")
    return np.asarray(rows, dtype=np.float64)


def build_distance_matrix(detections: Sequence, subjects: Sequence) -> np.ndarray:
    """Euclidean distances, rows = detections, columns = subjects."""
    V = _as_matrix(detections, "detection")
    S = _as_matrix(subjects, "subject")
    if V.shape[1] != S.shape[1]:
        raise DescriptorDimMismatch(
            f"detection descriptors have {V.shape[1]} dims, subject descriptors {S.shape[1]}"
        )
    diff = V[:, None, :] - S[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def check_distance_matrix(D) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2:
        raise ValidationError(f"distance matrix must be 2-D, got shape {D.shape}")
    if D.size and (not np.all(np.isfinite(D)) or np.any(D < 0)):
        raise ValidationError("distance matrix entries must be finite and >= 0")
    return D


def _strict_argmin(values: np.ndarray, axis: int) -> np.ndarray:
    """Index of the strict minimum along ``axis``; -1 where the minimum is tied."""
    idx = np.argmin(values, axis=axis)
    mins = np.min(values, axis=axis, keepdims=True)
    n_at_min = np.sum(values == mins, axis=axis)
    return np.where(n_at_min == 1, idx, -1)


def mutual_best_pairs(D) -> list[tuple[int, int]]:
    """(k, j) pairs whose entry is the strict minimum of row k and column j."""
    D = check_distance_matrix(D)
    if D.size == 0:
        return []
    row_best = _strict_argmin(D, axis=1)
    col_best = _strict_argmin(D, axis=0)
    return [(k, int(j)) for k, j in enumerate(row_best) if j >= 0 and col_best[j] == k]


def ratio_test(D, k_star: int, j: int, tau: float = DEFAULT_TAU) -> tuple[bool, float]:
    """Compare D[k*, j] with the nearest other detection in column j.

    With a single detection there is no runner-up: q = 0 and the pair is
    accepted. A zero runner-up distance gives q = inf unless D[k*, j] is also
    zero (duplicate descriptors), which gives q = 0.
    """
    D = check_distance_matrix(D)
    n_k, n_s = D.shape
    if not (0 <= k_star < n_k and 0 <= j < n_s):
        raise ValidationError(f"index ({k_star}, {j}) outside matrix of shape {D.shape}")
    if n_k == 1:
        return True, 0.0
    column = np.delete(D[:, j], k_star)
    runner_up = float(column.min())
    best = float(D[k_star, j])
    if runner_up == 0.0:
        q = 0.0 if best == 0.0 else math.inf
    else:
        q = best / runner_up
    return q < tau, q


def assign_from_matrix(D, tau: float = DEFAULT_TAU) -> list[tuple[int, int, float]]:
    """Mutual best pairs that pass the ratio test, as (k, j, q)."""
    out = []
    for k, j in mutual_best_pairs(D):
        accept, q = ratio_test(D, k, j, tau)
        if accept:
            out.append((k, j, q))
    return out


def propagate_labels(
    detection_set: DetectionSet,
    subject_store: Mapping[str, Subject],
    tau: float = DEFAULT_TAU,
) -> Assignment:
    """Assign candidate subjects of one image to its face detections."""
    try:
        subjects = [subject_store[sid] for sid in detection_set.candidate_subjects]
    except KeyError as exc:
        raise UnknownSubject(f"image {detection_set.image_id}: unknown subject {exc.args[0]!r}") from None
    dets = detection_set.detections
    if not dets or not subjects:
        return Assignment(
            detection_set.image_id,
            (),
            tuple(s.id for s in subjects),
            tuple(range(len(dets))),
            tau,
        )
    if len(dets) == 1 and len(subjects) == 1:
        if len(dets[0].descriptor) != len(subjects[0].descriptor):
            raise DescriptorDimMismatch(f"image {detection_set.image_id}: descriptor dimension mismatch")
        triples = [(0, 0, 0.0)]
    else:
        triples = assign_from_matrix(build_distance_matrix(dets, subjects), tau)

    pairs = tuple(Pair(k, subjects[j].id, q, dets[k]) for k, j, q in triples)
    used_k = {k for k, _, _ in triples}
    used_j = {j for _, j, _ in triples}
    return Assignment(
        detection_set.image_id,
        pairs,
        tuple(s.id for i, s in enumerate(subjects) if i not in used_j),
        tuple(k for k in range(len(dets)) if k not in used_k),
        tau,
    )


def brute_force_assign(D, tau: float = DEFAULT_TAU, subject_ids: Sequence[str] | None = None) -> Assignment:
    """Reference enumeration of the acceptance rule, for testing only.

    Deliberately shares no code with :func:`propagate_labels`: every entry is
    compared against every other entry of its row and column in plain Python.
    """
    rows = [[float(x) for x in row] for row in D]
    n_k = len(rows)
    n_s = len(rows[0]) if n_k else 0
    if n_k > 8 or n_s > 8:
        raise OracleTooLarge(f"oracle limited to 8x8, got {n_k}x{n_s}")
    ids = list(subject_ids) if subject_ids is not None else [str(j) for j in range(n_s)]

    pairs = []
    for k, j in itertools.product(range(n_k), range(n_s)):
        d = rows[k][j]
        row_ok = all(rows[k][jj] > d for jj in range(n_s) if jj != j)
        col_ok = all(rows[kk][j] > d for kk in range(n_k) if kk != k)
        if not (row_ok and col_ok):
            continue
        others = [rows[kk][j] for kk in range(n_k) if kk != k]
        if not others:
            q = 0.0
        else:
            second = min(others)
            if second == 0.0:
                q = 0.0 if d == 0.0 else math.inf
            else:
                q = d / second
        if q < tau:
            pairs.append(Pair(k, ids[j], q))

    taken_k = {p.detection_index for p in pairs}
    taken_s = {p.subject_id for p in pairs}
    return Assignment(
        "",
        tuple(pairs),
        tuple(s for s in ids if s not in taken_s),
        tuple(k for k in range(n_k) if k not in taken_k),
        tau,
    )


@dataclass(frozen=True)
class AuditResult:
    n_labels: int
    n_assigned: int
    n_wrong: int
    precision: float
    recall: float

    @property
    def n_correct(self) -> int:
        return self.n_assigned - self.n_wrong

    def as_row(self) -> dict:
        return {
            "n_labels": self.n_labels,
            "n_assigned": self.n_assigned,
            "n_wrong": self.n_wrong,
            "precision": self.precision,
            "recall": self.recall,
        }


def audit_counts(n_labels: int, n_assigned: int, n_wrong: int) -> AuditResult:
    correct = n_assigned - n_wrong
    precision = correct / n_assigned if n_assigned else math.nan
    recall = correct / n_labels if n_labels else math.nan
    return AuditResult(n_labels, n_assigned, n_wrong, precision, recall)


def audit_assignments(assignments: Iterable[Assignment], ground_truth: Mapping[str, dict]) -> AuditResult:
    """Score assignments against a truth table.

    ``ground_truth`` maps image_id to ``{"labels": [...], "detections":
    [subject_id or None, ...]}``. Every candidate label counts towards recall,
    including labels of people who were never detected.
    """
    n_labels = sum(len(t["labels"]) for t in ground_truth.values())
    n_assigned = n_wrong = 0
    for a in assignments:
        truth = ground_truth.get(a.image_id)
        if truth is None:
            raise ValidationError(f"no ground truth for image {a.image_id!r}")
        det_truth = truth["detections"]
        for p in a.pairs:
            n_assigned += 1
            actual = det_truth[p.detection_index] if p.detection_index < len(det_truth) else None
            if actual != p.subject_id:
                n_wrong += 1
    return audit_counts(n_labels, n_assigned, n_wrong)
