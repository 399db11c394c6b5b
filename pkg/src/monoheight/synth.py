"""Synthetic ground truth: an anthropometric population for the regressors
and an identity benchmark for label propagation.

Population model, per subject::

    u      = sqrt(face_share) * phi_f(z_face) + sqrt(body_share) * phi_b(z_body)
             + sqrt(1 - face_share - body_share) * eps
    true   = clip(mean_g + std_g * u, 140, 210)
    label  = true + N(0, sigma)

phi_f, phi_b have unit variance (linear or nonlinear in the latents).
z_face is observable through the facial feature vector, z_body through the
limb proportions of an 18-joint skeleton. Every image re-poses the skeleton
and draws its pixel size independently of height, so absolute scale carries
no signal.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .assignment import propagate_labels
from .errors import SpecError
from .preprocess import PreprocessConfig, build_examples
from .records import (
    JOINT,
    N_JOINTS,
    AnnotatedExample,
    Detection,
    DetectionSet,
    Gender,
    PoseRecord,
    Subject,
)

HEIGHT_CLIP = (140.0, 210.0)
FACE_LATENT_DIM = 4
BODY_LATENT_DIM = 3
IDENTITY_LATENT_DIM = 8
IMAGE_SIZE = (640.0, 480.0)
CROP_SIZE = 32  # grayscale crop side for the convolutional streams
NON_REQUIRED = tuple(
    JOINT[n]
    for n in ("r_elbow", "r_wrist", "l_elbow", "l_wrist", "r_knee", "r_ankle", "l_knee", "l_ankle", "r_eye", "l_eye", "r_ear", "l_ear")
)
REQUIRED = tuple(JOINT[n] for n in ("neck", "r_shoulder", "l_shoulder", "r_hip", "l_hip"))


@dataclass(frozen=True)
class PopulationConfig:
    n: int = 2000
    images_per_subject: int = 1
    female_mean: float = 164.0
    female_std: float = 7.0
    male_mean: float = 177.0
    male_std: float = 7.0
    p_male: float = 0.5
    face_share: float = 0.3
    body_share: float = 0.3
    nonlinear: bool = False
    ratio_gain: float = 1.0
    sigma: float = 1.0
    d_feat: int = 32
    d_face: int = 32
    face_noise: float = 0.0
    keypoint_noise_px: float = 0.5
    articulation: float = 1.0
    missing_rate: float = 0.03
    required_missing_rate: float = 0.001
    bystander_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.female_std <= 0 or self.male_std <= 0:
            raise SpecError("gender stds must be > 0")
        if self.sigma < 0:
            raise SpecError("sigma must be >= 0")
        if self.face_share < 0 or self.body_share < 0 or self.face_share + self.body_share > 1 + 1e-12:
            raise SpecError("face_share and body_share must be >= 0 and sum to <= 1")
        if self.n < 1 or self.images_per_subject < 1:
            raise SpecError("n and images_per_subject must be >= 1")
        if not 0 <= self.p_male <= 1:
            raise SpecError("p_male must lie in [0, 1]")
        if self.d_feat < FACE_LATENT_DIM + 1 + IDENTITY_LATENT_DIM:
            raise SpecError(f"d_feat must be >= {FACE_LATENT_DIM + 1 + IDENTITY_LATENT_DIM}")

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown population config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def n_subjects(self) -> int:
        return math.ceil(self.n / self.images_per_subject)


# Named presets used by the CLI and the acceptance suite.
PRESETS: dict[str, PopulationConfig] = {
    "default": PopulationConfig(),
    # all within-gender variance visible through a linear face embedding;
    # label noise sigma is the only irreducible error
    "linear-signal": PopulationConfig(
        face_share=1.0, body_share=0.0, nonlinear=False, sigma=5.0, keypoint_noise_px=0.5
    ),
    # nonlinear signal split evenly between face and body channels
    "split-signal": PopulationConfig(face_share=0.4, body_share=0.4, nonlinear=True, sigma=1.0),
    # modest, noisy signal: learning has to beat the gender prior
    "imdb-like": PopulationConfig(face_share=0.25, body_share=0.25, nonlinear=True, sigma=2.0, face_noise=0.3),
}


def _phi(z: np.ndarray, nonlinear: bool) -> np.ndarray:
    """Unit-variance height signal from standard-normal latents (last axis)."""
    if not nonlinear:
        return z.sum(axis=-1) / math.sqrt(z.shape[-1])
    a, b, c = z[..., 0], z[..., 1], z[..., 2]
    return (a + b * c + (c * c - 1.0) / math.sqrt(2.0)) / math.sqrt(3.0)


@dataclass
class World:
    """Fixed random maps shared by every subject of one population."""

    face_mix: np.ndarray  # d_feat x (face latent + gender + identity)

    @classmethod
    def make(cls, cfg: PopulationConfig) -> "World":
        rng = np.random.default_rng([cfg.seed, 0])
        k = FACE_LATENT_DIM + 1 + IDENTITY_LATENT_DIM
        return cls(face_mix=rng.normal(size=(cfg.d_feat, k)) / math.sqrt(k))


@dataclass
class SubjectTruth:
    id: str
    gender: Gender
    z_face: np.ndarray
    z_body: np.ndarray
    z_id: np.ndarray
    identity: np.ndarray
    oracle_cm: float  # E[label | observable latents]
    true_cm: float
    label_cm: float


@dataclass
class Population:
    config: PopulationConfig
    subjects: list[Subject]
    detection_sets: list[DetectionSet]
    poses: list[PoseRecord]
    truth: dict[str, SubjectTruth]
    image_truth: dict[str, dict] = field(default_factory=dict)
    pixel_height: dict[str, float] = field(default_factory=dict)


def _gender_stats(cfg: PopulationConfig, g: Gender) -> tuple[float, float]:
    if g is Gender.MALE:
        return cfg.male_mean, cfg.male_std
    return cfg.female_mean, cfg.female_std


def sample_subject(cfg: PopulationConfig, i: int) -> SubjectTruth:
    rng = np.random.default_rng([cfg.seed, 1, i])
    g = Gender.MALE if rng.random() < cfg.p_male else Gender.FEMALE
    z_face = rng.normal(size=FACE_LATENT_DIM)
    z_body = rng.normal(size=BODY_LATENT_DIM)
    z_id = rng.normal(size=IDENTITY_LATENT_DIM)
    eps = rng.normal()
    noise = rng.normal()
    identity = rng.normal(size=cfg.d_face)
    identity /= np.linalg.norm(identity)

    mean, std = _gender_stats(cfg, g)
    explained = math.sqrt(cfg.face_share) * _phi(z_face, cfg.nonlinear) + math.sqrt(cfg.body_share) * _phi(
        z_body, cfg.nonlinear
    )
    rest = math.sqrt(max(0.0, 1.0 - cfg.face_share - cfg.body_share))
    lo, hi = HEIGHT_CLIP
    true = float(np.clip(mean + std * (explained + rest * eps), lo, hi))
    oracle = mean + std * explained
    label = true + cfg.sigma * noise
    return SubjectTruth(f"s{i:06d}", g, z_face, z_body, z_id, identity, float(oracle), true, float(label))


def face_features(world: World, s: SubjectTruth, noise: float, rng: np.random.Generator) -> np.ndarray:
    code = 1.0 if s.gender is Gender.MALE else -1.0
    latent = np.concatenate([s.z_face, [code], s.z_id])
    v = world.face_mix @ latent
    if noise > 0:
        v = v + noise * rng.normal(size=v.shape)
    return v


def skeleton(z_body: np.ndarray, gender: Gender, gain: float) -> dict[str, np.ndarray]:
    """Standing skeleton in height units (floor at y=0, crown at y=1)."""
    hip_y = 0.53 + 0.03 * gain * z_body[0]
    head = 0.13 - 0.012 * gain * z_body[1]
    shoulder = 0.115 + 0.012 * gain * z_body[2] + (0.01 if gender is Gender.MALE else 0.0)
    hip_half = 0.085 if gender is Gender.FEMALE else 0.075
    return {
        "hip_y": np.float64(hip_y),
        "head": np.float64(head),
        "shoulder": np.float64(shoulder),
        "hip_half": np.float64(hip_half),
    }


def pose_joints(bones: dict, rng: np.random.Generator, articulation: float) -> np.ndarray:
    """Articulated 2D joints (height units, y up). Returns (N_JOINTS, 2)."""
    head = bones["head"]
    hip_y = bones["hip_y"]
    sh = bones["shoulder"]
    hh = bones["hip_half"]
    J = np.zeros((N_JOINTS, 2))
    neck_y = 1.0 - 1.2 * head
    J[JOINT["neck"]] = (0.0, neck_y)
    J[JOINT["nose"]] = (0.0, 1.0 - 0.6 * head)
    J[JOINT["r_eye"]] = (-0.18 * head, 1.0 - 0.45 * head)
    J[JOINT["l_eye"]] = (0.18 * head, 1.0 - 0.45 * head)
    J[JOINT["r_ear"]] = (-0.4 * head, 1.0 - 0.5 * head)
    J[JOINT["l_ear"]] = (0.4 * head, 1.0 - 0.5 * head)
    J[JOINT["r_shoulder"]] = (-sh, neck_y - 0.01)
    J[JOINT["l_shoulder"]] = (sh, neck_y - 0.01)
    J[JOINT["r_hip"]] = (-hh, hip_y)
    J[JOINT["l_hip"]] = (hh, hip_y)

    upper, fore = 0.17, 0.16
    for side, sgn in (("r", -1.0), ("l", 1.0)):
        abduct = math.radians(rng.uniform(5.0, 5.0 + 55.0 * articulation))
        bend = math.radians(rng.uniform(0.0, 70.0 * articulation))
        s = J[JOINT[f"{side}_shoulder"]]
        e = s + upper * np.array([sgn * math.sin(abduct), -math.cos(abduct)])
        a2 = abduct - bend
        w = e + fore * np.array([sgn * math.sin(a2), -math.cos(a2)])
        J[JOINT[f"{side}_elbow"]] = e
        J[JOINT[f"{side}_wrist"]] = w

        ankle_y = 0.04
        leg = hip_y - ankle_y
        thigh, shin = 0.5 * leg, 0.5 * leg
        spread = math.radians(rng.uniform(-3.0, 3.0 + 9.0 * articulation))
        knee_bend = math.radians(rng.uniform(0.0, 15.0 * articulation))
        h = J[JOINT[f"{side}_hip"]]
        k = h + thigh * np.array([sgn * math.sin(spread), -math.cos(spread)])
        a3 = spread - knee_bend
        an = k + shin * np.array([sgn * math.sin(a3), -math.cos(a3)])
        J[JOINT[f"{side}_knee"]] = k
        J[JOINT[f"{side}_ankle"]] = an

    # yaw foreshortens lateral distances, tilt rotates in plane
    yaw = math.radians(rng.uniform(-35.0, 35.0) * articulation)
    J[:, 0] *= math.cos(yaw)
    tilt = math.radians(rng.uniform(-4.0, 4.0) * articulation)
    c, s_ = math.cos(tilt), math.sin(tilt)
    J = J @ np.array([[c, s_], [-s_, c]])
    if rng.random() < 0.5:
        J[:, 0] *= -1.0
        # mirrored image swaps left/right labels
        for a, b in (("r_shoulder", "l_shoulder"), ("r_elbow", "l_elbow"), ("r_wrist", "l_wrist"),
                     ("r_hip", "l_hip"), ("r_knee", "l_knee"), ("r_ankle", "l_ankle"),
                     ("r_eye", "l_eye"), ("r_ear", "l_ear")):
            J[[JOINT[a], JOINT[b]]] = J[[JOINT[b], JOINT[a]]]
    return J


def project(
    J: np.ndarray,
    head: float,
    pixel_height: float,
    origin: tuple[float, float],
    rng: np.random.Generator,
    noise_px: float,
) -> tuple[np.ndarray, tuple[float, float, float, float]]:
    """Map height-unit joints into image pixels (y down). The person's
    vertical extent (crown to lowest joint) becomes exactly pixel_height."""
    top = 1.0
    bottom = float(J[:, 1].min())
    scale = pixel_height / (top - bottom)
    ox, oy = origin
    px = ox + scale * J[:, 0]
    py = oy + scale * (top - J[:, 1])
    if noise_px > 0:
        px = px + noise_px * rng.normal(size=px.shape)
        py = py + noise_px * rng.normal(size=py.shape)
    head_pts = [JOINT[n] for n in ("nose", "r_eye", "l_eye")]
    cx = float(np.mean(px[head_pts]))
    cy = float(np.mean(py[head_pts]))
    fw, fh = 0.8 * head * scale, 1.0 * head * scale
    return np.stack([px, py], axis=1), (cx - fw / 2, cy - fh / 2, fw, fh)


def _confidences(rng: np.random.Generator, cfg: PopulationConfig) -> np.ndarray:
    conf = rng.uniform(0.3, 1.0, size=N_JOINTS)
    for j in NON_REQUIRED:
        if rng.random() < cfg.missing_rate:
            conf[j] = 0.0
    for j in REQUIRED:
        if rng.random() < cfg.required_missing_rate:
            conf[j] = 0.0
    return conf


def generate_population(cfg: PopulationConfig) -> Population:
    """Subjects, per-image detections and poses, and the generating truth."""
    world = World.make(cfg)
    truths = [sample_subject(cfg, i) for i in range(cfg.n_subjects)]
    subjects = [Subject(t.id, t.label_cm, t.gender, t.identity) for t in truths]

    det_sets, poses = [], []
    image_truth: dict[str, dict] = {}
    pixel_height: dict[str, float] = {}
    W, H = IMAGE_SIZE
    for idx in range(cfg.n):
        t = truths[idx // cfg.images_per_subject]
        image_id = f"img{idx:07d}"
        rng = np.random.default_rng([cfg.seed, 2, idx])
        bones = skeleton(t.z_body, t.gender, cfg.ratio_gain)
        J = pose_joints(bones, rng, cfg.articulation)
        ph = float(rng.uniform(80.0, 400.0))
        width_px = ph * 0.6
        ox = float(rng.uniform(width_px / 2 + 5, W / 2 - 10))
        oy = float(rng.uniform(10.0, H - ph - 10.0))
        pts, face_box = project(J, float(bones["head"]), ph, (ox, oy), rng, cfg.keypoint_noise_px)
        conf = _confidences(rng, cfg)
        persons = [np.column_stack([pts, conf])]
        descriptor = t.identity + (0.05 / math.sqrt(cfg.d_face)) * rng.normal(size=cfg.d_face)
        dets = [Detection(face_box, descriptor, face_features(world, t, cfg.face_noise, rng))]
        det_truth: list[str | None] = [t.id]

        if rng.random() < cfg.bystander_rate:
            # an unlabeled person in the right half of the frame
            other = sample_subject(replace(cfg, seed=cfg.seed + 7919), idx)
            ob = skeleton(other.z_body, other.gender, cfg.ratio_gain)
            OJ = pose_joints(ob, rng, cfg.articulation)
            oph = float(rng.uniform(80.0, 400.0))
            oox = float(rng.uniform(W / 2 + oph * 0.3 + 10, W - oph * 0.3 - 5))
            ooy = float(rng.uniform(10.0, H - oph - 10.0))
            opts, obox = project(OJ, float(ob["head"]), oph, (oox, ooy), rng, cfg.keypoint_noise_px)
            persons.append(np.column_stack([opts, rng.uniform(0.3, 1.0, size=N_JOINTS)]))
            other_desc = other.identity + (0.05 / math.sqrt(cfg.d_face)) * rng.normal(size=cfg.d_face)
            dets.append(Detection(obox, other_desc, face_features(world, other, cfg.face_noise, rng)))
            det_truth.append(None)

        det_sets.append(DetectionSet(image_id, tuple(dets), (t.id,), IMAGE_SIZE))
        poses.append(PoseRecord(image_id, tuple(persons)))
        image_truth[image_id] = {"labels": [t.id], "detections": det_truth}
        pixel_height[image_id] = ph

    return Population(cfg, subjects, det_sets, poses, {t.id: t for t in truths}, image_truth, pixel_height)


def population_examples(
    pop: Population, tau: float = 0.9, config: PreprocessConfig = PreprocessConfig()
) -> tuple[list[AnnotatedExample], "object"]:
    """Run label propagation and preprocessing over a generated population."""
    store = {s.id: s for s in pop.subjects}
    assignments = [propagate_labels(ds, store, tau) for ds in pop.detection_sets]
    sizes = {ds.image_id: ds.image_size for ds in pop.detection_sets}
    return build_examples(assignments, pop.poses, store, config, sizes)


def oracle_predictions(pop: Population, examples: Sequence[AnnotatedExample]) -> np.ndarray:
    """The Bayes-optimal prediction for each example (noise-free features)."""
    return np.array([pop.truth[e.subject_id].oracle_cm for e in examples])


def bayes_floor(cfg: PopulationConfig, method: str = "closed", n_mc: int = 200_000) -> float:
    """Smallest achievable expected MAE when the latents are fully observed.

    Closed form: the unexplained residual is Gaussian with variance
    std_g^2 * (1 - shares) + sigma^2, whose mean absolute value is
    std * sqrt(2/pi). The Monte-Carlo route simulates the generator,
    clipping included. With feature or keypoint noise the latents are only
    partly observable and both values are lower bounds.
    """
    rest = max(0.0, 1.0 - cfg.face_share - cfg.body_share)
    if method == "closed":
        c = math.sqrt(2.0 / math.pi)
        f = math.sqrt(cfg.female_std**2 * rest + cfg.sigma**2) * c
        m = math.sqrt(cfg.male_std**2 * rest + cfg.sigma**2) * c
        return (1 - cfg.p_male) * f + cfg.p_male * m
    if method != "monte_carlo":
        raise SpecError(f"unknown bayes_floor method {method!r}")
    rng = np.random.default_rng([cfg.seed, 99])
    male = rng.random(n_mc) < cfg.p_male
    mean = np.where(male, cfg.male_mean, cfg.female_mean)
    std = np.where(male, cfg.male_std, cfg.female_std)
    explained = math.sqrt(cfg.face_share) * _phi(rng.normal(size=(n_mc, FACE_LATENT_DIM)), cfg.nonlinear)
    explained += math.sqrt(cfg.body_share) * _phi(rng.normal(size=(n_mc, BODY_LATENT_DIM)), cfg.nonlinear)
    true = np.clip(mean + std * (explained + math.sqrt(rest) * rng.normal(size=n_mc)), *HEIGHT_CLIP)
    label = true + cfg.sigma * rng.normal(size=n_mc)
    return float(np.mean(np.abs(label - (mean + std * explained))))


# --- PoseNet stand-in ------------------------------------------------------------


def posenet_proxy(examples: Sequence[AnnotatedExample], truth: dict[str, SubjectTruth], seed: int = 0) -> np.ndarray:
    """Raw head-to-ankle estimates from a model fit on a handful of subjects:
    shrunk towards its training mean, missing the ankle-to-floor distance,
    and noisy."""
    return posenet_proxy_heights([truth[e.subject_id].true_cm for e in examples], seed)


def posenet_proxy_heights(true_cm: Sequence[float], seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng([seed, 5])
    true = np.asarray(true_cm, dtype=np.float64)
    return 0.5 * true + 0.5 * 172.0 - 7.5 + rng.normal(scale=6.0, size=true.shape)


# --- crop pixels for the convolutional streams ----------------------------------


def render_body_crops(examples: Sequence[AnnotatedExample], size: int = CROP_SIZE, blob: float = 0.8) -> np.ndarray:
    """Gaussian blobs at the normalized joint positions, (n, 1, size, size)."""
    grid = np.arange(size) + 0.5
    out = np.zeros((len(examples), 1, size, size))
    for i, e in enumerate(examples):
        kp = e.keypoints_norm.reshape(N_JOINTS, 2)
        vis = e.visibility > 0
        # normalized coordinates span roughly [-2.5, 2.5]
        pts = (kp[vis] / 5.0 + 0.5) * size
        gx = np.exp(-((grid[None, :] - pts[:, 0:1]) ** 2) / (2 * blob**2))
        gy = np.exp(-((grid[None, :] - pts[:, 1:2]) ** 2) / (2 * blob**2))
        out[i, 0] = np.einsum("jy,jx->yx", gy, gx)
    return out


def render_face_crops(examples: Sequence[AnnotatedExample], size: int = CROP_SIZE, seed: int = 0) -> np.ndarray:
    """Facial features painted onto fixed smooth basis images, (n, 1, size, size)."""
    feats = np.stack([e.face_features for e in examples])
    rng = np.random.default_rng([seed, 11])
    d = feats.shape[1]
    yy, xx = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    basis = np.empty((d, size, size))
    for k in range(d):
        fx, fy, ph = rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5), rng.uniform(0, 2 * math.pi)
        basis[k] = np.cos(math.pi * (fx * xx + fy * yy) + ph)
    return np.einsum("nd,dyx->nyx", feats, basis)[:, None] / math.sqrt(d)


# --- identity benchmark ------------------------------------------------------------


@dataclass(frozen=True)
class IdentityConfig:
    n_subjects: int = 3000
    n_images: int = 1000
    d_face: int = 128
    person_weights: tuple[float, ...] = (0.35, 0.25, 0.18, 0.12, 0.06, 0.04)  # P(1..6 persons)
    p_labeled: float = 0.8  # a present person appears in the label list
    p_detect: float = 0.9
    descriptor_noise: float = 0.5
    noise_spread: float = 0.35  # lognormal spread of per-detection noise
    distractor_rate: float = 0.3  # Poisson rate of labels for absent people
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "IdentityConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown identity config keys {sorted(unknown)}")
        d = dict(d)
        if "person_weights" in d:
            d["person_weights"] = tuple(d["person_weights"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["person_weights"] = list(self.person_weights)
        return d


IDENTITY_PRESETS = {
    "clean": IdentityConfig(descriptor_noise=0.0, noise_spread=0.0, p_labeled=1.0, p_detect=1.0, distractor_rate=0.0),
    "imdb-like": IdentityConfig(),
}


@dataclass
class IdentityBenchmark:
    config: IdentityConfig
    subjects: list[Subject]
    detection_sets: list[DetectionSet]
    truth: dict[str, dict]


def generate_identity_benchmark(cfg: IdentityConfig) -> IdentityBenchmark:
    rng = np.random.default_rng([cfg.seed, 3])
    profiles = rng.normal(size=(cfg.n_subjects, cfg.d_face))
    profiles /= np.linalg.norm(profiles, axis=1, keepdims=True)
    male = rng.random(cfg.n_subjects) < 0.5
    heights = np.where(male, rng.normal(177, 7, cfg.n_subjects), rng.normal(164, 7, cfg.n_subjects))
    heights = np.clip(heights, *HEIGHT_CLIP)
    subjects = [
        Subject(f"a{i:05d}", float(heights[i]), Gender.MALE if male[i] else Gender.FEMALE, profiles[i])
        for i in range(cfg.n_subjects)
    ]
    weights = np.asarray(cfg.person_weights, dtype=np.float64)
    weights /= weights.sum()

    det_sets, truth = [], {}
    for idx in range(cfg.n_images):
        irng = np.random.default_rng([cfg.seed, 4, idx])
        n_people = int(irng.choice(len(weights), p=weights)) + 1
        n_distract = int(irng.poisson(cfg.distractor_rate))
        chosen = irng.choice(cfg.n_subjects, size=n_people + n_distract, replace=False)
        present, absent = chosen[:n_people], chosen[n_people:]
        labeled = [int(p) for p in present if irng.random() < cfg.p_labeled]
        if not labeled:
            labeled = [int(present[0])]
        labels = labeled + [int(a) for a in absent]
        irng.shuffle(labels)

        dets, det_truth = [], []
        for p in present:
            if irng.random() >= cfg.p_detect:
                continue
            s = cfg.descriptor_noise * math.exp(cfg.noise_spread * irng.normal())
            desc = profiles[p] + (s / math.sqrt(cfg.d_face)) * irng.normal(size=cfg.d_face)
            box = (float(irng.uniform(0, 600)), float(irng.uniform(0, 400)), 30.0, 36.0)
            dets.append(Detection(box, desc))
            det_truth.append(subjects[p].id if int(p) in labeled else None)
        image_id = f"id{idx:06d}"
        det_sets.append(DetectionSet(image_id, tuple(dets), tuple(subjects[i].id for i in labels), IMAGE_SIZE))
        truth[image_id] = {"labels": [subjects[i].id for i in labels], "detections": det_truth}
    return IdentityBenchmark(cfg, subjects, det_sets, truth)
