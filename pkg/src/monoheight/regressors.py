"""Height regressors (Linear, ShallowNet, two-stream DeepNet) and the
gender classifier used by the GenderPred baseline."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DivergenceFault,
    EmptyInput,
    InsufficientLabels,
    SingularSystem,
    SpecError,
    StreamInputMissing,
)
from .nn import (
    SGD,
    ModelParams,
    Tensor,
    avgpool,
    bce_loss,
    concat,
    conv2d,
    dense,
    flatten,
    init_params,
    load_checkpoint,
    make_layout,
    mse_loss,
    relu,
    save_checkpoint,
    sigmoid,
)
from .nn.kernels import conv_out_size
from .records import AnnotatedExample, Gender, N_JOINTS

log = logging.getLogger(__name__)

KINDS = ("linear", "shallow", "deep", "genderpred")
FEATURE_SETS = ("body", "face", "both")
KEYPOINT_DIM = 2 * N_JOINTS


# --- inputs --------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureBundle:
    """Model inputs for one example. Pixel crops are [c, s, s] arrays."""

    keypoints_norm: np.ndarray | None = None
    visibility: np.ndarray | None = None
    face_features: np.ndarray | None = None
    face_crop_pixels: np.ndarray | None = None
    body_crop_pixels: np.ndarray | None = None

    def __post_init__(self):
        if all(
            v is None
            for v in (self.keypoints_norm, self.face_features, self.face_crop_pixels, self.body_crop_pixels)
        ):
            raise EmptyInput("feature bundle has no populated field")

    @classmethod
    def from_example(cls, e: AnnotatedExample, face_pixels=None, body_pixels=None) -> "FeatureBundle":
        return cls(e.keypoints_norm, e.visibility, e.face_features, face_pixels, body_pixels)


def make_batch(
    examples: Sequence[AnnotatedExample],
    face_pixels: np.ndarray | None = None,
    body_pixels: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Stack examples into the named arrays every model reads from."""
    if not examples:
        raise EmptyInput("no examples")
    batch = {
        "keypoints": np.stack([e.keypoints_norm for e in examples]),
        "face": np.stack([e.face_features for e in examples]),
    }
    if face_pixels is not None:
        batch["face_pixels"] = np.asarray(face_pixels, dtype=np.float64)
    if body_pixels is not None:
        batch["body_pixels"] = np.asarray(body_pixels, dtype=np.float64)
    return batch


def bundles_to_batch(bundles: Sequence[FeatureBundle]) -> dict[str, np.ndarray]:
    batch = {}
    for key, attr in (
        ("keypoints", "keypoints_norm"),
        ("face", "face_features"),
        ("face_pixels", "face_crop_pixels"),
        ("body_pixels", "body_crop_pixels"),
    ):
        vals = [getattr(b, attr) for b in bundles]
        if all(v is not None for v in vals):
            batch[key] = np.stack(vals).astype(np.float64)
    return batch


def batch_size(batch: Mapping[str, np.ndarray]) -> int:
    return len(next(iter(batch.values())))


def take(batch: Mapping[str, np.ndarray], idx) -> dict[str, np.ndarray]:
    return {k: v[idx] for k, v in batch.items()}


def labels_of(examples: Sequence[AnnotatedExample]) -> np.ndarray:
    return np.array([e.height_cm for e in examples], dtype=np.float64)


# --- specs ---------------------------------------------------------------------


@dataclass(frozen=True)
class StreamSpec:
    """Encoder for one input scale: an MLP over a feature vector, or a small
    conv stack (conv/relu/avgpool per entry of ``channels``, then dense)."""

    kind: str = "mlp"
    widths: tuple[int, ...] = (128, 64)
    channels: tuple[int, ...] = (4, 8)
    kernel: int = 3
    stride: int = 1
    pool: int = 2
    embed: int = 32

    def __post_init__(self):
        if self.kind not in ("mlp", "conv"):
            raise SpecError(f"stream kind must be 'mlp' or 'conv', got {self.kind!r}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.kind == "mlp" and not self.widths:
            raise SpecError("mlp stream needs at least one width")

    @property
    def output_dim(self) -> int:
        return self.widths[-1] if self.kind == "mlp" else self.embed


@dataclass(frozen=True)
class RegressorSpec:
    kind: str = "shallow"
    features: str = "both"
    widths: tuple[int, ...] = (256, 256, 256)  # ShallowNet hidden layers
    face_stream: StreamSpec = field(default_factory=StreamSpec)
    body_stream: StreamSpec = field(default_factory=StreamSpec)
    fusion_width: int = 128
    ridge: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown regressor kind {self.kind!r}")
        if self.features not in FEATURE_SETS:
            raise SpecError(f"unknown feature set {self.features!r}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.kind == "shallow" and len(self.widths) != 3:
            raise SpecError(f"ShallowNet has 4 dense layers (3 hidden); got {len(self.widths)} hidden widths")
        if isinstance(self.face_stream, dict):
            object.__setattr__(self, "face_stream", StreamSpec(**self.face_stream))
        if isinstance(self.body_stream, dict):
            object.__setattr__(self, "body_stream", StreamSpec(**self.body_stream))

    @property
    def streams(self) -> tuple[str, ...]:
        return {"body": ("body",), "face": ("face",), "both": ("face", "body")}[self.features]

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "RegressorSpec":
        d = dict(d)
        for key in ("face_stream", "body_stream"):
            if isinstance(d.get(key), dict):
                d[key] = StreamSpec(**d[key])
        return cls(**d)


def vector_input(batch: Mapping[str, np.ndarray], features: str) -> np.ndarray:
    """Pre-computed feature vector used by Linear and ShallowNet."""
    parts = []
    if features in ("body", "both"):
        if "keypoints" not in batch:
            raise StreamInputMissing("keypoints required")
        parts.append(batch["keypoints"])
    if features in ("face", "both"):
        if "face" not in batch:
            raise StreamInputMissing("face features required")
        parts.append(batch["face"])
    return np.concatenate(parts, axis=1)


def _stream_source(stream: str, spec: StreamSpec) -> str:
    if stream == "face":
        return "face_pixels" if spec.kind == "conv" else "face"
    return "body_pixels" if spec.kind == "conv" else "keypoints"


# --- linear --------------------------------------------------------------------


def fit_linear(X: np.ndarray, y: np.ndarray, ridge: float = 1e-6) -> np.ndarray:
    """Ridge regression with an unpenalized intercept via the normal
    equations. Returns [w_1 .. w_d, w_0]."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise EmptyInput(f"fit_linear needs matching non-empty X, y; got {X.shape}, {y.shape}")
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    A = Xc.T @ Xc
    if ridge > 0:
        A = A + ridge * np.eye(A.shape[0])
    elif np.linalg.matrix_rank(A) < A.shape[0]:
        raise SingularSystem("X^T X is singular and ridge is 0")
    try:
        w = np.linalg.solve(A, Xc.T @ (y - y_mean))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from None
    return np.concatenate([w, [y_mean - x_mean @ w]])


# --- models --------------------------------------------------------------------


class HeightModel:
    """Common interface: ``predict(batch)`` -> heights in cm."""

    spec: RegressorSpec

    def predict(self, batch: Mapping[str, np.ndarray]) -> np.ndarray:
        raise NotImplementedError


class LinearModel(HeightModel):
    def __init__(self, spec: RegressorSpec, weights: np.ndarray | None = None):
        self.spec = spec
        self.weights = weights

    def fit(self, batch, y) -> "LinearModel":
        self.weights = fit_linear(vector_input(batch, self.spec.features), y, self.spec.ridge)
        return self

    def predict(self, batch) -> np.ndarray:
        X = vector_input(batch, self.spec.features)
        return X @ self.weights[:-1] + self.weights[-1]


@dataclass
class Standardizer:
    mean: dict[str, np.ndarray] = field(default_factory=dict)
    std: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def fit(cls, batch: Mapping[str, np.ndarray], keys: Sequence[str]) -> "Standardizer":
        s = cls()
        for k in keys:
            x = batch[k]
            if x.ndim == 2:
                m, sd = x.mean(axis=0), x.std(axis=0)
                sd = np.where(sd > 1e-8, sd, 1.0)
            else:  # pixel tensors: one scalar per channel set
                m, sd = np.array(x.mean()), np.array(x.std() or 1.0)
            s.mean[k], s.std[k] = m, sd
        return s

    def apply(self, batch: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Keys never fitted pass through unchanged."""
        return {k: (v - self.mean[k]) / self.std[k] if k in self.mean else v for k, v in batch.items()}

    def to_dict(self) -> dict:
        return {k: {"mean": np.ravel(self.mean[k]).tolist(), "std": np.ravel(self.std[k]).tolist(),
                    "scalar": self.mean[k].ndim == 0} for k in self.mean}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        s = cls()
        for k, v in d.items():
            if v["scalar"]:
                s.mean[k], s.std[k] = np.array(v["mean"][0]), np.array(v["std"][0])
            else:
                s.mean[k], s.std[k] = np.array(v["mean"]), np.array(v["std"])
        return s


class NetModel(HeightModel):
    """ShallowNet, DeepNet or the gender classifier over a flat parameter store.

    Regression nets predict the standardized residual from the training
    mean; ``predict`` maps back to centimeters.
    """

    def __init__(self, spec: RegressorSpec, input_shapes: Mapping[str, tuple[int, ...]]):
        self.spec = spec
        self.input_shapes = {k: tuple(v) for k, v in input_shapes.items()}
        self.layout = make_layout(self._layout_entries())
        self.params: ModelParams = init_params(self.layout, spec.seed)
        self.standardizer = Standardizer()
        self.target_mean = 0.0
        self.target_scale = 1.0

    # -- architecture --

    def _inputs_needed(self) -> list[str]:
        if self.spec.kind == "shallow":
            return [k for k in ("keypoints", "face") if k in self._vector_keys()]
        return [_stream_source(s, self._stream_spec(s)) for s in self.spec.streams]

    def _vector_keys(self) -> tuple[str, ...]:
        return {"body": ("keypoints",), "face": ("face",), "both": ("keypoints", "face")}[self.spec.features]

    def _stream_spec(self, stream: str) -> StreamSpec:
        return self.spec.face_stream if stream == "face" else self.spec.body_stream

    def _layout_entries(self) -> list[tuple[str, tuple[int, ...]]]:
        entries: list[tuple[str, tuple[int, ...]]] = []
        for key in self._inputs_needed():
            if key not in self.input_shapes:
                raise StreamInputMissing(f"model needs input {key!r}")

        if self.spec.kind == "shallow":
            dim = sum(self.input_shapes[k][0] for k in self._vector_keys())
            for i, w in enumerate(self.spec.widths):
                entries += [(f"dense{i}.W", (dim, w)), (f"dense{i}.b", (w,))]
                dim = w
            entries += [("dense3.W", (dim, 1)), ("dense3.b", (1,))]
            return entries

        fused = 0
        for stream in self.spec.streams:
            ss = self._stream_spec(stream)
            shape = self.input_shapes[_stream_source(stream, ss)]
            if ss.kind == "mlp":
                dim = shape[0]
                for i, w in enumerate(ss.widths):
                    entries += [(f"{stream}.dense{i}.W", (dim, w)), (f"{stream}.dense{i}.b", (w,))]
                    dim = w
            else:
                c, h, w_ = shape
                for i, ch in enumerate(ss.channels):
                    entries += [(f"{stream}.conv{i}.K", (ch, c, ss.kernel, ss.kernel)), (f"{stream}.conv{i}.b", (ch,))]
                    h = conv_out_size(h, ss.kernel, ss.stride) // ss.pool
                    w_ = conv_out_size(w_, ss.kernel, ss.stride) // ss.pool
                    if h < 1 or w_ < 1:
                        raise SpecError(f"{stream} conv stack shrinks input {shape} to nothing")
                    c = ch
                entries += [(f"{stream}.proj.W", (c * h * w_, ss.embed)), (f"{stream}.proj.b", (ss.embed,))]
                dim = ss.embed
            fused += dim
        entries += [
            ("fuse0.W", (fused, self.spec.fusion_width)),
            ("fuse0.b", (self.spec.fusion_width,)),
            ("fuse1.W", (self.spec.fusion_width, 1)),
            ("fuse1.b", (1,)),
        ]
        return entries

    def dense_layer_count(self, prefix: str = "") -> int:
        """Number of dense weight slots whose name starts with ``prefix``."""
        return sum(
            1 for n in self.layout
            if n.startswith(prefix) and n.endswith(".W") and n.split(".")[-2].startswith(("dense", "fuse", "proj"))
        )

    def _dense(self, x: Tensor, name: str) -> Tensor:
        return dense(x, self.params.tensor(f"{name}.W"), self.params.tensor(f"{name}.b"))

    def _encode(self, stream: str, x: Tensor) -> Tensor:
        ss = self._stream_spec(stream)
        if ss.kind == "mlp":
            for i in range(len(ss.widths)):
                x = relu(self._dense(x, f"{stream}.dense{i}"))
            return x
        for i in range(len(ss.channels)):
            p = self.params
            x = conv2d(x, p.tensor(f"{stream}.conv{i}.K"), p.tensor(f"{stream}.conv{i}.b"), ss.stride)
            x = avgpool(relu(x), ss.pool)
        return relu(self._dense(flatten(x), f"{stream}.proj"))

    def forward(self, inputs: Mapping[str, np.ndarray]) -> Tensor:
        """Graph output [n, 1] for already-standardized inputs."""
        if self.spec.kind == "shallow":
            h = Tensor(np.concatenate([inputs[k] for k in self._vector_keys()], axis=1))
            for i in range(3):
                h = relu(self._dense(h, f"dense{i}"))
            return self._dense(h, "dense3")
        codes = []
        for stream in self.spec.streams:
            key = _stream_source(stream, self._stream_spec(stream))
            if key not in inputs:
                raise StreamInputMissing(f"{stream} stream needs input {key!r}")
            codes.append(self._encode(stream, Tensor(inputs[key])))
        h = codes[0] if len(codes) == 1 else concat(codes, axis=1)
        h = relu(self._dense(h, "fuse0"))
        return self._dense(h, "fuse1")

    def prepare(self, batch: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        for k in self._inputs_needed():
            if k not in batch:
                raise StreamInputMissing(f"model needs input {k!r}")
        return self.standardizer.apply({k: batch[k] for k in self._inputs_needed()})

    def raw_output(self, batch: Mapping[str, np.ndarray]) -> np.ndarray:
        return self.forward(self.prepare(batch)).data[:, 0]

    def predict(self, batch) -> np.ndarray:
        out = self.raw_output(batch)
        if self.spec.kind == "genderpred":
            return sigmoid(out)
        return self.target_mean + self.target_scale * out

    # -- persistence --

    def meta(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "input_shapes": {k: list(v) for k, v in self.input_shapes.items()},
            "standardizer": self.standardizer.to_dict(),
            "target_mean": self.target_mean,
            "target_scale": self.target_scale,
        }


def build_shallow(spec: RegressorSpec, input_shapes: Mapping[str, tuple[int, ...]]) -> NetModel:
    if spec.kind != "shallow":
        raise SpecError(f"build_shallow needs kind 'shallow', got {spec.kind!r}")
    return NetModel(spec, input_shapes)


def build_deep_two_stream(spec: RegressorSpec, input_shapes: Mapping[str, tuple[int, ...]]) -> NetModel:
    if spec.kind not in ("deep", "genderpred"):
        raise SpecError(f"build_deep_two_stream needs kind 'deep' or 'genderpred', got {spec.kind!r}")
    return NetModel(spec, input_shapes)


def input_shapes_of(batch: Mapping[str, np.ndarray]) -> dict[str, tuple[int, ...]]:
    return {k: tuple(v.shape[1:]) for k, v in batch.items()}


def build_model(spec: RegressorSpec, batch: Mapping[str, np.ndarray]) -> HeightModel:
    if spec.kind == "linear":
        return LinearModel(spec)
    if spec.kind == "shallow":
        return build_shallow(spec, input_shapes_of(batch))
    return build_deep_two_stream(spec, input_shapes_of(batch))


def shallow_param_count(in_dim: int, widths: Sequence[int]) -> int:
    dims = [in_dim, *widths, 1]
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


# --- training --------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    lr_decay: float = 0.97  # per-epoch multiplicative decay
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainResult:
    model: HeightModel
    history: list[dict]
    best_epoch: int

    def history_bytes(self) -> bytes:
        return json.dumps(self.history, sort_keys=True).encode()


def _mae(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.abs(a - b)))


def train_regressor(
    model: HeightModel,
    train: tuple[Mapping[str, np.ndarray], np.ndarray],
    val: tuple[Mapping[str, np.ndarray], np.ndarray],
    config: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Fit on (batch, heights) pairs, early-stopping on validation MAE."""
    train_batch, y_train = train
    val_batch, y_val = val
    if len(y_train) == 0 or len(y_val) == 0:
        raise EmptyInput("train and validation sets must be non-empty")
    if isinstance(model, LinearModel):
        model.fit(train_batch, y_train)
        return TrainResult(model, [{"epoch": 0, "train_loss": _mse(model.predict(train_batch), y_train),
                                    "val_mae": _mae(model.predict(val_batch), y_val)}], 0)
    assert isinstance(model, NetModel)
    if model.spec.kind == "genderpred":
        raise SpecError("use train_gender_pred for the gender classifier")

    model.standardizer = Standardizer.fit(train_batch, model._inputs_needed())
    model.target_mean = float(np.mean(y_train))
    model.target_scale = float(np.std(y_train)) or 1.0
    inputs = model.prepare(train_batch)
    targets = ((y_train - model.target_mean) / model.target_scale)[:, None]
    return _fit(model, inputs, targets, config, loss="mse",
                score=lambda: _mae(model.predict(val_batch), y_val))


def _mse(a, b) -> float:
    return float(np.mean((a - b) ** 2))


def _fit(model: NetModel, inputs, targets, config: TrainConfig, loss: str, score) -> TrainResult:
    n = len(targets)
    opt = SGD(model.params, config.lr, config.momentum)
    best = math.inf
    best_values = model.params.values.copy()
    best_epoch = 0
    history = []
    stale = 0
    for epoch in range(config.max_epochs):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            model.params.zero_grad()
            step = opt.steps + 1
            # non-finite values are caught explicitly below
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    out = model.forward(take(inputs, idx))
                    L = mse_loss(out, targets[idx]) if loss == "mse" else bce_loss(out, targets[idx])
                    L.backward()
                    opt.step()
            except DivergenceFault as exc:
                raise DivergenceFault(str(exc), step=step, epoch=epoch) from None
            total += float(L.data) * len(idx)
        train_loss = total / n
        if loss == "mse":
            train_loss *= model.target_scale**2  # report in cm^2
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                val = score()
        except DivergenceFault as exc:
            raise DivergenceFault(str(exc), step=opt.steps, epoch=epoch) from None
        history.append({"epoch": epoch, "train_loss": train_loss, "val_score": val})
        if val < best - 1e-12:
            best, best_epoch, stale = val, epoch, 0
            best_values = model.params.values.copy()
        else:
            stale += 1
            if stale >= config.patience:
                break
        opt.lr *= config.lr_decay
    model.params.load_values(best_values)
    if loss == "mse":
        for h in history:
            h["val_mae"] = h.pop("val_score")
    return TrainResult(model, history, best_epoch)


def predict_height(model: HeightModel, bundle: FeatureBundle) -> float:
    out = float(model.predict(bundles_to_batch([bundle]))[0])
    if not math.isfinite(out):
        raise DivergenceFault("non-finite prediction")
    return out


# --- GenderPred --------------------------------------------------------------------


def train_gender_pred(
    model: NetModel,
    train: tuple[Mapping[str, np.ndarray], Sequence[Gender]],
    val: tuple[Mapping[str, np.ndarray], Sequence[Gender]],
    config: TrainConfig = TrainConfig(),
) -> TrainResult:
    """BCE-train the two-stream classifier (label 1 = Male); rows with
    Unknown gender are skipped."""
    if model.spec.kind != "genderpred":
        raise SpecError("train_gender_pred needs a 'genderpred' model")

    def known(batch, genders):
        keep = np.array([g is not Gender.UNKNOWN for g in genders], dtype=bool)
        labels = np.array([1.0 if g is Gender.MALE else 0.0 for g in genders])[keep]
        return take(batch, np.flatnonzero(keep)), labels, int((~keep).sum())

    tb, ty, skipped = known(*train)
    vb, vy, _ = known(*val)
    if len(ty) == 0 or len(vy) == 0:
        raise InsufficientLabels("no gendered rows to train the gender classifier")
    if skipped:
        log.info("gender classifier: skipped %d rows of unknown gender", skipped)
    model.standardizer = Standardizer.fit(tb, model._inputs_needed())
    inputs = model.prepare(tb)

    def val_error():
        return float(np.mean((model.predict(vb) >= 0.5) != (vy == 1.0)))

    return _fit(model, inputs, ty[:, None], config, loss="bce", score=val_error)


def predict_gender_height(
    classifier: NetModel, batch: Mapping[str, np.ndarray], gender_means: Mapping[Gender, float]
) -> np.ndarray:
    """Mean height of the predicted gender (sigmoid >= 0.5 means Male)."""
    male = classifier.predict(batch) >= 0.5
    return np.where(male, gender_means[Gender.MALE], gender_means[Gender.FEMALE])


# --- persistence ---------------------------------------------------------------------


def save_model(path: str | Path, model: HeightModel, config_hash: str = "") -> None:
    if isinstance(model, LinearModel):
        layout = make_layout([("linear.w", (len(model.weights),))])
        params = ModelParams(model.weights.copy(), layout, model.spec.seed)
        meta = {"spec": model.spec.to_dict()}
    else:
        params, meta = model.params, model.meta()
    meta = dict(meta, config_hash=config_hash)
    save_checkpoint(path, params, meta)


def load_model(path: str | Path) -> tuple[HeightModel, dict]:
    params, meta = load_checkpoint(path)
    spec = RegressorSpec.from_dict(meta["spec"])
    if spec.kind == "linear":
        return LinearModel(spec, params.values.copy()), meta
    model = NetModel(spec, {k: tuple(v) for k, v in meta["input_shapes"].items()})
    model.params.load_values(params.values)
    model.standardizer = Standardizer.from_dict(meta["standardizer"])
    model.target_mean = meta["target_mean"]
    model.target_scale = meta["target_scale"]
    return model, meta
