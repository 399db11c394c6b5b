"""Flat parameter storage, initialization, SGD and checkpoints."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import DivergenceFault, SpecError, ValidationError
from .tensor import Tensor


@dataclass(frozen=True)
class Slot:
    name: str
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def is_bias(self) -> bool:
        return self.name.endswith(".b")


def make_layout(entries: Iterable[tuple[str, Sequence[int]]]) -> dict[str, Slot]:
    """Pack named shapes back to back."""
    layout: dict[str, Slot] = {}
    offset = 0
    for name, shape in entries:
        if name in layout:
            raise SpecError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise SpecError(f"parameter {name!r} has non-positive shape {shape}")
        slot = Slot(name, offset, shape)
        layout[name] = slot
        offset += slot.size
    return layout


def layout_size(layout: dict[str, Slot]) -> int:
    return sum(s.size for s in layout.values())


def check_layout(layout: dict[str, Slot], n_values: int) -> None:
    """Slots must be disjoint and tile [0, n_values) exactly."""
    cursor = 0
    for slot in sorted(layout.values(), key=lambda s: s.offset):
        if slot.offset != cursor:
            raise ValidationError(f"layout gap or overlap at {slot.name!r} (offset {slot.offset}, expected {cursor})")
        cursor += slot.size
    if cursor != n_values:
        raise ValidationError(f"layout covers {cursor} values, buffer has {n_values}")


def fans(slot: Slot) -> tuple[int, int]:
    shape = slot.shape
    if len(shape) == 2:  # dense [in, out]
        return shape[0], shape[1]
    if len(shape) == 4:  # conv [out, in, kh, kw]
        rf = shape[2] * shape[3]
        return shape[1] * rf, shape[0] * rf
    return shape[0], shape[0]


class ModelParams:
    """All parameters of one model in a single float64 buffer.

    ``tensor(name)`` returns a Tensor whose data and grad are views into the
    flat value and gradient buffers, so one SGD step updates everything.
    """

    def __init__(self, values: np.ndarray, layout: dict[str, Slot], seed: int):
        values = np.ascontiguousarray(values, dtype=np.float64)
        check_layout(layout, values.size)
        if not np.all(np.isfinite(values)):
            raise ValidationError("parameter values must be finite")
        self.values = values
        self.layout = dict(layout)
        self.seed = int(seed)
        self.grad = np.zeros_like(values)
        self._tensors: dict[str, Tensor] = {}

    def __len__(self) -> int:
        return self.values.size

    def view(self, name: str) -> np.ndarray:
        s = self.layout[name]
        return self.values[s.offset : s.offset + s.size].reshape(s.shape)

    def grad_view(self, name: str) -> np.ndarray:
        s = self.layout[name]
        return self.grad[s.offset : s.offset + s.size].reshape(s.shape)

    def tensor(self, name: str) -> Tensor:
        t = self._tensors.get(name)
        if t is None:
            t = Tensor(self.view(name), requires_grad=True, grad=self.grad_view(name))
            self._tensors[name] = t
        return t

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def copy(self) -> "ModelParams":
        return ModelParams(self.values.copy(), self.layout, self.seed)

    def load_values(self, values: np.ndarray) -> None:
        self.values[...] = values


def _slot_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),))))


def init_params(layout: dict[str, Slot], seed: int) -> ModelParams:
    """Glorot-uniform weights and zero biases; each slot draws from its own
    generator keyed by (seed, slot name)."""
    values = np.zeros(layout_size(layout))
    for slot in layout.values():
        if slot.is_bias:
            continue
        fan_in, fan_out = fans(slot)
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        values[slot.offset : slot.offset + slot.size] = _slot_rng(seed, slot.name).uniform(-limit, limit, slot.size)
    return ModelParams(values, layout, seed)


def sgd_step(
    values: np.ndarray,
    grads: np.ndarray,
    velocity: np.ndarray,
    lr: float,
    momentum: float = 0.9,
    step: int | None = None,
) -> np.ndarray:
    """In-place momentum SGD: v <- mu*v + g; theta <- theta - lr*v."""
    if not np.all(np.isfinite(grads)):
        raise DivergenceFault("non-finite gradient in SGD update", step=step)
    velocity *= momentum
    velocity += grads
    values -= lr * velocity
    if not np.all(np.isfinite(values)):
        raise DivergenceFault("parameters became non-finite", step=step)
    return values


class SGD:
    def __init__(self, params: ModelParams, lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = np.zeros_like(params.values)
        self.steps = 0

    def step(self) -> None:
        self.steps += 1
        sgd_step(self.params.values, self.params.grad, self.velocity, self.lr, self.momentum, self.steps)


# --- checkpoints --------------------------------------------------------------

MAGIC = b"MONOHEIGHT-CKPT 1\n"


def save_checkpoint(path: str | Path, params: ModelParams, meta: dict) -> None:
    """Header line (JSON: layout, seed, meta) followed by raw little-endian
    float64 values. Byte-identical for identical inputs."""
    header = {
        "layout": [[s.name, s.offset, list(s.shape)] for s in params.layout.values()],
        "seed": params.seed,
        "n_values": len(params),
        "meta": meta,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(blob + b"\n")
        fh.write(params.values.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValidationError(f"{path}: not a monoheight checkpoint")
        header = json.loads(fh.readline())
        raw = fh.read()
    values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if values.size != header["n_values"]:
        raise ValidationError(f"{path}: expected {header['n_values']} values, found {values.size}")
    layout = {name: Slot(name, int(off), tuple(shape)) for name, off, shape in header["layout"]}
    return ModelParams(values, layout, header["seed"]), header["meta"]
