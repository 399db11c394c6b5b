"""Reverse-mode differentiation, layers, parameters and optimizer."""

from .params import SGD, ModelParams, Slot, init_params, load_checkpoint, make_layout, save_checkpoint, sgd_step
from .tensor import (
    Tensor,
    add,
    avgpool,
    bce_loss,
    concat,
    conv2d,
    dense,
    flatten,
    mse_loss,
    relu,
    reshape,
    scale,
    sigmoid,
    topological_order,
    weighted_sum,
)

__all__ = [
    "SGD",
    "ModelParams",
    "Slot",
    "Tensor",
    "add",
    "avgpool",
    "bce_loss",
    "concat",
    "conv2d",
    "dense",
    "flatten",
    "init_params",
    "load_checkpoint",
    "make_layout",
    "mse_loss",
    "relu",
    "reshape",
    "save_checkpoint",
    "scale",
    "sgd_step",
    "sigmoid",
    "topological_order",
    "weighted_sum",
]
