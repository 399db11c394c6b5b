"""Convolution and pooling kernels, forward and backward.

Two interchangeable implementations: explicit loops compiled with numba, and
a vectorized numpy path (sliding windows + tensordot). The numba path is
used when numba imports and ``MONOHEIGHT_DISABLE_NUMBA`` is unset or "0".
Both are single-threaded and deterministic.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("MONOHEIGHT_DISABLE_NUMBA", "0") in ("", "0")


def conv_out_size(size: int, k: int, stride: int) -> int:
    return (size - k) // stride + 1


# --- numpy -------------------------------------------------------------------


def np_conv2d_forward(x, w, stride):
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def np_conv2d_backward(x, w, gout, stride):
    kh, kw = w.shape[2], w.shape[3]
    oh, ow = gout.shape[2], gout.shape[3]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    gw = np.tensordot(gout, win, axes=([0, 2, 3], [0, 2, 3]))
    gx = np.zeros_like(x)
    for p in range(kh):
        for q in range(kw):
            contrib = np.tensordot(gout, w[:, :, p, q], axes=([1], [0])).transpose(0, 3, 1, 2)
            gx[:, :, p : p + stride * (oh - 1) + 1 : stride, q : q + stride * (ow - 1) + 1 : stride] += contrib
    return gx, np.ascontiguousarray(gw)


def np_avgpool_forward(x, k):
    n, c, h, w = x.shape
    oh, ow = h // k, w // k
    return x[:, :, : oh * k, : ow * k].reshape(n, c, oh, k, ow, k).mean(axis=(3, 5))


def np_avgpool_backward(gout, k, in_shape):
    n, c, h, w = in_shape
    oh, ow = gout.shape[2], gout.shape[3]
    gx = np.zeros(in_shape)
    spread = np.repeat(np.repeat(gout / (k * k), k, axis=2), k, axis=3)
    gx[:, :, : oh * k, : ow * k] = spread
    return gx


# --- numba -------------------------------------------------------------------

if HAVE_NUMBA:

    # loops ordered so the innermost runs along contiguous output columns
    @njit(cache=True)
    def _nb_conv2d_forward(x, w, stride):
        n, c, h, wd = x.shape
        o, _, kh, kw = w.shape
        oh = (h - kh) // stride + 1
        ow = (wd - kw) // stride + 1
        out = np.zeros((n, o, oh, ow))
        for b in range(n):
            for f in range(o):
                for ch in range(c):
                    for p in range(kh):
                        for q in range(kw):
                            wv = w[f, ch, p, q]
                            for i in range(oh):
                                xrow = x[b, ch, i * stride + p]
                                orow = out[b, f, i]
                                for j in range(ow):
                                    orow[j] += wv * xrow[j * stride + q]
        return out

    @njit(cache=True)
    def _nb_conv2d_backward(x, w, gout, stride):
        n, c, h, wd = x.shape
        o, _, kh, kw = w.shape
        oh = gout.shape[2]
        ow = gout.shape[3]
        gx = np.zeros_like(x)
        gw = np.zeros_like(w)
        for b in range(n):
            for f in range(o):
                for ch in range(c):
                    for p in range(kh):
                        for q in range(kw):
                            wv = w[f, ch, p, q]
                            acc = 0.0
                            for i in range(oh):
                                xrow = x[b, ch, i * stride + p]
                                gxrow = gx[b, ch, i * stride + p]
                                grow = gout[b, f, i]
                                for j in range(ow):
                                    g = grow[j]
                                    gxrow[j * stride + q] += g * wv
                                    acc += g * xrow[j * stride + q]
                            gw[f, ch, p, q] += acc
        return gx, gw

    @njit(cache=True)
    def _nb_avgpool_forward(x, k):
        n, c, h, w = x.shape
        oh = h // k
        ow = w // k
        out = np.zeros((n, c, oh, ow))
        inv = 1.0 / (k * k)
        for b in range(n):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        acc = 0.0
                        for p in range(k):
                            for q in range(k):
                                acc += x[b, ch, i * k + p, j * k + q]
                        out[b, ch, i, j] = acc * inv
        return out

    @njit(cache=True)
    def _nb_avgpool_backward_impl(gout, k, gx):
        n, c, oh, ow = gout.shape
        inv = 1.0 / (k * k)
        for b in range(n):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        g = gout[b, ch, i, j] * inv
                        for p in range(k):
                            for q in range(k):
                                gx[b, ch, i * k + p, j * k + q] = g
        return gx

    def nb_conv2d_forward(x, w, stride):
        return _nb_conv2d_forward(np.ascontiguousarray(x), np.ascontiguousarray(w), stride)

    def nb_conv2d_backward(x, w, gout, stride):
        return _nb_conv2d_backward(
            np.ascontiguousarray(x), np.ascontiguousarray(w), np.ascontiguousarray(gout), stride
        )

    def nb_avgpool_forward(x, k):
        return _nb_avgpool_forward(np.ascontiguousarray(x), k)

    def nb_avgpool_backward(gout, k, in_shape):
        return _nb_avgpool_backward_impl(np.ascontiguousarray(gout), k, np.zeros(in_shape))


BACKENDS = {
    "numpy": {
        "conv2d_forward": np_conv2d_forward,
        "conv2d_backward": np_conv2d_backward,
        "avgpool_forward": np_avgpool_forward,
        "avgpool_backward": np_avgpool_backward,
    }
}
if HAVE_NUMBA:
    BACKENDS["numba"] = {
        "conv2d_forward": nb_conv2d_forward,
        "conv2d_backward": nb_conv2d_backward,
        "avgpool_forward": nb_avgpool_forward,
        "avgpool_backward": nb_avgpool_backward,
    }

BACKEND = "numba" if USE_NUMBA else "numpy"
_active = BACKENDS[BACKEND]

conv2d_forward = _active["conv2d_forward"]
conv2d_backward = _active["conv2d_backward"]
avgpool_forward = _active["avgpool_forward"]
avgpool_backward = _active["avgpool_backward"]
