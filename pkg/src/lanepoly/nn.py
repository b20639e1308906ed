"""Minimal float64 neural-net layers with hand-written backward passes.

Parameters live in plain dicts of numpy arrays keyed by layer name, so
optimizers, checkpoints and finite-difference checks can treat them
uniformly.  Everything runs on a single image (C, H, W); batching is a
loop at the training level, which keeps gradient accumulation order fixed
and results bit-reproducible.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, b, stride=1, pad=1):
    """x: (C, H, W), w: (O, C, kh, kw), b: (O,).  Returns (out, cache)."""
    o, c, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    # windows: (C, Ho, Wo, kh, kw)
    _, ho, wo, _, _ = windows.shape
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * kh * kw)
    out = cols @ w.reshape(o, -1).T + b
    return out.reshape(ho, wo, o).transpose(2, 0, 1), (cols, x.shape, ho, wo)


def conv2d_backward(dout, w, cache, stride=1, pad=1):
    """dout: (O, Ho, Wo).  Returns (dx, dw, db)."""
    cols, x_shape, ho, wo = cache
    o, c, kh, kw = w.shape
    dcols_rows = dout.transpose(1, 2, 0).reshape(ho * wo, o)
    dw = (dcols_rows.T @ cols).reshape(w.shape)
    db = dcols_rows.sum(axis=0)
    dcols = (dcols_rows @ w.reshape(o, -1)).reshape(ho, wo, c, kh, kw)
    ch, hh, ww = x_shape
    dxp = np.zeros((c, hh + 2 * pad, ww + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            patch = dcols[:, :, :, i, j].transpose(2, 0, 1)  # (C, Ho, Wo)
            dxp[:, i:i + ho * stride:stride, j:j + wo * stride:stride] += patch
    dx = dxp[:, pad:pad + hh, pad:pad + ww]
    return dx, dw, db


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0.0


def relu_backward(dout, mask):
    return dout * mask


def global_avg_pool_forward(x):
    """(C, H, W) -> (C,)"""
    return x.mean(axis=(1, 2)), x.shape


def global_avg_pool_backward(dout, x_shape):
    c, h, w = x_shape
    return np.broadcast_to(dout[:, None, None] / (h * w), x_shape).copy()


def linear_forward(x, w, b):
    """x: (F,), w: (O, F), b: (O,)."""
    return w @ x + b, x


def linear_backward(dout, w, x):
    return w.T @ dout, np.outer(dout, x), dout.copy()


def he_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class TinyConvBackbone:
    """Reference feature extractor: stacked stride-2 3x3 conv + ReLU blocks
    followed by global average pooling.

    Any object with the same (init_params, forward, backward, n_features)
    surface can stand in for it; this is where larger pretrained backbones
    would plug into the model.
    """

    def __init__(self, in_channels: int = 1, channels: tuple[int, ...] = (8, 16, 32, 64)):
        self.in_channels = in_channels
        self.channels = tuple(channels)

    @property
    def n_features(self) -> int:
        return self.channels[-1]

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        c_in = self.in_channels
        for i, c_out in enumerate(self.channels):
            shapes[f"conv{i}_w"] = (c_out, c_in, 3, 3)
            shapes[f"conv{i}_b"] = (c_out,)
            c_in = c_out
        return shapes

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        params = {}
        c_in = self.in_channels
        for i, c_out in enumerate(self.channels):
            params[f"conv{i}_w"] = he_init(rng, (c_out, c_in, 3, 3), c_in * 9)
            params[f"conv{i}_b"] = np.zeros(c_out)
            c_in = c_out
        return params

    def forward(self, params, x):
        caches = []
        for i in range(len(self.channels)):
            x, conv_cache = conv2d_forward(x, params[f"conv{i}_w"],
                                           params[f"conv{i}_b"], stride=2, pad=1)
            x, relu_cache = relu_forward(x)
            caches.append((conv_cache, relu_cache))
        feat, pool_cache = global_avg_pool_forward(x)
        caches.append(pool_cache)
        return feat, caches

    def backward(self, params, caches, dfeat):
        grads = {}
        dx = global_avg_pool_backward(dfeat, caches[-1])
        for i in reversed(range(len(self.channels))):
            conv_cache, relu_cache = caches[i]
            dx = relu_backward(dx, relu_cache)
            dx, dw, db = conv2d_backward(dx, params[f"conv{i}_w"], conv_cache,
                                         stride=2, pad=1)
            grads[f"conv{i}_w"] = dw
            grads[f"conv{i}_b"] = db
        return grads, dx
