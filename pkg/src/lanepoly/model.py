"""Regression model: pluggable backbone + fully connected head, raw-vector
decoding into lane predictions, and the checkpoint format.

The raw output vector is laid out as m_max consecutive per-lane blocks
[a_0 .. a_K, s, c_logit] (plus top_y at the end of each block when the
horizon is not shared), followed by a single shared horizon value h.
Coefficients, s, top_y and h are raw linear outputs; only the confidence
logit passes through a sigmoid when decoding.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .geometry import Polynomial
from .nn import TinyConvBackbone, he_init, linear_backward, linear_forward

LOGIT_CLAMP = 50.0


def sigmoid(z):
    z = np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    return 1.0 / (1.0 + np.exp(-z))


def logit(p):
    p = np.clip(p, sigmoid(-LOGIT_CLAMP), sigmoid(LOGIT_CLAMP))
    return np.log(p / (1.0 - p))


@dataclass(frozen=True)
class HeadLayout:
    degree: int = 3
    m_max: int = 5
    share_h: bool = True

    @property
    def lane_block(self) -> int:
        # [a_0..a_K, s, c_logit] (+ top_y without sharing)
        return self.degree + 3 if self.share_h else self.degree + 4

    @property
    def output_dim(self) -> int:
        n = self.m_max * self.lane_block
        return n + 1 if self.share_h else n


@dataclass(frozen=True)
class LanePrediction:
    poly: Polynomial
    s: float  # normalized vertical offset (top of the lane)
    c: float  # confidence in [0, 1]
    top_y: float | None = None  # per-lane horizon when not shared


@dataclass(frozen=True)
class ModelOutput:
    lanes: tuple[LanePrediction, ...]
    h: float | None  # shared normalized horizon, None when per-lane

    def domain(self, j: int) -> tuple[float, float]:
        """Evaluation domain of lane j in normalized y: from the tighter of
        the lane's own top and the horizon down to the image bottom."""
        lane = self.lanes[j]
        tops = [lane.s]
        if self.h is not None:
            tops.append(self.h)
        if lane.top_y is not None:
            tops.append(lane.top_y)
        return max(tops), 1.0


def decode(raw: np.ndarray, layout: HeadLayout) -> ModelOutput:
    """Slice a raw head output into lane predictions.

    Only confidence logits are squashed; every other entry passes through
    untouched."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (layout.output_dim,):
        raise ShapeMismatch(
            f"raw vector has shape {raw.shape}, layout needs ({layout.output_dim},)")
    k = layout.degree
    lanes = []
    for j in range(layout.m_max):
        block = raw[j * layout.lane_block:(j + 1) * layout.lane_block]
        lanes.append(LanePrediction(
            poly=Polynomial(tuple(block[:k + 1])),
            s=float(block[k + 1]),
            c=float(sigmoid(block[k + 2])),
            top_y=None if layout.share_h else float(block[k + 3]),
        ))
    h = float(raw[-1]) if layout.share_h else None
    return ModelOutput(lanes=tuple(lanes), h=h)


def encode(out: ModelOutput, layout: HeadLayout) -> np.ndarray:
    """Inverse of decode (inverse sigmoid on confidences)."""
    if len(out.lanes) != layout.m_max:
        raise ShapeMismatch(f"{len(out.lanes)} lanes != m_max={layout.m_max}")
    raw = np.zeros(layout.output_dim)
    k = layout.degree
    for j, lane in enumerate(out.lanes):
        if lane.poly.degree != k:
            raise ShapeMismatch(f"lane {j} degree {lane.poly.degree} != {k}")
        base = j * layout.lane_block
        raw[base:base + k + 1] = lane.poly.coeffs
        raw[base + k + 1] = lane.s
        raw[base + k + 2] = logit(lane.c)
        if not layout.share_h:
            raw[base + k + 3] = lane.top_y
    if layout.share_h:
        raw[-1] = out.h
    return raw


class LaneRegressionModel:
    """Backbone feature extractor plus a linear head emitting the raw
    output vector.  Images enter as float arrays in [0, 1] with shape
    (C, H, W) matching the configured input size."""

    def __init__(self, layout: HeadLayout = HeadLayout(),
                 input_size: tuple[int, int] = (640, 360),
                 in_channels: int = 1,
                 channels: tuple[int, ...] = (8, 16, 32, 64),
                 backbone=None):
        self.layout = layout
        self.input_size = tuple(input_size)
        self.in_channels = in_channels
        self.channels = tuple(channels)
        self.backbone = backbone or TinyConvBackbone(in_channels, channels)

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        params = self.backbone.init_params(rng)
        f = self.backbone.n_features
        params["head_w"] = he_init(rng, (self.layout.output_dim, f), f) * 0.1
        params["head_b"] = np.zeros(self.layout.output_dim)
        return params

    def _check_image(self, image: np.ndarray) -> np.ndarray:
        x = np.asarray(image, dtype=float)
        if x.ndim == 2:
            x = x[None]
        w, h = self.input_size
        if x.shape != (self.in_channels, h, w):
            raise ShapeMismatch(
                f"image shape {x.shape} != ({self.in_channels}, {h}, {w})")
        return x

    def forward(self, params, image):
        """Returns (raw_vector, cache); deterministic for fixed inputs."""
        x = self._check_image(image)
        feat, bb_cache = self.backbone.forward(params, x)
        raw, head_cache = linear_forward(feat, params["head_w"], params["head_b"])
        return raw, (bb_cache, head_cache)

    def backward(self, params, cache, draw):
        """Gradients of raw . draw with respect to every parameter."""
        bb_cache, head_cache = cache
        dfeat, dw, db = linear_backward(draw, params["head_w"], head_cache)
        grads, _ = self.backbone.backward(params, bb_cache, dfeat)
        grads["head_w"] = dw
        grads["head_b"] = db
        return grads

    def predict_raw(self, params, image) -> np.ndarray:
        return self.forward(params, image)[0]

    def predict(self, params, image) -> ModelOutput:
        return decode(self.predict_raw(params, image), self.layout)


# ---------------------------------------------------------------------------
# checkpoint container: one JSON header line with layout metadata followed
# by the flat float64 parameter arrays in sorted name order.  Fully
# deterministic bytes for identical inputs.

CHECKPOINT_MAGIC = b"LANEPOLY-CKPT-v1\n"


def save_checkpoint(path, model: LaneRegressionModel, params: dict) -> None:
    names = sorted(params)
    header = {
        "degree": model.layout.degree,
        "m_max": model.layout.m_max,
        "share_h": model.layout.share_h,
        "input_size": list(model.input_size),
        "in_channels": model.in_channels,
        "channels": list(model.channels),
        "params": {n: list(params[n].shape) for n in names},
    }
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for n in names:
            f.write(np.ascontiguousarray(params[n], dtype=np.float64).tobytes())


def load_checkpoint(path) -> tuple[LaneRegressionModel, dict]:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a lanepoly checkpoint")
        header = json.loads(f.readline().decode())
        model = LaneRegressionModel(
            layout=HeadLayout(degree=header["degree"], m_max=header["m_max"],
                              share_h=header["share_h"]),
            input_size=tuple(header["input_size"]),
            in_channels=header["in_channels"],
            channels=tuple(header["channels"]),
        )
        params = {}
        for n, shape in header["params"].items():
            n_vals = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * n_vals)
            params[n] = np.frombuffer(buf, dtype=np.float64).reshape(shape).copy()
    return model, params
