"""Multi-task loss, exact loss gradients, Adam, and the training loop.

The loss for one image combines four terms: thresholded polynomial point
regression, vertical-offset MSE, confidence BCE over all slots, and
horizon MSE.  Point and offset terms run only over the M annotated lanes;
padding slots contribute through the confidence term alone.  All loss
math happens in normalized image coordinates; the point threshold is
given in pixels and divided by the image width.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .data import (AugmentConfig, ImageAnnotation, TrainingTarget, augment,
                   build_target)
from .errors import DivergedLoss, EmptyLane
from .geometry import Polynomial, eval_poly
from .model import (LOGIT_CLAMP, HeadLayout, LanePrediction,
                    LaneRegressionModel, ModelOutput, sigmoid)


@dataclass(frozen=True)
class LossWeights:
    w_p: float = 300.0
    w_s: float = 1.0
    w_c: float = 1.0
    w_h: float = 1.0
    tau_loss_px: float = 20.0


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    period: int = 770  # cosine annealing period, epochs
    batch_size: int = 16
    epochs: int = 770
    seed: int = 0
    conf_threshold: float = 0.5
    augment: bool = False
    augment_config: AugmentConfig = AugmentConfig()


def point_loss(pred: LanePrediction | Polynomial, gt_points: np.ndarray,
               tau: float) -> float:
    """Mean squared thresholded residual of the prediction on gt points.

    Residuals with absolute value <= tau are zeroed so already-aligned
    points stop contributing; tau is in the same (normalized) units as
    the points."""
    poly = pred.poly if isinstance(pred, LanePrediction) else pred
    gt_points = np.asarray(gt_points, dtype=float)
    if len(gt_points) == 0:
        raise EmptyLane("point_loss needs at least one ground-truth point")
    r = eval_poly(poly, gt_points[:, 1]) - gt_points[:, 0]
    r = np.where(np.abs(r) > tau, r, 0.0)
    return float(np.mean(r * r))


def bce_with_logit(l: float, target: float) -> float:
    """Numerically stable binary cross entropy from a logit, clamped to
    |l| <= 50."""
    l = float(np.clip(l, -LOGIT_CLAMP, LOGIT_CLAMP))
    return max(l, 0.0) - target * l + np.log1p(np.exp(-abs(l)))


def total_loss(out: ModelOutput, tgt: TrainingTarget, w: LossWeights,
               image_width: int) -> tuple[float, dict]:
    """Weighted multi-task loss and its per-term breakdown.

    Images with no annotated lanes contribute only the confidence and
    horizon terms."""
    tau = w.tau_loss_px / image_width
    m = tgt.n_lanes
    m_max = len(tgt.lanes)
    lp = ls = lh = 0.0
    if m > 0:
        for j in range(m):
            lp += point_loss(out.lanes[j], tgt.lanes[j].points, tau)
            ls += (out.lanes[j].s - tgt.lanes[j].s) ** 2
        lp /= m
        ls /= m
    lc = sum(bce_with_logit(_conf_logit(out.lanes[j].c), tgt.lanes[j].c)
             for j in range(m_max)) / m_max
    if out.h is not None:
        lh = (out.h - tgt.h) ** 2
    elif m > 0:
        lh = sum((out.lanes[j].top_y - tgt.lanes[j].s) ** 2 for j in range(m)) / m
    breakdown = {"point": lp, "offset": ls, "conf": lc, "horizon": lh}
    total = w.w_p * lp + w.w_s * ls + w.w_c * lc + w.w_h * lh
    return float(total), breakdown


def _conf_logit(c: float) -> float:
    c = float(np.clip(c, sigmoid(-LOGIT_CLAMP), sigmoid(LOGIT_CLAMP)))
    return float(np.log(c / (1.0 - c)))


def loss_and_grad_raw(raw: np.ndarray, layout: HeadLayout,
                      tgt: TrainingTarget, w: LossWeights,
                      image_width: int) -> tuple[float, dict, np.ndarray]:
    """Loss, breakdown and its exact gradient with respect to the raw
    head output vector."""
    tau = w.tau_loss_px / image_width
    k = layout.degree
    m = tgt.n_lanes
    m_max = layout.m_max
    draw = np.zeros_like(raw)
    lp = ls = lh = lc = 0.0
    for j in range(m_max):
        base = j * layout.lane_block
        block = raw[base:base + layout.lane_block]
        # confidence BCE on every slot
        l_logit = float(np.clip(block[k + 2], -LOGIT_CLAMP, LOGIT_CLAMP))
        c_star = tgt.lanes[j].c
        lc += bce_with_logit(l_logit, c_star)
        if abs(block[k + 2]) < LOGIT_CLAMP:
            draw[base + k + 2] = w.w_c / m_max * (sigmoid(l_logit) - c_star)
        if j >= m:
            continue
        pts = tgt.lanes[j].points
        ys, xs = pts[:, 1], pts[:, 0]
        vander = np.vander(ys, k + 1, increasing=True)  # (N, K+1)
        r = vander @ block[:k + 1] - xs
        r = np.where(np.abs(r) > tau, r, 0.0)
        n = len(pts)
        lp += float(np.mean(r * r))
        draw[base:base + k + 1] += w.w_p / m * (2.0 / n) * (vander.T @ r)
        ds = block[k + 1] - tgt.lanes[j].s
        ls += ds * ds
        draw[base + k + 1] += w.w_s / m * 2.0 * ds
        if not layout.share_h:
            dt = block[k + 3] - tgt.lanes[j].s
            lh += dt * dt
            draw[base + k + 3] += w.w_h / m * 2.0 * dt
    lc /= m_max
    if m > 0:
        lp /= m
        ls /= m
        if not layout.share_h:
            lh /= m
    if layout.share_h:
        dh = raw[-1] - tgt.h
        lh = dh * dh
        draw[-1] = w.w_h * 2.0 * dh
    breakdown = {"point": lp, "offset": ls, "conf": lc, "horizon": lh}
    total = w.w_p * lp + w.w_s * ls + w.w_c * lc + w.w_h * lh
    return float(total), breakdown, draw


# ---------------------------------------------------------------------------
# optimizer and schedule

class Adam:
    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p) for n, p in params.items()}
        self.v = {n: np.zeros_like(p) for n, p in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for n in sorted(params):
            g = grads[n]
            self.m[n] = b1 * self.m[n] + (1 - b1) * g
            self.v[n] = b2 * self.v[n] + (1 - b2) * g * g
            m_hat = self.m[n] / bias1
            v_hat = self.v[n] / bias2
            params[n] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def cosine_lr(base_lr: float, epoch: int, period: int) -> float:
    """Cosine annealing from base_lr to 0 over `period` epochs, restarting
    afterwards."""
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * (epoch % period) / period))


# ---------------------------------------------------------------------------
# training loop

def to_model_input(image: np.ndarray, input_size: tuple[int, int],
                   in_channels: int) -> np.ndarray:
    """uint8 raster -> float (C, H, W) in [0, 1] at the model input size."""
    w, h = input_size
    pil = Image.fromarray(image)
    if pil.size != (w, h):
        pil = pil.resize((w, h), Image.BILINEAR)
    x = np.asarray(pil, dtype=float) / 255.0
    if x.ndim == 2:
        x = x[None]
    else:
        x = x.transpose(2, 0, 1)
    if x.shape[0] != in_channels:
        if in_channels == 1:
            x = x.mean(axis=0, keepdims=True)
        else:
            x = np.broadcast_to(x, (in_channels,) + x.shape[1:]).copy()
    return x


def train(
    model: LaneRegressionModel,
    dataset: list[tuple[np.ndarray, ImageAnnotation]],
    config: TrainConfig,
    weights: LossWeights = LossWeights(),
    log_path=None,
    params: dict | None = None,
) -> tuple[dict, list[dict]]:
    """Mini-batch Adam training, deterministic for a fixed seed.

    Randomness is forked from config.seed with fixed labels (0: init,
    1: shuffling, 2: augmentation).  Gradients accumulate over each batch
    in iteration order; the learning rate follows cosine annealing per
    epoch.  Raises DivergedLoss (carrying .last_params) if the loss goes
    non-finite."""
    if not dataset:
        raise ValueError("dataset is empty")
    if params is None:
        params = model.init_params(np.random.default_rng([config.seed, 0]))
    shuffle_rng = np.random.default_rng([config.seed, 1])
    augment_rng = np.random.default_rng([config.seed, 2])
    opt = Adam(params, config.lr)
    m_max = model.layout.m_max
    log: list[dict] = []
    log_file = open(log_path, "w") if log_path else None
    step = 0
    try:
        for epoch in range(config.epochs):
            opt.lr = cosine_lr(config.lr, epoch, config.period)
            order = shuffle_rng.permutation(len(dataset))
            epoch_terms = {"point": 0.0, "offset": 0.0, "conf": 0.0, "horizon": 0.0}
            epoch_loss = 0.0
            n_seen = 0
            for start in range(0, len(order), config.batch_size):
                batch = order[start:start + config.batch_size]
                grads_sum = None
                for idx in batch:
                    image, anno = dataset[idx]
                    if config.augment:
                        anno_t, image_t = augment(anno, image, augment_rng,
                                                  config.augment_config)
                    else:
                        anno_t, image_t = anno, image
                    tgt = build_target(anno_t, m_max)
                    x = to_model_input(image_t, model.input_size, model.in_channels)
                    raw, cache = model.forward(params, x)
                    # tau normalizes against the annotation's resolution,
                    # matching the coordinate space of the targets
                    loss, terms, draw = loss_and_grad_raw(
                        raw, model.layout, tgt, weights, anno_t.image_size[0])
                    if not np.isfinite(loss):
                        err = DivergedLoss(
                            f"non-finite loss at epoch {epoch}, step {step}")
                        err.last_params = {n: p.copy() for n, p in params.items()}
                        raise err
                    g = model.backward(params, cache, draw)
                    if grads_sum is None:
                        grads_sum = g
                    else:
                        for n in grads_sum:
                            grads_sum[n] += g[n]
                    epoch_loss += loss
                    for key in epoch_terms:
                        epoch_terms[key] += terms[key]
                    n_seen += 1
                for n in grads_sum:
                    grads_sum[n] /= len(batch)
                opt.step(params, grads_sum)
                step += 1
            record = {
                "epoch": epoch, "step": step, "lr": opt.lr,
                "loss": epoch_loss / n_seen,
                **{k: v / n_seen for k, v in epoch_terms.items()},
            }
            log.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
    finally:
        if log_file:
            log_file.close()
    return params, log
