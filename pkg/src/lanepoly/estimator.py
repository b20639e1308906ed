"""Scikit-learn style estimator wrapping the lane regression model.

`X` is a list of image rasters (uint8 arrays), `y` a list of annotations
(ImageAnnotation or PointAnnotation).  After fitting, `predict` returns the
confidence-filtered lane predictions per image and `score` the mean
benchmark accuracy.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import metrics, training
from .model import HeadLayout, LaneRegressionModel


def check_image_list(X) -> list[np.ndarray]:
    if not isinstance(X, (list, tuple)) or len(X) == 0:
        raise ValueError("X must be a non-empty list of image arrays")
    images = []
    for i, img in enumerate(X):
        arr = np.asarray(img)
        if arr.ndim not in (2, 3):
            raise ValueError(f"X[{i}] has ndim {arr.ndim}, expected 2 or 3")
        images.append(arr)
    return images


def check_annotation_list(y, n: int) -> list:
    if not isinstance(y, (list, tuple)) or len(y) != n:
        raise ValueError(f"y must be a list of {n} annotations")
    for i, a in enumerate(y):
        if not hasattr(a, "usable_lanes") or not hasattr(a, "image_size"):
            raise ValueError(f"y[{i}] is not an annotation")
    return list(y)


class LaneCurveRegressor(BaseEstimator):
    """Deep polynomial lane regressor with the estimator interface.

    Parameters mirror the run configuration: polynomial degree, lane slot
    count, horizon sharing, model input size and backbone widths, the four
    loss weights with the point threshold, and the optimizer settings.
    """

    def __init__(self, degree=3, m_max=5, share_h=True, input_size=(96, 54),
                 channels=(8, 16, 32, 96), in_channels=1,
                 w_p=300.0, w_s=100.0, w_c=1.0, w_h=100.0, tau_loss_px=5.0,
                 lr=1.5e-3, epochs=2000, period=None, batch_size=8,
                 seed=0, conf_threshold=0.5):
        self.degree = degree
        self.m_max = m_max
        self.share_h = share_h
        self.input_size = input_size
        self.channels = channels
        self.in_channels = in_channels
        self.w_p = w_p
        self.w_s = w_s
        self.w_c = w_c
        self.w_h = w_h
        self.tau_loss_px = tau_loss_px
        self.lr = lr
        self.epochs = epochs
        self.period = period
        self.batch_size = batch_size
        self.seed = seed
        self.conf_threshold = conf_threshold

    def _build(self) -> LaneRegressionModel:
        return LaneRegressionModel(
            layout=HeadLayout(self.degree, self.m_max, self.share_h),
            input_size=tuple(self.input_size),
            in_channels=self.in_channels,
            channels=tuple(self.channels),
        )

    def fit(self, X, y):
        images = check_image_list(X)
        annos = check_annotation_list(y, len(images))
        self.model_ = self._build()
        cfg = training.TrainConfig(
            lr=self.lr, period=self.period or self.epochs, epochs=self.epochs,
            batch_size=self.batch_size, seed=self.seed,
            conf_threshold=self.conf_threshold)
        weights = training.LossWeights(self.w_p, self.w_s, self.w_c, self.w_h,
                                       self.tau_loss_px)
        self.params_, self.log_ = training.train(
            self.model_, list(zip(images, annos)), cfg, weights)
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("estimator is not fitted; call fit first")

    def predict(self, X, image_sizes=None):
        """Confidence-filtered PolyLanePred lists, one per image.  By
        default predictions are expressed at each raster's own resolution;
        pass image_sizes to override."""
        self._check_fitted()
        images = check_image_list(X)
        out = []
        for i, img in enumerate(images):
            size = (image_sizes[i] if image_sizes is not None
                    else (img.shape[1], img.shape[0]))
            x = training.to_model_input(img, self.model_.input_size,
                                        self.model_.in_channels)
            model_out = self.model_.predict(self.params_, x)
            out.append(metrics.prediction_lanes(model_out, size,
                                                self.conf_threshold))
        return out

    def score(self, X, y) -> float:
        """Mean per-image benchmark accuracy against annotations y."""
        self._check_fitted()
        images = check_image_list(X)
        annos = check_annotation_list(y, len(images))
        preds = self.predict(X, image_sizes=[a.image_size for a in annos])
        per_image = []
        for p, a in zip(preds, annos):
            scores, _ = metrics.score_image(p, a.usable_lanes(), a.image_size)
            per_image.append(scores)
        return metrics.aggregate_images(per_image).acc

    def report(self, X, y) -> metrics.MetricReport:
        """Full MetricReport (Acc, FP, FN, LPD) on annotated images."""
        self._check_fitted()
        annos = check_annotation_list(y, len(X))
        preds = self.predict(X, image_sizes=[a.image_size for a in annos])
        per_image = []
        for p, a in zip(preds, annos):
            scores, _ = metrics.score_image(p, a.usable_lanes(), a.image_size)
            per_image.append(scores)
        return metrics.aggregate_images(per_image)
