"""Polynomial lane representation, least-squares fitting and point transforms.

Lanes are curves x = p(y).  Everything here is coordinate-space agnostic
except the affine transforms, which operate on pixel coordinates of a
declared image size.  All functions are pure.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFit


@dataclass(frozen=True)
class Polynomial:
    """x = sum_k coeffs[k] * y**k, coefficients in ascending order."""

    coeffs: tuple[float, ...]

    def __post_init__(self):
        if len(self.coeffs) < 1:
            raise ValueError("need at least one coefficient")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, y):
        return eval_poly(self, y)


def eval_poly(p: Polynomial, y):
    """Evaluate p at y (scalar or array) with Horner's scheme."""
    y = np.asarray(y, dtype=float)
    result = np.full_like(y, p.coeffs[-1], dtype=float)
    for c in p.coeffs[-2::-1]:
        result = result * y + c
    return float(result) if result.ndim == 0 else result


def as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected (N, 2) point array, got shape {pts.shape}")
    return pts


def fit_least_squares(points, degree: int) -> Polynomial:
    """Fit the degree-K polynomial minimizing sum((p(y_i) - x_i)^2).

    The y values are mapped to [-1, 1] before building the Vandermonde
    matrix (conditioning for degree >= 4), and the coefficients are mapped
    back to the original y variable afterwards.

    Raises DegenerateFit when fewer than degree+1 distinct y values exist.
    """
    if degree < 0:
        raise ValueError("degree must be non-negative")
    pts = as_points(points)
    x, y = pts[:, 0], pts[:, 1]
    if len(np.unique(y)) < degree + 1:
        raise DegenerateFit(
            f"degree-{degree} fit needs {degree + 1} distinct y values, "
            f"got {len(np.unique(y))}"
        )
    y_lo, y_hi = y.min(), y.max()
    mid = 0.5 * (y_lo + y_hi)
    half = 0.5 * (y_hi - y_lo)
    if half == 0.0:  # single distinct y, only reachable for degree 0
        return Polynomial((float(x.mean()),))
    u = (y - mid) / half
    design = np.vander(u, degree + 1, increasing=True)
    c, *_ = np.linalg.lstsq(design, x, rcond=None)
    # map p(u) with u = alpha*y + beta back to coefficients in y
    alpha, beta = 1.0 / half, -mid / half
    out = np.array([c[-1]])
    for ck in c[-2::-1]:
        out = np.polynomial.polynomial.polymul(out, [beta, alpha])
        out[0] += ck
    out = np.pad(out, (0, degree + 1 - len(out)))
    return Polynomial(tuple(out))


def fit_residual(p: Polynomial, points) -> float:
    """Sum of squared residuals of p on the given points."""
    pts = as_points(points)
    r = eval_poly(p, pts[:, 1]) - pts[:, 0]
    return float(np.dot(r, r))


@dataclass(frozen=True)
class AffineTransform:
    """2D affine map in pixel space plus the output image bounds.

    `matrix` is 3x3 homogeneous; `bounds` is the (width, height) of the
    output image, used to drop points that leave the frame.
    """

    matrix: np.ndarray
    bounds: tuple[float, float]

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """Transform applying `self` first, then `other`."""
        return AffineTransform(other.matrix @ self.matrix, other.bounds)

    def inverse(self) -> "AffineTransform":
        return AffineTransform(np.linalg.inv(self.matrix), self.bounds)

    def apply_raw(self, points) -> np.ndarray:
        """Map points through the matrix without bounds filtering."""
        pts = as_points(points)
        hom = np.column_stack([pts, np.ones(len(pts))])
        return (hom @ self.matrix.T)[:, :2]


def rotation(angle_deg: float, image_size: tuple[int, int]) -> AffineTransform:
    """Rotation about the image center; positive angles turn x toward y
    (clockwise on screen with y pointing down)."""
    w, h = image_size
    cx, cy = w / 2.0, h / 2.0
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    m = np.array([
        [c, -s, cx - c * cx + s * cy],
        [s, c, cy - s * cx - c * cy],
        [0.0, 0.0, 1.0],
    ])
    return AffineTransform(m, (float(w), float(h)))


def horizontal_flip(image_size: tuple[int, int]) -> AffineTransform:
    w, h = image_size
    m = np.array([
        [-1.0, 0.0, float(w)],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ])
    return AffineTransform(m, (float(w), float(h)))


def crop(window: tuple[int, int, int, int], image_size: tuple[int, int]) -> AffineTransform:
    """Crop to window (x0, y0, width, height); output coords start at the
    window origin."""
    x0, y0, cw, ch = window
    m = np.array([
        [1.0, 0.0, -float(x0)],
        [0.0, 1.0, -float(y0)],
        [0.0, 0.0, 1.0],
    ])
    return AffineTransform(m, (float(cw), float(ch)))


def identity(image_size: tuple[int, int]) -> AffineTransform:
    w, h = image_size
    return AffineTransform(np.eye(3), (float(w), float(h)))


def transform_points(points, t: AffineTransform) -> np.ndarray:
    """Map an ordered lane point list through t.

    Out-of-bounds points are dropped, the survivors re-sorted so y is
    strictly increasing (exact y ties keep the first occurrence).  Fewer
    than 2 survivors yields an empty (0, 2) array: the caller drops the lane.
    """
    pts = as_points(points)
    if len(pts) == 0:
        return pts.reshape(0, 2)
    mapped = t.apply_raw(pts)
    w, h = t.bounds
    keep = (
        (mapped[:, 0] >= 0.0) & (mapped[:, 0] <= w)
        & (mapped[:, 1] >= 0.0) & (mapped[:, 1] <= h)
    )
    mapped = mapped[keep]
    order = np.argsort(mapped[:, 1], kind="stable")
    mapped = mapped[order]
    if len(mapped) > 1:
        strict = np.concatenate([[True], np.diff(mapped[:, 1]) > 0.0])
        mapped = mapped[strict]
    if len(mapped) < 2:
        return np.empty((0, 2))
    return mapped
