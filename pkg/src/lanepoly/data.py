"""TuSimple-format annotations, training targets, synthetic data, augmentation.

Annotation files are newline-delimited JSON, one image per line, with keys
"lanes" (list of per-lane x values aligned with "h_samples", -2 meaning no
point at that row), "h_samples" and "raw_file".  Pixel coordinates stay in
annotation space; normalized [0, 1] coordinates appear only in training
targets.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np
from PIL import Image

from . import geometry
from .errors import ParseError, TooManyLanes

logger = logging.getLogger(__name__)

NO_POINT = -2


@dataclass(frozen=True)
class ImageAnnotation:
    raw_file: str
    h_samples: tuple
    lanes: tuple
    image_size: tuple[int, int] = (1280, 720)

    def lane_points(self, j: int) -> np.ndarray:
        """Pixel-space (x, y) pairs of lane j with -2 sentinels removed."""
        xs = np.asarray(self.lanes[j], dtype=float)
        ys = np.asarray(self.h_samples, dtype=float)
        valid = xs != NO_POINT
        return np.column_stack([xs[valid], ys[valid]])

    def usable_lanes(self) -> list[np.ndarray]:
        """Point lists of all lanes with at least 2 valid points."""
        out = []
        for j in range(len(self.lanes)):
            pts = self.lane_points(j)
            if len(pts) >= 2:
                out.append(pts)
        return out


def _check_record(obj, line: int) -> None:
    for key in ("lanes", "h_samples", "raw_file"):
        if key not in obj:
            raise ParseError(line, f"missing key {key!r}")
    if not isinstance(obj["raw_file"], str):
        raise ParseError(line, "raw_file must be a string")
    h = obj["h_samples"]
    if not isinstance(h, list) or not all(isinstance(v, (int, float)) for v in h):
        raise ParseError(line, "h_samples must be a list of numbers")
    if any(b <= a for a, b in zip(h, h[1:])):
        raise ParseError(line, "h_samples must be strictly increasing")
    if not isinstance(obj["lanes"], list):
        raise ParseError(line, "lanes must be a list")
    for j, lane in enumerate(obj["lanes"]):
        if not isinstance(lane, list) or len(lane) != len(h):
            raise ParseError(
                line, f"lane {j} length {len(lane) if isinstance(lane, list) else '?'} "
                f"!= h_samples length {len(h)}"
            )
        if not all(isinstance(v, (int, float)) for v in lane):
            raise ParseError(line, f"lane {j} has non-numeric entries")


def parse_annotations(
    stream: str | IO[str] | Iterable[str],
    image_size: tuple[int, int] = (1280, 720),
) -> list[ImageAnnotation]:
    """Parse newline-delimited annotation records in file order.

    Raises ParseError with the 1-based line number on any malformed
    record; blank lines are skipped, nothing else is.
    """
    if isinstance(stream, str):
        lines = stream.splitlines()
    else:
        lines = stream
    out = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(line_no, f"invalid JSON: {e.msg}") from e
        if not isinstance(obj, dict):
            raise ParseError(line_no, "record is not a JSON object")
        _check_record(obj, line_no)
        out.append(ImageAnnotation(
            raw_file=obj["raw_file"],
            h_samples=tuple(obj["h_samples"]),
            lanes=tuple(tuple(lane) for lane in obj["lanes"]),
            image_size=tuple(image_size),
        ))
    return out


def serialize_annotations(annotations: Iterable[ImageAnnotation]) -> str:
    """Inverse of parse_annotations; -2 sentinels and numbers round-trip
    field-exactly."""
    lines = []
    for a in annotations:
        lines.append(json.dumps({
            "lanes": [list(lane) for lane in a.lanes],
            "h_samples": list(a.h_samples),
            "raw_file": a.raw_file,
        }, separators=(", ", ": ")))
    return "\n".join(lines) + ("\n" if lines else "")


def load_annotation_file(path, image_size=(1280, 720)) -> list[ImageAnnotation]:
    with open(path) as f:
        return parse_annotations(f, image_size=image_size)


# ---------------------------------------------------------------------------
# training targets

@dataclass(frozen=True)
class LaneTarget:
    points: np.ndarray  # normalized (N, 2), empty for padding slots
    s: float  # normalized min y (top of the lane)
    c: float  # 1.0 for annotated slots, 0.0 for padding


@dataclass(frozen=True)
class TrainingTarget:
    lanes: tuple[LaneTarget, ...]  # exactly m_max entries
    h: float  # normalized horizon target
    n_lanes: int


def build_target_from_points(
    lanes_px: list[np.ndarray],
    image_size: tuple[int, int],
    m_max: int,
    name: str = "<points>",
) -> TrainingTarget:
    """Per-slot regression targets from pixel-space lane point lists.

    Lanes are normalized to [0, 1]^2, ordered by the x of their
    bottom-most point, each slot j <= M gets confidence 1 and vertical
    offset min(y); the horizon target is the minimum offset over lanes,
    or 1.0 (image bottom) when the image has no lanes.
    """
    w, h = image_size
    lanes = [pts for pts in lanes_px if len(pts) >= 2]
    if len(lanes) > m_max:
        raise TooManyLanes(f"{name}: {len(lanes)} lanes > m_max={m_max}")
    norm = [pts / np.array([w, h], dtype=float) for pts in lanes]
    norm.sort(key=lambda pts: pts[-1, 0])  # bottom-most point has max y (last row)
    slots = []
    for pts in norm:
        slots.append(LaneTarget(points=pts, s=float(pts[:, 1].min()), c=1.0))
    for _ in range(m_max - len(norm)):
        slots.append(LaneTarget(points=np.empty((0, 2)), s=0.0, c=0.0))
    h_star = min((t.s for t in slots if t.c == 1.0), default=1.0)
    return TrainingTarget(lanes=tuple(slots), h=h_star, n_lanes=len(norm))


def build_target(a: "ImageAnnotation | PointAnnotation", m_max: int) -> TrainingTarget:
    """build_target_from_points on an annotation's usable lanes."""
    return build_target_from_points(
        a.usable_lanes(), a.image_size, m_max, name=a.raw_file)


def build_targets(
    annotations: Iterable[ImageAnnotation],
    m_max: int,
    overflow: str = "drop",
) -> list[tuple[ImageAnnotation, TrainingTarget]]:
    """Build targets for a dataset.  overflow: "drop" skips images with
    more than m_max lanes (with a warning), "error" re-raises."""
    out = []
    for a in annotations:
        try:
            out.append((a, build_target(a, m_max)))
        except TooManyLanes:
            if overflow == "error":
                raise
            logger.warning("dropping %s: more than %d lanes", a.raw_file, m_max)
    return out


# ---------------------------------------------------------------------------
# synthetic data

@dataclass(frozen=True)
class SyntheticSpec:
    """Desk-scale synthetic dataset recipe.

    Lanes are planted exactly on sampled polynomials x = p(y) (normalized
    coordinates built around the lane's bottom anchor), optionally with
    Gaussian pixel noise on the recorded x values.
    """

    image_size: tuple[int, int] = (640, 360)
    lane_range: tuple[int, int] = (1, 4)
    degree: int = 3
    slope_range: tuple[float, float] = (-0.9, 0.9)
    curvature_range: tuple[float, float] = (-0.5, 0.5)
    top_y_range: tuple[float, float] = (0.35, 0.55)
    row_start: float = 0.45  # first annotated row, fraction of height
    row_step_px: int = 10
    noise_sigma_px: float = 0.0
    stroke_px: float = 2.0

    def h_samples(self) -> tuple[int, ...]:
        h = self.image_size[1]
        return tuple(range(int(round(self.row_start * h)), h, self.row_step_px))


def _sample_lane_polys(rng: np.random.Generator, spec: SyntheticSpec, n: int):
    """Sample n lane polynomials anchored at spread-out bottom positions."""
    polys = []
    slots = (np.arange(n) + 0.5 + rng.uniform(-0.25, 0.25, size=n)) / n
    for x_bottom in slots:
        # shifted basis t = y - 1 keeps the bottom anchor exact
        shifted = np.zeros(spec.degree + 1)
        shifted[0] = x_bottom
        if spec.degree >= 1:
            shifted[1] = rng.uniform(*spec.slope_range)
        for k in range(2, spec.degree + 1):
            shifted[k] = rng.uniform(*spec.curvature_range)
        coeffs = np.zeros(1)
        for ck in shifted[::-1]:
            coeffs = np.polynomial.polynomial.polymul(coeffs, [-1.0, 1.0])
            coeffs = np.polynomial.polynomial.polyadd(coeffs, [ck])
        coeffs = np.pad(coeffs, (0, spec.degree + 1 - len(coeffs)))
        polys.append((geometry.Polynomial(tuple(coeffs)), rng.uniform(*spec.top_y_range)))
    return polys


def _render_image(rng: np.random.Generator, spec: SyntheticSpec, lanes) -> np.ndarray:
    """Gray raster: noisy textured background plus anti-aliased lane strokes."""
    w, h = spec.image_size
    img = 40.0 + 18.0 * rng.standard_normal((h, w))
    img += 25.0 * np.linspace(0.0, 1.0, h)[:, None]  # brighter near the bottom
    xs = np.arange(w, dtype=float)
    for poly, top_y in lanes:
        y0 = int(np.ceil(top_y * h))
        for y_px in range(y0, h):
            xc = geometry.eval_poly(poly, y_px / h) * w
            if -4 * spec.stroke_px < xc < w + 4 * spec.stroke_px:
                img[y_px] += 190.0 * np.exp(-0.5 * ((xs - xc) / spec.stroke_px) ** 2)
    return np.clip(img, 0, 255).astype(np.uint8)


def generate_synthetic(
    seed: int,
    n_images: int,
    spec: SyntheticSpec,
    render: bool = True,
) -> tuple[list[np.ndarray | None], list[ImageAnnotation]]:
    """Deterministic synthetic dataset.  Annotation x values lie exactly on
    the planted polynomials (plus noise_sigma_px if configured), so refitting
    at the planted degree reproduces them.  render=False skips rasters."""
    rng = np.random.default_rng(seed)
    w, h = spec.image_size
    rows = spec.h_samples()
    images, annotations = [], []
    for idx in range(n_images):
        n_lanes = int(rng.integers(spec.lane_range[0], spec.lane_range[1] + 1))
        lanes_geo = _sample_lane_polys(rng, spec, n_lanes)
        lane_rows = []
        for poly, top_y in lanes_geo:
            xs = []
            for y_px in rows:
                y_n = y_px / h
                if y_n < top_y:
                    xs.append(NO_POINT)
                    continue
                x_px = geometry.eval_poly(poly, y_n) * w
                if spec.noise_sigma_px > 0.0:
                    x_px += spec.noise_sigma_px * rng.standard_normal()
                if 0.0 <= x_px <= w:
                    xs.append(float(x_px))
                else:
                    xs.append(NO_POINT)
            if sum(x != NO_POINT for x in xs) >= 2:
                lane_rows.append(tuple(xs))
        images.append(_render_image(rng, spec, lanes_geo) if render else None)
        annotations.append(ImageAnnotation(
            raw_file=f"synthetic/{idx:05d}.png",
            h_samples=rows,
            lanes=tuple(lane_rows),
            image_size=(w, h),
        ))
    return images, annotations


# ---------------------------------------------------------------------------
# augmentation

@dataclass(frozen=True)
class AugmentConfig:
    probability: float = 10.0 / 11.0
    max_rotation_deg: float = 10.0
    flip_probability: float = 0.5
    crop_size: tuple[int, int] | None = None  # None: 90% of the image size


def _apply_to_image(img: np.ndarray, t: geometry.AffineTransform) -> np.ndarray:
    """Resample a raster through the inverse of the point transform."""
    out_w, out_h = int(round(t.bounds[0])), int(round(t.bounds[1]))
    inv = np.linalg.inv(t.matrix)
    pil = Image.fromarray(img)
    # PIL's affine data maps output pixel -> input pixel
    data = (inv[0, 0], inv[0, 1], inv[0, 2], inv[1, 0], inv[1, 1], inv[1, 2])
    mode = "RGB" if img.ndim == 3 else "L"
    return np.asarray(pil.transform((out_w, out_h), Image.AFFINE, data,
                                    resample=Image.BILINEAR).convert(mode))


@dataclass(frozen=True)
class PointAnnotation:
    """Lanes as free point lists, produced by augmentation.

    Unlike ImageAnnotation the points are not aligned to shared rows:
    geometric transforms move each point's y individually and the exact
    coordinates are kept.
    """

    raw_file: str
    lanes: tuple  # tuple of (N, 2) pixel arrays
    image_size: tuple[int, int]
    transform: geometry.AffineTransform | None = None

    def usable_lanes(self) -> list[np.ndarray]:
        return [pts for pts in self.lanes if len(pts) >= 2]

    @classmethod
    def from_annotation(cls, a: ImageAnnotation) -> "PointAnnotation":
        return cls(raw_file=a.raw_file, lanes=tuple(a.usable_lanes()),
                   image_size=a.image_size)


def augment(
    a: ImageAnnotation,
    image: np.ndarray | None,
    rng: np.random.Generator,
    config: AugmentConfig = AugmentConfig(),
) -> tuple[PointAnnotation, np.ndarray | None]:
    """Randomly rotate, flip and crop an annotated image.

    With probability 1 - config.probability the sample passes through
    untouched.  Transform order is rotate -> flip -> crop; annotation
    points go through the exact same affine map as the raster, lanes left
    with fewer than 2 in-frame points are dropped.
    """
    w, h = a.image_size
    if rng.random() >= config.probability:
        return PointAnnotation.from_annotation(a), image
    t = geometry.rotation(rng.uniform(-config.max_rotation_deg,
                                      config.max_rotation_deg), (w, h))
    if rng.random() < config.flip_probability:
        t = t.compose(geometry.horizontal_flip((w, h)))
    cw, ch = config.crop_size or (int(round(0.9 * w)), int(round(0.9 * h)))
    x0 = int(rng.integers(0, w - cw + 1))
    y0 = int(rng.integers(0, h - ch + 1))
    t = t.compose(geometry.crop((x0, y0, cw, ch), (w, h)))

    new_lanes = []
    for j in range(len(a.lanes)):
        pts = a.lane_points(j)
        if len(pts) < 2:
            continue
        moved = geometry.transform_points(pts, t)
        if len(moved) >= 2:
            new_lanes.append(moved)
    new_lanes.sort(key=lambda pts: pts[-1, 0])
    new_a = PointAnnotation(raw_file=a.raw_file, lanes=tuple(new_lanes),
                            image_size=(cw, ch), transform=t)
    new_img = _apply_to_image(image, t) if image is not None else None
    return new_a, new_img
