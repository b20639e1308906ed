"""Render detected lanes as colored polylines on top of input images."""
from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from .metrics import PolyLanePred

LANE_COLORS = [
    (255, 64, 64), (64, 200, 64), (64, 128, 255),
    (255, 200, 0), (200, 64, 255), (0, 220, 220),
]


def draw_predictions(image: np.ndarray, preds: list[PolyLanePred],
                     line_width: int = 3) -> np.ndarray:
    """RGB copy of `image` with each prediction drawn as a polyline sampled
    every pixel row along its domain.  No detections returns an unmodified
    RGB copy."""
    pil = Image.fromarray(image).convert("RGB")
    drawer = ImageDraw.Draw(pil)
    w, h = pil.size
    for idx, p in enumerate(preds):
        lo, hi = p.domain
        y0 = int(np.ceil(lo * h))
        ys = np.arange(max(y0, 0), h, dtype=float)
        if len(ys) < 2:
            continue
        xs = p.x_extrapolated(ys)
        keep = (xs >= 0) & (xs <= w)
        pts = [(float(x), float(y)) for x, y in zip(xs[keep], ys[keep])]
        if len(pts) >= 2:
            drawer.line(pts, fill=LANE_COLORS[idx % len(LANE_COLORS)],
                        width=line_width)
    return np.asarray(pil)
