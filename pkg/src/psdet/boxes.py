"""Axis-aligned boxes: the RoI record, overlap geometry and grid projection.

Boxes are (x0, y0, w, h) with the top-left corner at (x0, y0); the right and
bottom edges are exclusive (x1 = x0 + w). Proposals and ground truths live in
image coordinates; ``project_roi`` maps a box onto the feature grid of a
strided backbone, where pooling then indexes whole feature pixels.
"""

from dataclasses import dataclass, replace

import numpy as np

__all__ = ["RoI", "iou", "iou_matrix", "project_roi", "rois_to_array"]


@dataclass(frozen=True)
class RoI:
    """One region of interest. ``batch_index`` selects the image in a batch."""

    batch_index: int
    x0: float
    y0: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"RoI must have positive size, got w={self.w}, h={self.h}")

    @property
    def x1(self) -> float:
        return self.x0 + self.w

    @property
    def y1(self) -> float:
        return self.y0 + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x0 + self.w / 2.0, self.y0 + self.h / 2.0)

    def clipped(self, width: float, height: float) -> "RoI":
        """Clip to [0, width) x [0, height); a fully outside box keeps 1 pixel."""
        x0 = min(max(self.x0, 0.0), width - 1.0)
        y0 = min(max(self.y0, 0.0), height - 1.0)
        w = max(min(self.x1, width) - x0, 1.0)
        h = max(min(self.y1, height) - y0, 1.0)
        return replace(self, x0=x0, y0=y0, w=w, h=h)


def iou(a: RoI, b: RoI) -> float:
    """Intersection-over-union of two boxes, in [0, 1].

    Areas are derived from the same corner differences as the intersection
    so that iou(a, a) is exactly 1 even for irrational coordinates.
    """
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    area_a = (a.x1 - a.x0) * (a.y1 - a.y0)
    area_b = (b.x1 - b.x0) * (b.y1 - b.y0)
    return inter / (area_a + area_b - inter)


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (Na, 4) vs (Nb, 4) arrays of (x0, y0, w, h) rows."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    ax1, ay1 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx1, by1 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.minimum(ax1[:, None], bx1[None, :]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(ay1[:, None], by1[None, :]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    areas_a = (ax1 - a[:, 0]) * (ay1 - a[:, 1])
    areas_b = (bx1 - b[:, 0]) * (by1 - b[:, 1])
    return inter / (areas_a[:, None] + areas_b[None, :] - inter)


def _round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def project_roi(roi: RoI, stride: int, feat_w: int, feat_h: int) -> RoI:
    """Project an image-space RoI onto the feature grid of a strided backbone.

    Coordinates are divided by ``stride`` and rounded to the nearest feature
    pixel; width and height are floored at one pixel so a small box never
    becomes empty, and the result is clipped to lie inside the map.
    """
    x0 = _round_half_up(roi.x0 / stride)
    y0 = _round_half_up(roi.y0 / stride)
    w = max(1, _round_half_up(roi.w / stride))
    h = max(1, _round_half_up(roi.h / stride))
    x0 = min(max(x0, 0), feat_w - 1)
    y0 = min(max(y0, 0), feat_h - 1)
    w = min(w, feat_w - x0)
    h = min(h, feat_h - y0)
    return RoI(batch_index=roi.batch_index, x0=x0, y0=y0, w=w, h=h)


def rois_to_array(rois) -> np.ndarray:
    """(R, 4) float array of (x0, y0, w, h) rows from a list of RoIs."""
    return np.array([[r.x0, r.y0, r.w, r.h] for r in rois], dtype=np.float64).reshape(-1, 4)
