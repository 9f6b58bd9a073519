"""RoI labeling, hard-example selection, and synthetic proposal generation.

Proposals come from a deterministic stand-in for a learned proposal network:
jittered copies of the ground-truth boxes supply positives and near-misses,
and a regular grid of boxes supplies negatives. Labeling assigns each
proposal to its best-overlapping ground truth at an IoU threshold; online
hard example mining then keeps the B highest-loss RoIs out of all N for the
backward pass.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .boxes import RoI, iou_matrix, rois_to_array
from .head import BoxDelta, encode_box

__all__ = ["LabeledRoI", "SamplerConfig", "label_rois", "ohem_select", "generate_proposals"]


@dataclass
class LabeledRoI:
    """A proposal with its assigned class (0 = background) and regression target."""

    roi: RoI
    label: int
    target_delta: Optional[BoxDelta] = None
    loss: float = math.nan

    def __post_init__(self):
        if self.label > 0 and self.target_delta is None:
            raise ValueError("positive LabeledRoI requires a target_delta")


@dataclass(frozen=True)
class SamplerConfig:
    """Proposal generation and mining parameters.

    ``jitter`` scales the Gaussian noise applied to copied ground-truth
    boxes (relative to box size); ``jitter_fraction`` is the share of the N
    proposals drawn that way, the rest coming from a regular grid of boxes
    with sizes cycled from ``grid_sizes`` at ``grid_stride`` spacing
    (``grid_stride=0`` disables the grid).
    """

    n_proposals: int = 300
    batch_rois: int = 128
    pos_iou: float = 0.5
    jitter: float = 0.15
    jitter_fraction: float = 0.5
    grid_stride: int = 32
    grid_sizes: tuple = (16, 32, 48)

    def __post_init__(self):
        if self.batch_rois > self.n_proposals:
            raise ValueError(f"batch_rois={self.batch_rois} exceeds n_proposals={self.n_proposals}")
        if not 0.0 < self.pos_iou < 1.0:
            raise ValueError(f"pos_iou must be in (0, 1), got {self.pos_iou}")
        if not 0.0 <= self.jitter_fraction <= 1.0:
            raise ValueError(f"jitter_fraction must be in [0, 1], got {self.jitter_fraction}")


def label_rois(proposals, gts, pos_iou: float = 0.5) -> list[LabeledRoI]:
    """Assign each proposal to its max-IoU ground truth.

    ``gts`` is a list of (RoI, class) pairs with class >= 1. A proposal whose
    best overlap reaches ``pos_iou`` takes that ground truth's class and the
    encoded box delta as its regression target; everything else is background.
    """
    if not gts:
        return [LabeledRoI(roi=p, label=0) for p in proposals]
    if not proposals:
        return []
    overlaps = iou_matrix(rois_to_array(proposals), rois_to_array([g for g, _ in gts]))
    best = overlaps.argmax(axis=1)
    out = []
    for idx, p in enumerate(proposals):
        g = best[idx]
        if overlaps[idx, g] >= pos_iou:
            gt_roi, gt_class = gts[g]
            out.append(LabeledRoI(roi=p, label=int(gt_class),
                                  target_delta=encode_box(p, gt_roi)))
        else:
            out.append(LabeledRoI(roi=p, label=0))
    return out


def ohem_select(samples, batch_size: int) -> np.ndarray:
    """Indices of the ``batch_size`` highest-loss samples, hardest first.

    ``samples`` may be LabeledRoIs with ``loss`` filled or a plain loss
    vector. Ties keep the lower original index; if there are at most
    ``batch_size`` samples, every index is returned (identity selection).
    """
    losses = np.asarray([s.loss if isinstance(s, LabeledRoI) else s for s in samples],
                        dtype=np.float64)
    if np.isnan(losses).any():
        raise ValueError("all losses must be computed before mining")
    order = np.argsort(-losses, kind="stable")
    return order[:min(batch_size, len(losses))]


def _grid_boxes(image_h: int, image_w: int, cfg: SamplerConfig) -> list[RoI]:
    boxes = []
    for size in cfg.grid_sizes:
        s = min(size, image_w, image_h)
        for y0 in range(0, image_h - s + 1, cfg.grid_stride):
            for x0 in range(0, image_w - s + 1, cfg.grid_stride):
                boxes.append(RoI(batch_index=0, x0=float(x0), y0=float(y0),
                                 w=float(s), h=float(s)))
    return boxes


def generate_proposals(gts, image_hw, cfg: SamplerConfig, rng: np.random.Generator) -> list[RoI]:
    """Exactly ``cfg.n_proposals`` boxes: jittered ground truths plus grid fill.

    Centers are shifted by Gaussian noise of scale jitter * size and sizes
    scaled by exp(jitter * gaussian), so jitter 0 copies the ground truths
    verbatim. Grid boxes are cycled to fill the remaining slots (or evenly
    subsampled when the grid is larger than needed). Everything is clipped
    to the image; output is deterministic for a given rng state.
    """
    image_h, image_w = int(image_hw[0]), int(image_hw[1])
    n = cfg.n_proposals
    gt_boxes = [g for g, _ in gts]
    n_jit = round(cfg.jitter_fraction * n) if gt_boxes else 0
    grid = _grid_boxes(image_h, image_w, cfg) if cfg.grid_stride > 0 else []
    if not gt_boxes and not grid:
        raise ValueError("cannot generate proposals: no ground truths and grid disabled")
    if not grid:
        n_jit = n

    proposals: list[RoI] = []
    for idx in range(n_jit):
        g = gt_boxes[idx % len(gt_boxes)]
        cx, cy = g.center
        cx += rng.normal() * cfg.jitter * g.w
        cy += rng.normal() * cfg.jitter * g.h
        w = g.w * math.exp(rng.normal() * cfg.jitter)
        h = g.h * math.exp(rng.normal() * cfg.jitter)
        box = RoI(batch_index=0, x0=cx - w / 2.0, y0=cy - h / 2.0, w=w, h=h)
        proposals.append(box.clipped(image_w, image_h))

    n_grid = n - len(proposals)
    if n_grid > 0:
        if len(grid) >= n_grid:
            picks = np.unique(np.linspace(0, len(grid) - 1, n_grid).round().astype(int))
            chosen = [grid[i] for i in picks]
            # rounding collisions can drop a few slots; cycle to refill
            i = 0
            while len(chosen) < n_grid:
                chosen.append(grid[i % len(grid)])
                i += 1
        else:
            chosen = [grid[i % len(grid)] for i in range(n_grid)]
        proposals.extend(chosen)
    proposals = proposals[:n]
    # shuffle so downstream index tie-breaks carry no alignment information
    return [proposals[i] for i in rng.permutation(len(proposals))]
