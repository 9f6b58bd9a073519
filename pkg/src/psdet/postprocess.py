"""Inference assembly and evaluation: NMS, detection output, average precision.

Detections are produced per class from the scored RoIs, deduplicated with
greedy non-maximum suppression, and evaluated against ground truth with the
all-point interpolated precision/recall area (single IoU threshold).
"""

import csv
from dataclasses import dataclass

import numpy as np

from .boxes import RoI, iou, rois_to_array
from .head import decode_boxes

__all__ = ["Detection", "nms", "assemble_detections", "average_precision",
           "detections_to_csv", "detections_from_csv"]


@dataclass(frozen=True)
class Detection:
    """One scored output box in image coordinates; ``class_id`` >= 1."""

    image_id: int
    class_id: int
    score: float
    box: RoI

    def __post_init__(self):
        if self.class_id < 1:
            raise ValueError(f"class_id must be >= 1, got {self.class_id}")


def nms(dets: list[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression over same-class detections.

    Repeatedly keeps the highest-scored remaining detection and discards
    every remaining one overlapping it with IoU > threshold. Score ties
    keep the earlier list index first; output is in descending score order.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1), got {iou_threshold}")
    if len({d.class_id for d in dets}) > 1:
        raise ValueError("nms expects detections of a single class")
    order = np.argsort(-np.array([d.score for d in dets]), kind="stable")
    kept: list[Detection] = []
    suppressed = np.zeros(len(dets), dtype=bool)
    for oi, idx in enumerate(order):
        if suppressed[oi]:
            continue
        keeper = dets[idx]
        kept.append(keeper)
        for oj in range(oi + 1, len(order)):
            if not suppressed[oj] and iou(keeper.box, dets[order[oj]].box) > iou_threshold:
                suppressed[oj] = True
    return kept


def assemble_detections(probs, deltas, proposals, image_hw, score_threshold: float = 0.05,
                        nms_iou: float = 0.3, image_id: int = 0) -> list[Detection]:
    """Turn per-RoI scores and class-agnostic deltas into final detections.

    For every foreground class, RoIs scoring above the threshold are decoded
    through the shared box deltas, clipped to the image, and deduplicated by
    per-class NMS. Returns all surviving detections (classes concatenated,
    each class block in descending score order).
    """
    probs = np.asarray(probs, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    if probs.shape[0] != deltas.shape[0] or probs.shape[0] != len(proposals):
        raise ValueError(f"mismatched lengths: probs {probs.shape[0]}, deltas "
                         f"{deltas.shape[0]}, proposals {len(proposals)}")
    image_h, image_w = int(image_hw[0]), int(image_hw[1])
    if len(proposals) == 0:
        return []
    boxes = decode_boxes(rois_to_array(proposals), deltas)
    out: list[Detection] = []
    for c in range(1, probs.shape[1]):
        picks = np.flatnonzero(probs[:, c] > score_threshold)
        cand = []
        for r in picks:
            x0, y0, w, h = boxes[r]
            box = RoI(batch_index=proposals[r].batch_index, x0=x0, y0=y0,
                      w=max(w, 1e-9), h=max(h, 1e-9)).clipped(image_w, image_h)
            cand.append(Detection(image_id=image_id, class_id=c,
                                  score=float(probs[r, c]), box=box))
        out.extend(nms(cand, nms_iou))
    return out


def average_precision(dets: list[Detection], gts, iou_threshold: float = 0.5
                      ) -> tuple[dict[int, float], float]:
    """All-point interpolated AP per class and its mean.

    ``gts`` is a list of (image_id, RoI, class) triples. Detections are
    walked in descending score order (ties keep the earlier index); each may
    match one still-unmatched ground truth of its class and image with
    IoU >= threshold, preferring the highest IoU. The mean covers exactly
    the classes that have at least one ground truth.
    """
    classes = sorted({int(c) for _, _, c in gts})
    per_class: dict[int, float] = {}
    for c in classes:
        class_gts = [(img, box) for img, box, gc in gts if int(gc) == c]
        class_dets = [d for d in dets if d.class_id == c]
        order = np.argsort(-np.array([d.score for d in class_dets]), kind="stable")
        matched = np.zeros(len(class_gts), dtype=bool)
        tp = np.zeros(len(class_dets))
        fp = np.zeros(len(class_dets))
        for rank, idx in enumerate(order):
            d = class_dets[idx]
            best_iou, best_g = 0.0, -1
            for g, (img, box) in enumerate(class_gts):
                if matched[g] or img != d.image_id:
                    continue
                ov = iou(d.box, box)
                if ov > best_iou:
                    best_iou, best_g = ov, g
            if best_g >= 0 and best_iou >= iou_threshold:
                matched[best_g] = True
                tp[rank] = 1.0
            else:
                fp[rank] = 1.0
        per_class[c] = _pr_area(tp, fp, len(class_gts))
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, mean


def _pr_area(tp: np.ndarray, fp: np.ndarray, n_gt: int) -> float:
    """Area under the all-point interpolated precision/recall curve."""
    if n_gt == 0 or len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(fp)
    recall = ctp / n_gt
    precision = ctp / np.maximum(ctp + cfp, 1e-12)
    mrec = np.concatenate([[0.0], recall, [recall[-1]]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(np.sum((mrec[steps] - mrec[steps - 1]) * mpre[steps]))


CSV_HEADER = ["image_id", "class", "score", "x0", "y0", "w", "h"]


def detections_to_csv(dets: list[Detection], path) -> None:
    """Write detections as CSV with 6-decimal fixed-point reals."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for d in dets:
            writer.writerow([d.image_id, d.class_id, f"{d.score:.6f}",
                             f"{d.box.x0:.6f}", f"{d.box.y0:.6f}",
                             f"{d.box.w:.6f}", f"{d.box.h:.6f}"])


def detections_from_csv(path) -> list[Detection]:
    dets = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected detections CSV header: {reader.fieldnames}")
        for row in reader:
            dets.append(Detection(
                image_id=int(row["image_id"]), class_id=int(row["class"]),
                score=float(row["score"]),
                box=RoI(batch_index=0, x0=float(row["x0"]), y0=float(row["y0"]),
                        w=float(row["w"]), h=float(row["h"]))))
    return dets
