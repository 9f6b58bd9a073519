"""Synthetic detection scenes: colored shapes on a noisy background.

Each scene is a square RGB image holding 1 to 4 non-overlapping objects of
16 to 48 pixels. A class is a color (and alternating rectangle/ellipse
silhouette); the ground-truth box is the exact pixel bounding box of the
drawn shape. Generation is a pure function of the supplied rng, so a seed
reproduces a scene bit for bit.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boxes import RoI, iou

__all__ = ["SyntheticScene", "generate_scene", "class_color", "write_ppm", "read_ppm",
           "export_dataset", "MIN_OBJECT", "MAX_OBJECT"]

MIN_OBJECT = 16
MAX_OBJECT = 48

# base palette; classes beyond 6 rotate hues deterministically
_PALETTE = [
    (0.85, 0.15, 0.15),
    (0.15, 0.80, 0.20),
    (0.15, 0.25, 0.85),
    (0.85, 0.80, 0.10),
    (0.80, 0.15, 0.80),
    (0.10, 0.80, 0.80),
]


@dataclass
class SyntheticScene:
    """Image (1, 3, H, W) float64 in [0, 1] plus (RoI, class) ground truths."""

    image: np.ndarray
    gts: list

    @property
    def hw(self) -> tuple[int, int]:
        return self.image.shape[2], self.image.shape[3]


def class_color(class_id: int) -> tuple[float, float, float]:
    if class_id < 1:
        raise ValueError(f"class_id must be >= 1, got {class_id}")
    base = _PALETTE[(class_id - 1) % len(_PALETTE)]
    if class_id <= len(_PALETTE):
        return base
    shift = 0.13 * ((class_id - 1) // len(_PALETTE))
    return tuple(float((c + shift) % 1.0) for c in base)


def _shape_mask(class_id: int, w: int, h: int) -> np.ndarray:
    """Filled silhouette; odd classes are rectangles, even classes ellipses."""
    if class_id % 2 == 1:
        return np.ones((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = h / 2.0, w / 2.0
    ry, rx = h / 2.0, w / 2.0
    return ((yy + 0.5 - cy) / ry) ** 2 + ((xx + 0.5 - cx) / rx) ** 2 <= 1.0


def generate_scene(rng: np.random.Generator, num_classes: int, image_size: int = 96,
                   num_objects: int | None = None) -> SyntheticScene:
    """Draw one scene. ``num_objects`` forces the object count (tests); by
    default 1-4 objects are placed with disjoint boxes (an object that cannot
    be placed without overlap after 50 tries is dropped, never the first)."""
    if num_classes < 1:
        raise ValueError(f"num_classes must be >= 1, got {num_classes}")
    h = w = int(image_size)
    img = np.clip(0.35 + 0.08 * rng.standard_normal((3, h, w)), 0.0, 1.0)

    count = int(num_objects) if num_objects is not None else int(rng.integers(1, 5))
    hi = min(MAX_OBJECT, h, w)           # small test images cap the object size
    lo = min(MIN_OBJECT, hi)
    gts = []
    for _ in range(count):
        placed = None
        for _attempt in range(50):
            ow = int(rng.integers(lo, hi + 1))
            oh = int(rng.integers(lo, hi + 1))
            x0 = int(rng.integers(0, w - ow + 1))
            y0 = int(rng.integers(0, h - oh + 1))
            box = RoI(batch_index=0, x0=float(x0), y0=float(y0), w=float(ow), h=float(oh))
            if all(iou(box, g) == 0.0 for g, _ in gts):
                placed = box
                break
        if placed is None:
            continue
        class_id = int(rng.integers(1, num_classes + 1))
        mask = _shape_mask(class_id, int(placed.w), int(placed.h))
        color = class_color(class_id)
        ys, xs = int(placed.y0), int(placed.x0)
        region = img[:, ys:ys + int(placed.h), xs:xs + int(placed.w)]
        for ch in range(3):
            region[ch][mask] = color[ch]
        gts.append((placed, class_id))
    return SyntheticScene(image=img[None, :, :, :], gts=gts)


def write_ppm(image: np.ndarray, path) -> None:
    """Write a (3, H, W) float [0,1] image as binary P6 PPM."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 4:
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got {arr.shape}")
    h, w = arr.shape[1:]
    pixels = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 PPM back to a (3, H, W) float64 image in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError(f"not a binary PPM file: {path}")
    w, h = (int(t) for t in parts[1].split())
    maxval = int(parts[2])
    raw = np.frombuffer(parts[3], dtype=np.uint8, count=w * h * 3)
    return raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / maxval


def export_dataset(out_dir, n_scenes: int, seed: int, num_classes: int,
                   image_size: int = 96) -> list[Path]:
    """Write scenes as PPM files plus a gts.csv manifest; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    with open(out / "gts.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "class", "x0", "y0", "w", "h"])
        for i in range(n_scenes):
            scene = generate_scene(np.random.default_rng((seed, i)), num_classes, image_size)
            path = out / f"scene_{i:05d}.ppm"
            write_ppm(scene.image, path)
            written.append(path)
            for box, class_id in scene.gts:
                writer.writerow([i, class_id, int(box.x0), int(box.y0),
                                 int(box.w), int(box.h)])
    written.append(out / "gts.csv")
    return written
