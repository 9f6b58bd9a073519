"""Score-map visualization: per-bin map grids and pooled-bin overlays as PPM.

Scores are mapped to grayscale with zero at mid-gray (128), so an untrained
zero-initialized bank renders as a uniform gray image. All rendering is a
pure function of the network weights and the scene, hence byte-stable.
"""

from pathlib import Path

import numpy as np

from .boxes import RoI
from .network import Backbone, image_forward
from .pooling import PoolConfig, bank_channel, pool_forward
from .scenes import write_ppm

__all__ = ["score_to_gray", "class_bin_maps", "render_bin_grid", "render_overlay",
           "visualize_scene"]


def score_to_gray(values: np.ndarray, scale: float | None = None) -> np.ndarray:
    """Map scores to [0, 1] grayscale with 0 -> 0.5; symmetric around zero."""
    values = np.asarray(values, dtype=np.float64)
    if scale is None:
        scale = float(np.abs(values).max())
    if scale == 0.0:
        return np.full(values.shape, 0.5)
    return np.clip(0.5 + 0.5 * values / scale, 0.0, 1.0)


def class_bin_maps(net: Backbone, cls_maps: np.ndarray, class_id: int) -> np.ndarray:
    """(k, k, H, W) stack of the classification maps dedicated to one class."""
    k, cpb = net.k, net.num_classes + 1
    if not 0 <= class_id < cpb:
        raise ValueError(f"class_id {class_id} out of range (C+1={cpb})")
    h, w = cls_maps.shape[2], cls_maps.shape[3]
    out = np.empty((k, k, h, w), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out[i, j] = cls_maps[0, bank_channel(k, cpb, i, j, class_id)]
    return out


def render_bin_grid(net: Backbone, cls_maps: np.ndarray, class_id: int,
                    out_dir, upscale: int = 16) -> list[Path]:
    """Write one grayscale PPM per (i, j) bin map, normalized jointly."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    maps = class_bin_maps(net, cls_maps, class_id)
    scale = float(np.abs(maps).max())
    paths = []
    for i in range(net.k):
        for j in range(net.k):
            gray = score_to_gray(maps[i, j], scale)
            big = np.repeat(np.repeat(gray, upscale, axis=0), upscale, axis=1)
            rgb = np.stack([big, big, big])
            path = out / f"class{class_id}_bin_{i}_{j}.ppm"
            write_ppm(rgb, path)
            paths.append(path)
    return paths


def render_overlay(net: Backbone, image: np.ndarray, cls_maps: np.ndarray,
                   roi_feat: RoI, class_id: int, out_path) -> Path:
    """Input image tinted by the RoI's pooled bin responses, box edges in white."""
    cfg = PoolConfig(net.k, net.num_classes, "classification")
    bins = pool_forward(cls_maps, [roi_feat], cfg)[0, class_id]   # (k, k)
    strength = score_to_gray(bins)
    canvas = np.asarray(image, dtype=np.float64)[0].copy()
    stride = net.stride
    x0 = int(roi_feat.x0) * stride
    y0 = int(roi_feat.y0) * stride
    w = int(roi_feat.w) * stride
    h = int(roi_feat.h) * stride
    hh, ww = canvas.shape[1:]
    for i in range(net.k):
        ys = y0 + (i * h) // net.k
        ye = y0 + ((i + 1) * h) // net.k
        for j in range(net.k):
            xs = x0 + (j * w) // net.k
            xe = x0 + ((j + 1) * w) // net.k
            ys_c, ye_c = max(ys, 0), min(ye, hh)
            xs_c, xe_c = max(xs, 0), min(xe, ww)
            if ys_c < ye_c and xs_c < xe_c:
                cell = canvas[:, ys_c:ye_c, xs_c:xe_c]
                cell *= 0.5
                cell[0] += 0.5 * strength[i, j]
    # box border
    y1, x1 = min(y0 + h, hh) - 1, min(x0 + w, ww) - 1
    y0b, x0b = max(y0, 0), max(x0, 0)
    if y0b <= y1 and x0b <= x1:
        canvas[:, y0b, x0b:x1 + 1] = 1.0
        canvas[:, y1, x0b:x1 + 1] = 1.0
        canvas[:, y0b:y1 + 1, x0b] = 1.0
        canvas[:, y0b:y1 + 1, x1] = 1.0
    write_ppm(canvas, out_path)
    return Path(out_path)


def visualize_scene(net: Backbone, scene, out_dir, roi: RoI | None = None,
                    class_id: int | None = None) -> list[Path]:
    """Full visualization bundle for one scene: input, bin grid, overlay.

    Defaults: the first ground-truth object's box and class (or class 1 on
    a box covering the whole image when the scene is empty).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = image_forward(net, scene.image)
    fh, fw = cache.feature_hw
    if roi is None:
        if scene.gts:
            roi = scene.gts[0][0]
        else:
            roi = RoI(batch_index=0, x0=0.0, y0=0.0,
                      w=float(scene.hw[1]), h=float(scene.hw[0]))
    if class_id is None:
        class_id = scene.gts[0][1] if scene.gts else 1
    from .boxes import project_roi
    roi_feat = project_roi(roi, net.stride, feat_w=fw, feat_h=fh)

    paths = [out / "input.ppm"]
    write_ppm(scene.image, paths[0])
    paths.extend(render_bin_grid(net, cache.cls_maps, class_id, out))
    paths.append(render_overlay(net, scene.image, cache.cls_maps, roi_feat,
                                class_id, out / "overlay.ppm"))
    return paths
