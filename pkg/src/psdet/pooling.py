"""Position-sensitive RoI pooling, forward and backward.

An RoI is divided into a k x k grid of bins. Unlike ordinary RoI pooling,
bin (i, j) does not see the whole channel stack: it averages exactly one
dedicated map per output channel, selected by the bin's grid position. The
map bank therefore carries k^2 * (C+1) channels for classification (C
foreground classes plus background) or 4 * k^2 channels for box regression.

Channel layout is bin-major then class and is the single canonical layout
everywhere in this package:

    channel = (i * k + j) * channels_per_bin + c

with i the bin row and j the bin column. Bin (i, j) of an RoI of size
w x h spans pixels floor(i*h/k) <= y < ceil((i+1)*h/k) (and likewise in x),
offset by the RoI corner. Spans are never empty for extents >= 1, and
adjacent spans may overlap when k does not divide the extent; the backward
pass accumulates additively over such overlaps and over overlapping RoIs.

Implementation notes: RoIs are grouped by (image, w, h) so each group's
windows can be gathered and reduced in a handful of vectorized operations.
For k >= 2 bin sums come from a prefix-sum table over each RoI window;
the table never spans more than the window itself, so its rounding stays
far below 1e-12 of a direct per-pixel sum at any realistic window size.
For k = 1 the bin average is computed directly as the window mean, making
the degenerate grid bitwise identical to global RoI average pooling.

Only average pooling is provided. RoIs must have integer feature-grid
coordinates (see ``boxes.project_roi``); fractional or interpolated
sampling is out of scope.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .validation import as_feature_map, check_positive_int, check_same_shape

__all__ = ["PoolConfig", "bin_span", "bank_channel", "pool_forward", "pool_backward"]

CLASSIFICATION = "classification"
REGRESSION = "regression"


@dataclass(frozen=True)
class PoolConfig:
    """Grid side ``k``, foreground class count, and which bank is pooled."""

    k: int
    num_classes: int
    map_kind: str = CLASSIFICATION

    def __post_init__(self):
        check_positive_int(self.k, "k")
        check_positive_int(self.num_classes, "num_classes")
        if self.map_kind not in (CLASSIFICATION, REGRESSION):
            raise ValueError(f"map_kind must be '{CLASSIFICATION}' or '{REGRESSION}', "
                             f"got {self.map_kind!r}")

    @property
    def channels_per_bin(self) -> int:
        return self.num_classes + 1 if self.map_kind == CLASSIFICATION else 4

    @property
    def total_channels(self) -> int:
        return self.k * self.k * self.channels_per_bin


def bank_channel(k: int, channels_per_bin: int, i: int, j: int, c: int) -> int:
    """Map (bin row, bin col, class-or-coord) to the bank's channel index."""
    if not (0 <= i < k and 0 <= j < k and 0 <= c < channels_per_bin):
        raise ValueError(f"bank index ({i}, {j}, {c}) out of range for "
                         f"k={k}, channels_per_bin={channels_per_bin}")
    return (i * k + j) * channels_per_bin + c


def bin_span(index: int, extent: int, k: int) -> tuple[int, int]:
    """Pixel range [lo, hi) covered by grid cell ``index`` along one axis.

    lo = floor(index * extent / k), hi = ceil((index + 1) * extent / k).
    The span is nonempty for every extent >= 1.
    """
    if not 0 <= index < k:
        raise ValueError(f"bin index {index} out of range for k={k}")
    if extent < 1:
        raise ValueError(f"extent must be >= 1, got {extent}")
    lo = (index * extent) // k
    hi = -((-(index + 1) * extent) // k)   # ceil((index+1)*extent/k)
    assert lo < hi, "floor/ceil spans are nonempty for extent >= 1"
    return lo, hi


def _prepare_rois(rois, n_images: int, feat_h: int, feat_w: int) -> np.ndarray:
    """Validate integer coordinates, clip into the map; (R, 5) int array."""
    raw = np.array([(r.batch_index, r.x0, r.y0, r.w, r.h) for r in rois],
                   dtype=np.float64).reshape(-1, 5)
    if raw.size and not np.all(raw == np.floor(raw)):
        bad = int(np.flatnonzero((raw != np.floor(raw)).any(axis=1))[0])
        raise ValueError(f"RoI {bad} has fractional coordinates "
                         f"{tuple(raw[bad, 1:])}; project to the feature grid first")
    prep = raw.astype(np.int64)
    if raw.size and not np.all((prep[:, 0] >= 0) & (prep[:, 0] < n_images)):
        bad = int(np.flatnonzero((prep[:, 0] < 0) | (prep[:, 0] >= n_images))[0])
        raise ValueError(f"RoI {bad} batch_index {prep[bad, 0]} out of range")
    x1 = prep[:, 1] + prep[:, 3]
    y1 = prep[:, 2] + prep[:, 4]
    prep[:, 1] = np.clip(prep[:, 1], 0, feat_w - 1)
    prep[:, 2] = np.clip(prep[:, 2], 0, feat_h - 1)
    prep[:, 3] = np.maximum(np.minimum(x1, feat_w) - prep[:, 1], 1)
    prep[:, 4] = np.maximum(np.minimum(y1, feat_h) - prep[:, 2], 1)
    return prep


def _groups(prep: np.ndarray, lo: int, hi: int) -> dict:
    """Indices of RoIs sharing (batch, w, h), preserving original order."""
    groups: dict[tuple[int, int, int], list[int]] = {}
    for r in range(lo, hi):
        b, _, _, w, h = prep[r]
        groups.setdefault((int(b), int(w), int(h)), []).append(r)
    return groups


def _window_indices(prep: np.ndarray, idxs: list[int], b: int, w: int, h: int,
                    channels: int, feat_h: int, feat_w: int) -> np.ndarray:
    """Flat map indices of each RoI window: (G, channels, h, w)."""
    x0 = prep[idxs, 1]
    y0 = prep[idxs, 2]
    chan_rows = (b * channels + np.arange(channels)) * feat_h          # (C,)
    rows = (chan_rows[None, :, None] + y0[:, None, None]
            + np.arange(h)[None, None, :]) * feat_w                    # (G, C, h)
    cols = x0[:, None] + np.arange(w)[None, :]                         # (G, w)
    return rows[:, :, :, None] + cols[:, None, None, :]


def _bin_tables(w: int, h: int, k: int):
    """Per-axis span bounds and the (k, k) pixel-count table."""
    ylo, yhi = zip(*(bin_span(i, h, k) for i in range(k)))
    xlo, xhi = zip(*(bin_span(j, w, k) for j in range(k)))
    ylo, yhi = np.array(ylo), np.array(yhi)
    xlo, xhi = np.array(xlo), np.array(xhi)
    n_px = (yhi - ylo)[:, None] * (xhi - xlo)[None, :]
    return ylo, yhi, xlo, xhi, n_px


def _forward_range(maps, prep, cfg: PoolConfig, out, lo: int, hi: int) -> None:
    k, cpb = cfg.k, cfg.channels_per_bin
    _, channels, feat_h, feat_w = maps.shape
    flat = maps.reshape(-1)
    ch = (np.arange(k * k).reshape(k, k) * cpb)[None, :, :] + np.arange(cpb)[:, None, None]
    for (b, w, h), idxs in _groups(prep, lo, hi).items():
        idx4 = _window_indices(prep, idxs, b, w, h, channels, feat_h, feat_w)
        windows = flat[idx4]                                    # (G, C, h, w)
        if k == 1:
            out[idxs, :, 0, 0] = windows.mean(axis=(2, 3))
            continue
        ylo, yhi, xlo, xhi, n_px = _bin_tables(w, h, k)
        table = np.zeros((len(idxs), channels, h + 1, w + 1))
        table[:, :, 1:, 1:] = windows.cumsum(axis=2).cumsum(axis=3)
        ylo_b, yhi_b = ylo[None, :, None], yhi[None, :, None]
        xlo_b, xhi_b = xlo[None, None, :], xhi[None, None, :]
        sums = (table[:, ch, yhi_b, xhi_b] - table[:, ch, ylo_b, xhi_b]
                - table[:, ch, yhi_b, xlo_b] + table[:, ch, ylo_b, xlo_b])
        out[idxs] = sums / n_px


def pool_forward(maps, rois, cfg: PoolConfig, workers: int = 1) -> np.ndarray:
    """Pool each RoI's k x k bins from its dedicated maps.

    Args:
        maps: (n, cfg.total_channels, H, W) score-map bank.
        rois: RoIs with integer feature-grid coordinates; boxes reaching
            outside the map are clipped.
        cfg: grid size / class count / bank kind.
        workers: > 1 splits the RoI list across threads; per-RoI output rows
            are disjoint so the result matches the serial path.

    Returns:
        (num_rois, channels_per_bin, k, k) array of bin averages.
    """
    maps = as_feature_map(maps, "score maps")
    if maps.shape[1] != cfg.total_channels:
        raise ValueError(f"score maps have {maps.shape[1]} channels, config requires "
                         f"{cfg.total_channels} ({cfg.map_kind}, k={cfg.k})")
    n, _, feat_h, feat_w = maps.shape
    prep = _prepare_rois(rois, n, feat_h, feat_w)
    out = np.empty((len(prep), cfg.channels_per_bin, cfg.k, cfg.k), dtype=np.float64)
    if workers <= 1 or len(prep) < 2:
        _forward_range(maps, prep, cfg, out, 0, len(prep))
        return out
    bounds = _chunk_bounds(len(prep), workers)
    with ThreadPoolExecutor(max_workers=len(bounds)) as pool:
        futures = [pool.submit(_forward_range, maps, prep, cfg, out, lo, hi)
                   for lo, hi in bounds]
        for f in futures:
            f.result()
    return out


def _backward_range(prep, cfg: PoolConfig, grad_bins, grad_maps, lo: int, hi: int) -> None:
    k, cpb = cfg.k, cfg.channels_per_bin
    _, channels, feat_h, feat_w = grad_maps.shape
    grad_flat = grad_maps.reshape(-1)
    for (b, w, h), idxs in _groups(prep, lo, hi).items():
        idx4 = _window_indices(prep, idxs, b, w, h, channels, feat_h, feat_w)
        ylo, yhi, xlo, xhi, n_px = _bin_tables(w, h, k)
        wgrad = np.zeros((len(idxs), channels, h, w))
        for i in range(k):
            for j in range(k):
                blk = (i * k + j) * cpb
                wgrad[:, blk:blk + cpb, ylo[i]:yhi[i], xlo[j]:xhi[j]] += \
                    (grad_bins[idxs, :, i, j] / n_px[i, j])[:, :, None, None]
        grad_flat += np.bincount(idx4.ravel(), weights=wgrad.ravel(),
                                 minlength=grad_flat.size)


def pool_backward(maps_shape, rois, cfg: PoolConfig, grad_bins, workers: int = 1) -> np.ndarray:
    """Scatter bin gradients back onto the score maps.

    Every pixel of bin (i, j) receives grad_bins[r, c, i, j] / n where n is
    the bin's pixel count; contributions from overlapping bins and RoIs add.
    With ``workers`` > 1 each thread accumulates into its own buffer and the
    buffers are summed in a fixed chunk order, so the result is deterministic
    for a given worker count.
    """
    maps_shape = tuple(int(s) for s in maps_shape)
    if len(maps_shape) != 4:
        raise ValueError(f"maps_shape must be 4-D, got {maps_shape}")
    if maps_shape[1] != cfg.total_channels:
        raise ValueError(f"maps_shape has {maps_shape[1]} channels, config requires "
                         f"{cfg.total_channels}")
    grad_bins = np.asarray(grad_bins, dtype=np.float64)
    check_same_shape(grad_bins, (len(rois), cfg.channels_per_bin, cfg.k, cfg.k), "grad_bins")
    n, _, feat_h, feat_w = maps_shape
    prep = _prepare_rois(rois, n, feat_h, feat_w)
    if workers <= 1 or len(prep) < 2:
        grad_maps = np.zeros(maps_shape, dtype=np.float64)
        _backward_range(prep, cfg, grad_bins, grad_maps, 0, len(prep))
        return grad_maps
    bounds = _chunk_bounds(len(prep), workers)
    buffers = [np.zeros(maps_shape, dtype=np.float64) for _ in bounds]
    with ThreadPoolExecutor(max_workers=len(bounds)) as pool:
        futures = [pool.submit(_backward_range, prep, cfg, grad_bins, buf, lo, hi)
                   for buf, (lo, hi) in zip(buffers, bounds)]
        for f in futures:
            f.result()
    grad_maps = buffers[0]
    for buf in buffers[1:]:
        grad_maps += buf
    return grad_maps


def _chunk_bounds(total: int, workers: int) -> list[tuple[int, int]]:
    n_chunks = min(workers, total)
    size = math.ceil(total / n_chunks)
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]
