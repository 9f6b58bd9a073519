"""Timing harness contrasting shared-computation and per-RoI detection heads.

Three head variants consume the same backbone features and the same RoI
set and emit (N, C+1) class logits:

  * ``psroi_head``      - 1x1 bank convolution on the whole image, then
                          position-sensitive pooling and voting per RoI.
  * ``per_roi_fc_head``  - plain average RoI pooling of the full feature
                          stack to a 7x7 grid, then a small fully connected
                          layer, evaluated independently per RoI.
  * ``per_roi_conv_head`` - same pooling, then a two-layer convolutional
                          subnetwork per RoI before the classifier.

Because the first variant does no learnable per-RoI work, its forward time
stays nearly flat as the RoI count grows, while the per-RoI subnetworks
scale linearly. Wall-clock timing uses warmup reps and median-of-means
reporting.
"""

import csv
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from .boxes import RoI, project_roi
from .network import Backbone, build_backbone
from .pooling import PoolConfig, bin_span, pool_forward
from .tensor import ConvLayer, conv2d_forward, relu_forward

__all__ = ["BenchConfig", "BenchRow", "BenchReport", "VARIANTS", "run_bench",
           "report_to_csv", "report_to_markdown"]

VARIANTS = ("psroi_head", "per_roi_fc_head", "per_roi_conv_head")
DEFAULT_N_VALUES = (300, 2000)


@dataclass(frozen=True)
class BenchConfig:
    """Workload shape. The image is large enough that the shared backbone
    dominates the cost of the position-sensitive head."""

    image_size: int = 512
    widths: tuple = (16, 32, 64, 64)
    feature_width: int = 64
    k: int = 3
    num_classes: int = 3
    fc_pool: int = 7
    roi_min: int = 32
    roi_max: int = 128


@dataclass
class BenchRow:
    variant: str
    n_rois: int
    mean_ms: float
    std_ms: float
    reps: int


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    environment: dict = field(default_factory=dict)


@dataclass
class _Assets:
    net: Backbone
    fc_weights: np.ndarray
    fc_bias: np.ndarray
    conv_layers: list
    image: np.ndarray
    rois_feat: list
    cfg: BenchConfig


def _build_assets(cfg: BenchConfig, seed: int) -> _Assets:
    rng = np.random.default_rng((seed, 77))
    net = build_backbone(cfg.k, cfg.num_classes, rng, widths=cfg.widths,
                         reduce_width=cfg.feature_width)
    # banks carry signal during the bench so outputs are non-trivial
    net.cls_bank.weights = rng.standard_normal(net.cls_bank.weights.shape) * 0.05
    net.reg_bank.weights = rng.standard_normal(net.reg_bank.weights.shape) * 0.05

    pooled = cfg.feature_width * cfg.fc_pool * cfg.fc_pool
    fc_weights = rng.standard_normal((cfg.num_classes + 1, pooled)) * 0.01
    fc_bias = np.zeros(cfg.num_classes + 1)
    conv_layers = []
    for _ in range(2):
        w = rng.standard_normal((cfg.feature_width, cfg.feature_width, 3, 3)) * 0.02
        conv_layers.append(ConvLayer(weights=w, bias=np.zeros(cfg.feature_width),
                                     stride=1, padding=1))

    image = rng.standard_normal((1, 3, cfg.image_size, cfg.image_size))
    fh = fw = cfg.image_size // net.stride
    n_max = max(DEFAULT_N_VALUES)
    rois = []
    for _ in range(max(n_max, 4000)):
        w = float(rng.integers(cfg.roi_min, cfg.roi_max + 1))
        h = float(rng.integers(cfg.roi_min, cfg.roi_max + 1))
        x0 = float(rng.uniform(0, cfg.image_size - w))
        y0 = float(rng.uniform(0, cfg.image_size - h))
        roi = RoI(batch_index=0, x0=x0, y0=y0, w=w, h=h)
        rois.append(project_roi(roi, net.stride, feat_w=fw, feat_h=fh))
    return _Assets(net=net, fc_weights=fc_weights, fc_bias=fc_bias,
                   conv_layers=conv_layers, image=image, rois_feat=rois, cfg=cfg)


def _shared_features(assets: _Assets) -> np.ndarray:
    x = assets.image
    for layer in assets.net.trunk:
        x = relu_forward(conv2d_forward(x, layer))
    return relu_forward(conv2d_forward(x, assets.net.reduce))


def _roi_avg_pool(features: np.ndarray, roi: RoI, grid: int) -> np.ndarray:
    """Ordinary (not position-sensitive) average pooling of all channels."""
    b, x0, y0 = int(roi.batch_index), int(roi.x0), int(roi.y0)
    w, h = int(roi.w), int(roi.h)
    window = features[b, :, y0:y0 + h, x0:x0 + w]
    out = np.empty((features.shape[1], grid, grid))
    for i in range(grid):
        ylo, yhi = bin_span(i, h, grid)
        for j in range(grid):
            xlo, xhi = bin_span(j, w, grid)
            out[:, i, j] = window[:, ylo:yhi, xlo:xhi].mean(axis=(1, 2))
    return out


def _forward_psroi(assets: _Assets, rois, workers: int = 1) -> np.ndarray:
    features = _shared_features(assets)
    cls_maps = conv2d_forward(features, assets.net.cls_bank)
    cfg = PoolConfig(assets.cfg.k, assets.cfg.num_classes, "classification")
    bins = pool_forward(cls_maps, rois, cfg, workers=workers)
    return bins.mean(axis=(2, 3))


def _forward_fc(assets: _Assets, rois) -> np.ndarray:
    features = _shared_features(assets)
    grid = assets.cfg.fc_pool
    out = np.empty((len(rois), assets.cfg.num_classes + 1))
    for r, roi in enumerate(rois):
        pooled = _roi_avg_pool(features, roi, grid).ravel()
        out[r] = assets.fc_weights @ pooled + assets.fc_bias
    return out


def _forward_conv(assets: _Assets, rois) -> np.ndarray:
    features = _shared_features(assets)
    grid = assets.cfg.fc_pool
    out = np.empty((len(rois), assets.cfg.num_classes + 1))
    for r, roi in enumerate(rois):
        patch = _roi_avg_pool(features, roi, grid)[None]
        for layer in assets.conv_layers:
            patch = relu_forward(conv2d_forward(patch, layer))
        out[r] = assets.fc_weights @ patch.ravel() + assets.fc_bias
    return out


def _run_variant(variant: str, assets: _Assets, rois, workers: int) -> np.ndarray:
    if variant == "psroi_head":
        return _forward_psroi(assets, rois, workers=workers)
    if variant == "per_roi_fc_head":
        return _forward_fc(assets, rois)
    if variant == "per_roi_conv_head":
        return _forward_conv(assets, rois)
    raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")


def _median_of_means(times_ms: list[float], groups: int = 3) -> float:
    chunks = np.array_split(np.asarray(times_ms), min(groups, len(times_ms)))
    return float(np.median([c.mean() for c in chunks]))


def run_bench(variants=VARIANTS[:2], n_values=DEFAULT_N_VALUES, reps: int = 10,
              seed: int = 0, warmup: int = 3, parallel: bool = False,
              cfg: BenchConfig = BenchConfig()) -> BenchReport:
    """Time each variant's full forward (shared layers + head) per RoI count.

    Inputs are identical across variants and N values (RoI prefixes of one
    fixed set). ``parallel`` adds extra rows timing the position-sensitive
    head with threaded per-RoI pooling.
    """
    if not n_values:
        raise ValueError("n_values must be nonempty")
    assets = _build_assets(cfg, seed)
    report = BenchReport(environment={
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
        "image_size": cfg.image_size,
        "feature_width": cfg.feature_width,
        "k": cfg.k,
    })
    jobs = [(v, 1) for v in variants]
    if parallel:
        jobs.extend((v, 4) for v in variants if v == "psroi_head")
    for variant, workers in jobs:
        label = variant if workers == 1 else f"{variant}[workers={workers}]"
        for n in n_values:
            rois = assets.rois_feat[:int(n)]
            for _ in range(warmup):
                _run_variant(variant, assets, rois, workers)
            times = []
            for _ in range(reps):
                t0 = time.perf_counter()
                _run_variant(variant, assets, rois, workers)
                times.append((time.perf_counter() - t0) * 1000.0)
            report.rows.append(BenchRow(variant=label, n_rois=int(n),
                                        mean_ms=_median_of_means(times),
                                        std_ms=float(np.std(times)), reps=reps))
    return report


def report_to_csv(report: BenchReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "n_rois", "mean_ms", "std_ms", "reps"])
        for row in report.rows:
            writer.writerow([row.variant, row.n_rois, f"{row.mean_ms:.3f}",
                             f"{row.std_ms:.3f}", row.reps])


def report_to_markdown(report: BenchReport) -> str:
    lines = ["| variant | N RoIs | mean (ms) | std (ms) | reps |",
             "|---|---:|---:|---:|---:|"]
    for row in report.rows:
        lines.append(f"| {row.variant} | {row.n_rois} | {row.mean_ms:.2f} "
                     f"| {row.std_ms:.2f} | {row.reps} |")
    env = ", ".join(f"{k}={v}" for k, v in report.environment.items())
    lines.append("")
    lines.append(f"Environment: {env}")
    return "\n".join(lines) + "\n"
