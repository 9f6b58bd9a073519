"""Small fully convolutional detection network and its exact backward pass.

The trunk is a stack of stride-2 3x3 convolutions (one rectifier after
each), a 1x1 dimension-reduction convolution, and two sibling 1x1 output
convolutions: the classification bank with k^2*(C+1) channels and the
class-agnostic regression bank with 4*k^2 channels. Every learnable layer
operates on the whole image; per-RoI work is limited to pooling and voting,
so the image-level activations can be cached and shared across any number
of RoI sets.

Hidden convolutions use fan-in-scaled Gaussian initialization; both output
banks start at zero so an untrained network scores every class uniformly.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .boxes import RoI, project_roi
from .head import ClassScores, class_scores, vote, vote_box, vote_backward
from .pooling import PoolConfig, pool_forward, pool_backward
from .tensor import ConvLayer, conv2d_forward, conv2d_backward, relu_forward, relu_backward

__all__ = ["Backbone", "ImageCache", "FullForward", "build_backbone", "image_forward",
           "forward_full", "backward_full", "project_proposals", "score_proposals"]


@dataclass
class Backbone:
    trunk: list
    reduce: ConvLayer
    cls_bank: ConvLayer
    reg_bank: ConvLayer
    k: int
    num_classes: int

    @property
    def stride(self) -> int:
        return 2 ** len(self.trunk)

    @property
    def cls_config(self) -> PoolConfig:
        return PoolConfig(self.k, self.num_classes, "classification")

    @property
    def reg_config(self) -> PoolConfig:
        return PoolConfig(self.k, self.num_classes, "regression")

    def parameters(self) -> list[tuple[str, ConvLayer]]:
        """Canonical (name, layer) order used by SGD and checkpoints."""
        named = [(f"trunk{i}", layer) for i, layer in enumerate(self.trunk)]
        return named + [("reduce", self.reduce), ("cls_bank", self.cls_bank),
                        ("reg_bank", self.reg_bank)]


def _he_conv(rng: np.random.Generator, out_c: int, in_c: int, ksize: int,
             stride: int, padding: int) -> ConvLayer:
    fan_in = in_c * ksize * ksize
    w = rng.standard_normal((out_c, in_c, ksize, ksize)) * np.sqrt(2.0 / fan_in)
    return ConvLayer(weights=w, bias=np.zeros(out_c), stride=stride, padding=padding)


def _zero_conv(out_c: int, in_c: int) -> ConvLayer:
    return ConvLayer(weights=np.zeros((out_c, in_c, 1, 1)), bias=np.zeros(out_c),
                     stride=1, padding=0)


def build_backbone(k: int, num_classes: int, rng: np.random.Generator,
                   widths: tuple = (16, 32, 64, 64), reduce_width: int = 64,
                   in_channels: int = 3) -> Backbone:
    """Fresh network; overall stride is 2**len(widths)."""
    trunk = []
    prev = in_channels
    for width in widths:
        trunk.append(_he_conv(rng, width, prev, ksize=3, stride=2, padding=1))
        prev = width
    reduce = _he_conv(rng, reduce_width, prev, ksize=1, stride=1, padding=0)
    cls_bank = _zero_conv(k * k * (num_classes + 1), reduce_width)
    reg_bank = _zero_conv(4 * k * k, reduce_width)
    return Backbone(trunk=trunk, reduce=reduce, cls_bank=cls_bank, reg_bank=reg_bank,
                    k=k, num_classes=num_classes)


@dataclass
class ImageCache:
    """Image-level activations, computed once per image and reusable across RoI sets."""

    image: np.ndarray
    trunk_in: list
    trunk_pre: list
    reduce_pre: np.ndarray
    features: np.ndarray
    cls_maps: np.ndarray
    reg_maps: np.ndarray

    @property
    def feature_hw(self) -> tuple[int, int]:
        return self.features.shape[2], self.features.shape[3]


@dataclass
class FullForward:
    scores: ClassScores
    deltas: np.ndarray
    rois: list
    image_cache: ImageCache


def image_forward(net: Backbone, image: np.ndarray) -> ImageCache:
    """Run every convolutional layer on the whole image."""
    x = np.asarray(image, dtype=np.float64)
    trunk_in, trunk_pre = [], []
    for layer in net.trunk:
        trunk_in.append(x)
        pre = conv2d_forward(x, layer)
        trunk_pre.append(pre)
        x = relu_forward(pre)
    reduce_pre = conv2d_forward(x, net.reduce)
    features = relu_forward(reduce_pre)
    cls_maps = conv2d_forward(features, net.cls_bank)
    reg_maps = conv2d_forward(features, net.reg_bank)
    return ImageCache(image=image, trunk_in=trunk_in, trunk_pre=trunk_pre,
                      reduce_pre=reduce_pre, features=features,
                      cls_maps=cls_maps, reg_maps=reg_maps)


def project_proposals(proposals, net: Backbone, feature_hw) -> list[RoI]:
    fh, fw = feature_hw
    return [project_roi(p, net.stride, feat_w=fw, feat_h=fh) for p in proposals]


def forward_full(net: Backbone, image, rois, image_cache: Optional[ImageCache] = None,
                 workers: int = 1) -> FullForward:
    """Score a set of feature-grid RoIs; reuses ``image_cache`` when given.

    ``rois`` must already be on the feature grid (see ``project_proposals``).
    Returns class scores, class-agnostic box deltas, and the cache needed by
    ``backward_full``.
    """
    if image_cache is None:
        image_cache = image_forward(net, image)
    bins_cls = pool_forward(image_cache.cls_maps, rois, net.cls_config, workers=workers)
    bins_reg = pool_forward(image_cache.reg_maps, rois, net.reg_config, workers=workers)
    logits = vote(bins_cls)
    deltas = vote_box(bins_reg)
    return FullForward(scores=class_scores(logits), deltas=deltas, rois=list(rois),
                       image_cache=image_cache)


def score_proposals(net: Backbone, image, proposals,
                    image_cache: Optional[ImageCache] = None) -> FullForward:
    """Convenience: project image-space proposals and run the full forward."""
    if image_cache is None:
        image_cache = image_forward(net, image)
    rois = project_proposals(proposals, net, image_cache.feature_hw)
    return forward_full(net, image, rois, image_cache=image_cache)


def backward_full(net: Backbone, fwd: FullForward, grad_logits, grad_deltas,
                  workers: int = 1) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Exact gradients of every layer from upstream (logit, delta) gradients.

    Returns {layer name: (grad_weights, grad_bias)} in ``parameters()`` order.
    The two bank gradients meet at the shared feature map and add.
    """
    cache = fwd.image_cache
    gbins_cls = vote_backward(np.asarray(grad_logits, dtype=np.float64), net.k)
    gbins_reg = vote_backward(np.asarray(grad_deltas, dtype=np.float64), net.k)
    gcls_maps = pool_backward(cache.cls_maps.shape, fwd.rois, net.cls_config, gbins_cls,
                              workers=workers)
    greg_maps = pool_backward(cache.reg_maps.shape, fwd.rois, net.reg_config, gbins_reg,
                              workers=workers)

    grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    gfeat_cls, gw, gb = conv2d_backward(cache.features, net.cls_bank, gcls_maps)
    grads["cls_bank"] = (gw, gb)
    gfeat_reg, gw, gb = conv2d_backward(cache.features, net.reg_bank, greg_maps)
    grads["reg_bank"] = (gw, gb)
    gfeat = gfeat_cls + gfeat_reg

    gpre = relu_backward(cache.reduce_pre, gfeat)
    gx, gw, gb = conv2d_backward(relu_forward(cache.trunk_pre[-1]), net.reduce, gpre)
    grads["reduce"] = (gw, gb)

    for i in range(len(net.trunk) - 1, -1, -1):
        gpre = relu_backward(cache.trunk_pre[i], gx)
        gx, gw, gb = conv2d_backward(cache.trunk_in[i], net.trunk[i], gpre)
        grads[f"trunk{i}"] = (gw, gb)
    return grads
