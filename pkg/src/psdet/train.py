"""SGD training loop with optional online hard example mining, plus evaluation.

One step: draw a scene, generate N proposals, label them against the ground
truth, score all N in a single shared-computation forward pass, and compute
each RoI's classification + gated regression loss. With mining enabled only
the B highest-loss RoIs contribute gradients (mean over B); otherwise all N
do (mean over N). The update is momentum SGD with decoupled-from-nothing
plain weight decay:

    v <- momentum * v - lr * (grad + weight_decay * w);  w <- w + v

All randomness flows through numpy Generators seeded from (config seed,
stream tag, step), so a full run is reproducible bit for bit in the default
single-threaded mode.
"""

from dataclasses import dataclass, field

import numpy as np

from .head import LossConfig, smooth_l1_batch
from .network import (Backbone, backward_full, build_backbone, forward_full,
                      image_forward, project_proposals)
from .postprocess import Detection, assemble_detections, average_precision
from .sampling import SamplerConfig, generate_proposals, label_rois, ohem_select
from .scenes import SyntheticScene, generate_scene

__all__ = ["TrainConfig", "SGDState", "TrainingDiverged", "build_net", "train_step",
           "train", "evaluate", "evaluate_oracle", "eval_scenes", "EVAL_THRESHOLD",
           "NMS_IOU"]

EVAL_THRESHOLD = 0.05
NMS_IOU = 0.3

# rng stream tags (mixed into the seed tuple)
_INIT, _STEP, _EVAL = 0, 1, 2


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on; hashable and JSON-serializable."""

    lr_schedule: tuple = ((2000, 1e-3), (1000, 1e-4))
    momentum: float = 0.9
    weight_decay: float = 5e-4
    k: int = 3
    num_classes: int = 3
    image_size: int = 96
    scales: tuple | None = None
    ohem: bool = False
    seed: int = 0
    widths: tuple = (16, 32, 64, 64)
    reduce_width: int = 64
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        lrs = [lr for _, lr in self.lr_schedule]
        if not lrs or any(lr <= 0 for lr in lrs):
            raise ValueError(f"learning rates must be positive, got {self.lr_schedule}")
        if any(a < b for a, b in zip(lrs, lrs[1:])):
            raise ValueError(f"lr schedule must be non-increasing, got {self.lr_schedule}")

    @property
    def total_steps(self) -> int:
        return sum(int(n) for n, _ in self.lr_schedule)

    def lr_at(self, step: int) -> float:
        """Learning rate for 0-based ``step``."""
        passed = 0
        for n, lr in self.lr_schedule:
            passed += int(n)
            if step < passed:
                return float(lr)
        return float(self.lr_schedule[-1][1])


@dataclass
class SGDState:
    """Per-parameter momentum buffers, aligned with ``Backbone.parameters()``."""

    velocity: dict = field(default_factory=dict)

    @classmethod
    def for_net(cls, net: Backbone) -> "SGDState":
        vel = {name: (np.zeros_like(layer.weights), np.zeros_like(layer.bias))
               for name, layer in net.parameters()}
        return cls(velocity=vel)


def build_net(cfg: TrainConfig) -> Backbone:
    rng = np.random.default_rng((cfg.seed, _INIT))
    return build_backbone(cfg.k, cfg.num_classes, rng, widths=cfg.widths,
                          reduce_width=cfg.reduce_width)


def sgd_update(net: Backbone, grads: dict, state: SGDState, lr: float,
               momentum: float, weight_decay: float) -> None:
    for name, layer in net.parameters():
        gw, gb = grads[name]
        vw, vb = state.velocity[name]
        vw *= momentum
        vw -= lr * (gw + weight_decay * layer.weights)
        vb *= momentum
        vb -= lr * (gb + weight_decay * layer.bias)
        layer.weights += vw
        layer.bias += vb


def _per_roi_losses(fwd, labeled, loss_cfg: LossConfig):
    """Loss vector over all N RoIs plus the pieces needed for the backward pass."""
    logits = fwd.scores.logits
    n = logits.shape[0]
    labels = np.array([s.label for s in labeled], dtype=np.int64)
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    losses = -log_probs[np.arange(n), labels]
    pos = np.flatnonzero(labels > 0)
    reg_grad = np.zeros((n, 4), dtype=np.float64)
    if pos.size:
        targets = np.array([labeled[i].target_delta for i in pos], dtype=np.float64)
        reg_loss, grad = smooth_l1_batch(fwd.deltas[pos], targets, loss_cfg.smooth_l1_beta)
        losses[pos] += loss_cfg.lam * reg_loss
        reg_grad[pos] = loss_cfg.lam * grad
    return losses, labels, reg_grad


def train_step(net: Backbone, scene: SyntheticScene, cfg: TrainConfig, state: SGDState,
               rng: np.random.Generator, step: int = 0) -> float:
    """One SGD update on one scene; returns the mean loss over the
    backpropagated RoIs. Raises TrainingDiverged on a non-finite loss."""
    proposals = generate_proposals(scene.gts, scene.hw, cfg.sampler, rng)
    labeled = label_rois(proposals, scene.gts, cfg.sampler.pos_iou)

    cache = image_forward(net, scene.image)
    rois = project_proposals(proposals, net, cache.feature_hw)
    fwd = forward_full(net, scene.image, rois, image_cache=cache)
    losses, labels, reg_grad = _per_roi_losses(fwd, labeled, cfg.loss)

    if cfg.ohem:
        selected = ohem_select(losses, cfg.sampler.batch_rois)
    else:
        selected = np.arange(len(losses))
    m = len(selected)
    batch_loss = float(losses[selected].mean())
    if not np.isfinite(batch_loss):
        raise TrainingDiverged(
            f"non-finite loss {batch_loss} at step {step} "
            f"(labels: {np.bincount(labels, minlength=cfg.num_classes + 1).tolist()})")

    grad_logits = np.zeros_like(fwd.scores.probs)
    sel_mask = np.zeros(len(losses), dtype=bool)
    sel_mask[selected] = True
    grad_logits[sel_mask] = fwd.scores.probs[sel_mask]
    grad_logits[sel_mask, labels[sel_mask]] -= 1.0
    grad_logits /= m
    grad_deltas = np.where(sel_mask[:, None], reg_grad, 0.0) / m

    grads = backward_full(net, fwd, grad_logits, grad_deltas)
    sgd_update(net, grads, state, cfg.lr_at(step), cfg.momentum, cfg.weight_decay)
    return batch_loss


def _scene_size(cfg: TrainConfig, rng: np.random.Generator) -> int:
    if cfg.scales:
        return int(cfg.scales[int(rng.integers(0, len(cfg.scales)))])
    return cfg.image_size


def train(cfg: TrainConfig, steps: int | None = None, on_step=None, scenes=None
          ) -> tuple[Backbone, list[float]]:
    """Run ``steps`` updates (default: the full schedule) from a fresh network.

    By default every step draws a fresh scene from the seeded stream; a
    ``scenes`` list is cycled through instead when given. ``on_step(step,
    loss, lr, net, state)`` is invoked after every update; returns the
    trained network and the per-step loss history.
    """
    net = build_net(cfg)
    state = SGDState.for_net(net)
    total = cfg.total_steps if steps is None else int(steps)
    history: list[float] = []
    for step in range(total):
        rng = np.random.default_rng((cfg.seed, _STEP, step))
        if scenes is not None:
            scene = scenes[step % len(scenes)]
        else:
            scene = generate_scene(rng, cfg.num_classes, image_size=_scene_size(cfg, rng))
        loss = train_step(net, scene, cfg, state, rng, step=step)
        history.append(loss)
        if on_step is not None:
            on_step(step, loss, cfg.lr_at(step), net, state)
    return net, history


def eval_scenes(cfg: TrainConfig, n_scenes: int, seed: int | None = None
                ) -> list[SyntheticScene]:
    """Fixed evaluation set, disjoint from the training stream by tag."""
    base = cfg.seed if seed is None else seed
    return [generate_scene(np.random.default_rng((base, _EVAL, i)), cfg.num_classes,
                           image_size=cfg.image_size) for i in range(n_scenes)]


def predict_scene(net: Backbone, scene: SyntheticScene, sampler: SamplerConfig,
                  rng: np.random.Generator, image_id: int = 0,
                  score_threshold: float = EVAL_THRESHOLD,
                  nms_iou: float = NMS_IOU) -> list[Detection]:
    proposals = generate_proposals(scene.gts, scene.hw, sampler, rng)
    cache = image_forward(net, scene.image)
    rois = project_proposals(proposals, net, cache.feature_hw)
    fwd = forward_full(net, scene.image, rois, image_cache=cache)
    return assemble_detections(fwd.scores.probs, fwd.deltas, proposals, scene.hw,
                               score_threshold=score_threshold, nms_iou=nms_iou,
                               image_id=image_id)


def evaluate(net: Backbone, scenes: list[SyntheticScene], cfg: TrainConfig,
             seed: int = 0) -> tuple[dict[int, float], float, list[Detection]]:
    """mAP@0.5 over ``scenes`` with N proposals per scene, NMS 0.3, threshold 0.05."""
    detections: list[Detection] = []
    gts = []
    for i, scene in enumerate(scenes):
        rng = np.random.default_rng((seed, _EVAL, i))
        detections.extend(predict_scene(net, scene, cfg.sampler, rng, image_id=i))
        gts.extend((i, box, class_id) for box, class_id in scene.gts)
    per_class, mean_ap = average_precision(detections, gts, iou_threshold=0.5)
    return per_class, mean_ap, detections


def evaluate_oracle(scenes: list[SyntheticScene]) -> tuple[dict[int, float], float,
                                                           list[Detection]]:
    """Harness upper bound: feed the ground truths back as unit-score detections."""
    detections = [Detection(image_id=i, class_id=class_id, score=1.0, box=box)
                  for i, scene in enumerate(scenes) for box, class_id in scene.gts]
    gts = [(i, box, class_id) for i, scene in enumerate(scenes)
           for box, class_id in scene.gts]
    per_class, mean_ap = average_precision(detections, gts, iou_threshold=0.5)
    return per_class, mean_ap, detections
