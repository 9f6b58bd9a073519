"""Per-RoI head: bin voting, softmax scores, joint loss, box delta coding.

Nothing in here has learnable weights. The pooled bins are averaged into
one logit per class ("voting"), scores come from a shift-stabilized softmax,
and training combines cross-entropy with a smooth-L1 box regression term
gated by the label: background RoIs contribute no regression loss. Box
deltas use the center/log-size parameterization, so decode(encode(p, g))
recovers g exactly.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .boxes import RoI
from .validation import check_finite

__all__ = ["BoxDelta", "LossConfig", "ClassScores", "vote", "vote_box", "vote_backward",
           "softmax", "class_scores", "softmax_ce", "smooth_l1", "smooth_l1_batch",
           "joint_loss", "encode_box", "decode_box", "encode_boxes", "decode_boxes"]


class BoxDelta(NamedTuple):
    """Dimensionless box offsets: center shifts (tx, ty), log-size factors (tw, th)."""

    tx: float
    ty: float
    tw: float
    th: float


@dataclass(frozen=True)
class LossConfig:
    """``lam`` weights the regression term; ``smooth_l1_beta`` is the L2/L1 elbow."""

    lam: float = 1.0
    smooth_l1_beta: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.smooth_l1_beta <= 0:
            raise ValueError(f"smooth_l1_beta must be > 0, got {self.smooth_l1_beta}")


@dataclass(frozen=True)
class ClassScores:
    """Per-RoI class logits (num_rois, C+1) and their softmax probabilities."""

    logits: np.ndarray
    probs: np.ndarray


def vote(bins) -> np.ndarray:
    """Average the k^2 pooled bins into per-class logits (num_rois, C+1)."""
    bins = np.asarray(bins, dtype=np.float64)
    if bins.ndim != 4:
        raise ValueError(f"bins must be (num_rois, channels, k, k), got {bins.shape}")
    return bins.mean(axis=(2, 3))


def vote_box(bins) -> np.ndarray:
    """Average the k^2 pooled regression bins into (num_rois, 4) deltas."""
    bins = np.asarray(bins, dtype=np.float64)
    if bins.ndim != 4 or bins.shape[1] != 4:
        raise ValueError(f"regression bins must be (num_rois, 4, k, k), got {bins.shape}")
    return bins.mean(axis=(2, 3))


def vote_backward(grad_logits, k: int) -> np.ndarray:
    """Gradient of the bin average: each bin receives grad / k^2."""
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    g = grad_logits[:, :, None, None] / float(k * k)
    return np.broadcast_to(g, grad_logits.shape + (k, k)).copy()


def softmax(logits) -> np.ndarray:
    """Row-wise shift-stabilized softmax for (num_rois, C+1) logits."""
    logits = check_finite(logits, "logits")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def class_scores(logits) -> ClassScores:
    return ClassScores(logits=np.asarray(logits, dtype=np.float64), probs=softmax(logits))


def softmax_ce(logits, label: int) -> tuple[np.ndarray, float, np.ndarray]:
    """Cross-entropy of one logit row against ``label``.

    Returns (probs, loss, grad_logits) where loss = -log probs[label] and
    grad_logits = probs - onehot(label).
    """
    logits = check_finite(logits, "logits").reshape(-1)
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    z = logits - logits.max()
    loge = z - np.log(np.exp(z).sum())
    probs = np.exp(loge)
    loss = -loge[label]
    grad = probs.copy()
    grad[label] -= 1.0
    return probs, float(loss), grad


def smooth_l1(pred, target, beta: float = 1.0) -> tuple[float, BoxDelta]:
    """Smooth-L1 over the 4 delta coordinates.

    Per coordinate with residual d: 0.5*d^2/beta when |d| < beta, else
    |d| - 0.5*beta; the loss sums the 4 terms and the gradient is taken
    with respect to ``pred``.
    """
    loss_vec, grad = smooth_l1_batch(np.asarray(pred, dtype=np.float64).reshape(1, 4),
                                     np.asarray(target, dtype=np.float64).reshape(1, 4),
                                     beta)
    return float(loss_vec[0]), BoxDelta(*grad[0])


def smooth_l1_batch(pred, target, beta: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized smooth-L1: (R, 4) inputs -> per-RoI loss (R,) and gradient (R, 4)."""
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    pred = check_finite(pred, "pred deltas")
    target = check_finite(target, "target deltas")
    d = pred - target
    quad = np.abs(d) < beta
    per_coord = np.where(quad, 0.5 * d * d / beta, np.abs(d) - 0.5 * beta)
    grad = np.where(quad, d / beta, np.sign(d))
    return per_coord.sum(axis=-1), grad


def joint_loss(logits, pred_delta, label: int, target_delta,
               cfg: LossConfig = LossConfig()) -> tuple[float, np.ndarray, np.ndarray]:
    """Classification + gated regression loss for one RoI.

    Background (label 0) contributes cross-entropy only; positives add
    lam * smooth_l1(pred, target). Returns (loss, grad_logits, grad_delta);
    grad_delta is all zero for background.
    """
    if label > 0 and target_delta is None:
        raise ValueError("positive RoI requires a regression target")
    _, ce, grad_logits = softmax_ce(logits, label)
    grad_delta = np.zeros(4, dtype=np.float64)
    loss = ce
    if label > 0:
        reg, reg_grad = smooth_l1(pred_delta, target_delta, cfg.smooth_l1_beta)
        loss = ce + cfg.lam * reg
        grad_delta = cfg.lam * np.asarray(reg_grad, dtype=np.float64)
    return float(loss), grad_logits, grad_delta


def encode_box(proposal: RoI, gt: RoI) -> BoxDelta:
    """Deltas that map ``proposal`` onto ``gt`` in center/log-size form."""
    px, py = proposal.center
    gx, gy = gt.center
    return BoxDelta(tx=(gx - px) / proposal.w,
                    ty=(gy - py) / proposal.h,
                    tw=float(np.log(gt.w / proposal.w)),
                    th=float(np.log(gt.h / proposal.h)))


def decode_box(proposal: RoI, delta) -> RoI:
    """Exact inverse of ``encode_box``; keeps the proposal's batch index."""
    tx, ty, tw, th = (float(v) for v in delta)
    px, py = proposal.center
    gw = proposal.w * np.exp(tw)
    gh = proposal.h * np.exp(th)
    gx = tx * proposal.w + px
    gy = ty * proposal.h + py
    return RoI(batch_index=proposal.batch_index,
               x0=gx - gw / 2.0, y0=gy - gh / 2.0, w=gw, h=gh)


def encode_boxes(proposals: np.ndarray, gts: np.ndarray) -> np.ndarray:
    """Row-wise ``encode_box`` on (R, 4) arrays of (x0, y0, w, h)."""
    p = np.asarray(proposals, dtype=np.float64).reshape(-1, 4)
    g = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    pc = p[:, :2] + p[:, 2:] / 2.0
    gc = g[:, :2] + g[:, 2:] / 2.0
    return np.concatenate([(gc - pc) / p[:, 2:], np.log(g[:, 2:] / p[:, 2:])], axis=1)


def decode_boxes(proposals: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Row-wise ``decode_box`` on (R, 4) arrays; returns (x0, y0, w, h) rows."""
    p = np.asarray(proposals, dtype=np.float64).reshape(-1, 4)
    d = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    pc = p[:, :2] + p[:, 2:] / 2.0
    size = p[:, 2:] * np.exp(d[:, 2:])
    center = d[:, :2] * p[:, 2:] + pc
    return np.concatenate([center - size / 2.0, size], axis=1)
