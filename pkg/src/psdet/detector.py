"""Scikit-learn style estimator wrapping the trainer and inference loop.

The detector trains on synthetic scenes (either supplied or generated on
the fly from the seed) and predicts per-scene detection lists. All
hyperparameters are flat constructor arguments so ``get_params`` /
``set_params`` / ``clone`` compose with the usual sklearn tooling.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .head import LossConfig
from .sampling import SamplerConfig
from .train import TrainConfig, eval_scenes, evaluate, predict_scene, train

__all__ = ["PositionSensitiveDetector"]


class PositionSensitiveDetector(BaseEstimator):
    """Fully convolutional detector with position-sensitive RoI pooling.

    Parameters mirror TrainConfig/SamplerConfig/LossConfig flattened out;
    see those dataclasses for semantics. ``n_steps=None`` runs the full
    learning-rate schedule.

    Attributes set by ``fit``: ``net_`` (the trained network), ``config_``
    (the assembled TrainConfig), ``loss_history_`` (per-step losses).
    """

    def __init__(self, k=3, num_classes=3, lr_schedule=((2000, 1e-3), (1000, 1e-4)),
                 momentum=0.9, weight_decay=5e-4, image_size=96, scales=None,
                 ohem=False, n_proposals=300, batch_rois=128, pos_iou=0.5,
                 jitter=0.15, jitter_fraction=0.5, grid_stride=32,
                 grid_sizes=(16, 32, 48), loss_lambda=1.0, smooth_l1_beta=1.0,
                 widths=(16, 32, 64, 64), reduce_width=64, seed=0, n_steps=None):
        self.k = k
        self.num_classes = num_classes
        self.lr_schedule = lr_schedule
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.image_size = image_size
        self.scales = scales
        self.ohem = ohem
        self.n_proposals = n_proposals
        self.batch_rois = batch_rois
        self.pos_iou = pos_iou
        self.jitter = jitter
        self.jitter_fraction = jitter_fraction
        self.grid_stride = grid_stride
        self.grid_sizes = grid_sizes
        self.loss_lambda = loss_lambda
        self.smooth_l1_beta = smooth_l1_beta
        self.widths = widths
        self.reduce_width = reduce_width
        self.seed = seed
        self.n_steps = n_steps

    def build_config(self) -> TrainConfig:
        sampler = SamplerConfig(n_proposals=self.n_proposals, batch_rois=self.batch_rois,
                                pos_iou=self.pos_iou, jitter=self.jitter,
                                jitter_fraction=self.jitter_fraction,
                                grid_stride=self.grid_stride,
                                grid_sizes=tuple(self.grid_sizes))
        loss = LossConfig(lam=self.loss_lambda, smooth_l1_beta=self.smooth_l1_beta)
        return TrainConfig(lr_schedule=tuple(tuple(p) for p in self.lr_schedule),
                           momentum=self.momentum, weight_decay=self.weight_decay,
                           k=self.k, num_classes=self.num_classes,
                           image_size=self.image_size,
                           scales=None if self.scales is None else tuple(self.scales),
                           ohem=self.ohem, seed=self.seed, widths=tuple(self.widths),
                           reduce_width=self.reduce_width, sampler=sampler, loss=loss)

    def fit(self, X=None, y=None):
        """Train from scratch. ``X`` may be a list of SyntheticScene to cycle
        through; with ``X=None`` a fresh scene is generated every step."""
        self.config_ = self.build_config()
        self.net_, self.loss_history_ = train(self.config_, steps=self.n_steps, scenes=X)
        return self

    def predict(self, X):
        """Detection lists, one per scene in ``X``."""
        check_is_fitted(self, "net_")
        out = []
        for i, scene in enumerate(X):
            rng = np.random.default_rng((self.seed, 2, i))
            out.append(predict_scene(self.net_, scene, self.config_.sampler, rng,
                                     image_id=i))
        return out

    def score(self, X=None, y=None, n_scenes: int = 20):
        """mAP@0.5 over ``X`` (or a fixed generated set of ``n_scenes``)."""
        check_is_fitted(self, "net_")
        scenes = X if X is not None else eval_scenes(self.config_, n_scenes)
        _, mean_ap, _ = evaluate(self.net_, scenes, self.config_, seed=self.seed)
        return mean_ap
