"""Position-sensitive detection: score-map pooling, a toy trainer, and tooling.

The public surface re-exports the functional core (tensors, pooling, head
math, sampling, postprocessing), the training loop, and the sklearn-style
``PositionSensitiveDetector`` estimator.
"""

from .boxes import RoI, iou, iou_matrix, project_roi, rois_to_array
from .tensor import (ConvLayer, conv2d_backward, conv2d_forward, conv_output_hw,
                     relu_backward, relu_forward)
from .pooling import PoolConfig, bank_channel, bin_span, pool_backward, pool_forward
from .head import (BoxDelta, ClassScores, LossConfig, class_scores, decode_box,
                   decode_boxes, encode_box, encode_boxes, joint_loss, smooth_l1,
                   smooth_l1_batch, softmax, softmax_ce, vote, vote_backward, vote_box)
from .sampling import (LabeledRoI, SamplerConfig, generate_proposals, label_rois,
                       ohem_select)
from .postprocess import (Detection, assemble_detections, average_precision,
                          detections_from_csv, detections_to_csv, nms)
from .scenes import (SyntheticScene, class_color, export_dataset, generate_scene,
                     read_ppm, write_ppm)
from .network import (Backbone, build_backbone, backward_full, forward_full,
                      image_forward, project_proposals, score_proposals)
from .train import (SGDState, TrainConfig, TrainingDiverged, build_net, eval_scenes,
                    evaluate, evaluate_oracle, predict_scene, train, train_step)
from .checkpoint import (config_from_dict, config_to_dict, load_checkpoint,
                         load_tensors, save_checkpoint, save_tensors)
from .detector import PositionSensitiveDetector
from .bench import BenchConfig, BenchReport, run_bench, report_to_csv, report_to_markdown

__version__ = "0.1.0"
