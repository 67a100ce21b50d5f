"""Anchor-based iris region detection: geometry, model, and training."""

from irisauth.detect.geometry import (
    AnchorGridConfig, AnchorLabels, Box, Delta4, Detection, clip_boxes,
    decode_deltas, decode_deltas_array, encode_deltas, encode_deltas_array,
    generate_anchors, iou, iou_matrix, label_anchors, nms,
)
from irisauth.detect.model import (
    DetectorConfig, LossBreakdown, backbone_forward, build_detector,
    detect_best_region, feature_grid_shape, flatten_per_anchor,
    mask_head_forward, multi_task_loss, pool_roi, prepare_image,
    rpn_forward,
)
from irisauth.detect.train import (
    DetectorTrainConfig, DetectorTrainResult, evaluate_detector,
    train_detector,
)

__all__ = [
    "AnchorGridConfig", "AnchorLabels", "Box", "Delta4", "Detection",
    "clip_boxes", "decode_deltas", "decode_deltas_array", "encode_deltas",
    "encode_deltas_array", "generate_anchors", "iou", "iou_matrix",
    "label_anchors", "nms",
    "DetectorConfig", "LossBreakdown", "backbone_forward", "build_detector",
    "detect_best_region", "feature_grid_shape", "flatten_per_anchor",
    "mask_head_forward", "multi_task_loss", "pool_roi", "prepare_image",
    "rpn_forward",
    "DetectorTrainConfig", "DetectorTrainResult", "evaluate_detector",
    "train_detector",
]
