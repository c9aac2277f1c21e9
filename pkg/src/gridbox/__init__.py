"""Target encoding, anchors, loss, synthesis and evaluation for dense
grid-cell object detectors."""

from .anchors import Anchor, ClusterConfig, ClusterResult, assign_best_anchor, kmeans_iou
from .decode import (
    Detection,
    RawPrediction,
    coord_activation,
    coord_activation_inverse,
    decode_all_scales,
    decode_predictions,
    nms,
    raw_from_targets,
)
from .encode import (
    CellAssignment,
    CellTarget,
    TargetTensor,
    cell_index,
    decode_cell,
    encode_ground_truth,
    forward_transform,
    multi_grid_cells,
)
from .evaluate import EvalConfig, EvalReport, average_precision, evaluate_detections, match_detections
from .geometry import Box, CornerBox, GridSpec, default_grids, from_corners, iou, to_corners
from .loss import (
    LossBreakdown,
    LossConfig,
    anchor_loss,
    class_loss,
    coord_loss,
    objectness_loss,
    total_loss,
    total_loss_and_grad,
)
from .manifest import Annotation, ImageRecord, read_manifest, read_voc_xml, write_manifest

__version__ = "0.1.0"

__all__ = [
    "Anchor", "Annotation", "Box", "CellAssignment", "CellTarget", "ClusterConfig",
    "ClusterResult", "CornerBox", "Detection", "EvalConfig", "EvalReport", "GridSpec",
    "ImageRecord", "LossBreakdown", "LossConfig", "RawPrediction", "TargetTensor",
    "anchor_loss", "assign_best_anchor", "average_precision", "cell_index", "class_loss",
    "coord_activation", "coord_activation_inverse", "coord_loss", "decode_all_scales",
    "decode_cell", "decode_predictions", "default_grids", "encode_ground_truth",
    "evaluate_detections", "forward_transform", "from_corners", "iou", "kmeans_iou",
    "match_detections", "multi_grid_cells", "nms", "objectness_loss", "raw_from_targets",
    "read_manifest", "read_voc_xml", "to_corners", "total_loss", "total_loss_and_grad",
    "write_manifest",
]
