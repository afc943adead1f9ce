"""Differentiable label assignment: center prior, confidence weighting, joint loss."""

from .baselines import STRATEGIES, baseline_assign
from .config import CONFIDENCE_MODES, OBJECTNESS_MODES, AssignConfig
from .loss import (DensePredictions, FixedAssignment, GroundTruth, LossBreakdown, ObjectState,
                   autoassign_loss, evaluate_loss, fixed_weight_loss)
from .prior import PRIOR_MODES, BoundPrior, CenterPrior, center_weight
from .report import WeightReport, export_weight_report
from .weights import (cls_confidence, confidence_weight, iou_penalty, joint_confidence,
                      loc_confidence, negative_weights, positive_weights, positive_weights_log)

__all__ = [
    "AssignConfig", "BoundPrior", "CONFIDENCE_MODES", "CenterPrior", "DensePredictions",
    "FixedAssignment", "GroundTruth", "LossBreakdown", "OBJECTNESS_MODES", "ObjectState",
    "PRIOR_MODES", "STRATEGIES", "WeightReport", "autoassign_loss", "baseline_assign",
    "center_weight", "cls_confidence", "confidence_weight", "evaluate_loss",
    "export_weight_report", "fixed_weight_loss", "iou_penalty", "joint_confidence",
    "loc_confidence", "negative_weights", "positive_weights", "positive_weights_log",
]
