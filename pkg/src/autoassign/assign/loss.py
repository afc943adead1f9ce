"""The joint positive/negative loss and its fixed-weight baseline variants."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..diffcore import DiffArray, as_array, ops, stop_gradient
from ..geometry import Box, LocationSet, center_offsets, giou_loss_diff, inside_mask, iou_matrix, \
    ltrb_decode
from .config import AssignConfig
from .prior import BoundPrior, CenterPrior
from .weights import (cls_confidence, confidence_weight, joint_confidence, loc_confidence,
                      negative_weights, positive_weights_log)


@dataclass
class DensePredictions:
    """Per-location head outputs in location order: (L, K), (L, 1), (L, 4)."""

    cls_logits: DiffArray
    obj_logits: DiffArray
    ltrb: DiffArray

    def __post_init__(self):
        self.cls_logits = as_array(self.cls_logits)
        self.obj_logits = as_array(self.obj_logits)
        self.ltrb = as_array(self.ltrb)
        n = self.cls_logits.shape[0]
        if self.obj_logits.shape != (n, 1) or self.ltrb.shape != (n, 4):
            raise ValueError(f"inconsistent prediction shapes {self.cls_logits.shape}, "
                             f"{self.obj_logits.shape}, {self.ltrb.shape}")

    @property
    def num_classes(self) -> int:
        return self.cls_logits.shape[1]

    def __len__(self):
        return self.cls_logits.shape[0]


@dataclass
class GroundTruth:
    boxes: np.ndarray   # (N, 4)
    labels: np.ndarray  # (N,)

    @classmethod
    def from_objects(cls, objects: Sequence) -> "GroundTruth":
        """From ``(Box, category)`` pairs."""
        if not objects:
            return cls(np.zeros((0, 4)), np.zeros(0, dtype=np.int64))
        boxes = np.stack([b.to_array() if isinstance(b, Box) else np.asarray(b, float)
                          for b, _ in objects])
        return cls(boxes, np.array([int(c) for _, c in objects], dtype=np.int64))

    def __len__(self):
        return len(self.labels)


@dataclass
class ObjectState:
    """Detached per-object snapshot used for weight reports."""

    object_id: int
    category: int
    indices: np.ndarray
    w_pos: np.ndarray
    G: np.ndarray
    C: np.ndarray
    P_pos: np.ndarray


@dataclass
class LossBreakdown:
    total: DiffArray
    positive: DiffArray
    negative: DiffArray
    objectness: Optional[DiffArray] = None
    object_confidence: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objects: list = field(default_factory=list)
    neg_weight: np.ndarray = field(default_factory=lambda: np.zeros(0))
    max_iou: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_dropped: int = 0

    def values(self) -> dict:
        out = {"total": self.total.item(), "positive": self.positive.item(),
               "negative": self.negative.item()}
        if self.objectness is not None:
            out["objectness"] = self.objectness.item()
        return out


@dataclass
class FixedAssignment:
    """Precomputed positive weights and negative weights (see baselines)."""

    positives: list                 # [(object_id, indices, weights)]
    neg_weight: np.ndarray          # (L, K)
    skipped: int = 0


def _check_finite(term: DiffArray, name: str):
    if not np.all(np.isfinite(term.data)):
        raise FloatingPointError(f"non-finite {name} term: {term.data}")


def classification_confidence_map(preds: DensePredictions, mode: str) -> DiffArray:
    """P(cls) for every location and category, (L, K)."""
    p = ops.sigmoid(preds.cls_logits)
    if mode == "none":
        return p
    return p * ops.sigmoid(preds.obj_logits)


def _negative_map(cls_conf: DiffArray, neg_weight: np.ndarray, cfg: AssignConfig) -> DiffArray:
    q = cls_conf * neg_weight
    one_minus = 1.0 - ops.clamp(q, hi=1.0 - cfg.prob_floor)
    ce = -ops.log(one_minus)
    if cfg.focal_gamma != 0.0:
        ce = ops.power(q, cfg.focal_gamma) * ce
    return ops.sum(ce) * (1.0 - cfg.focal_alpha)


def _objectness_bce(preds: DensePredictions, inside: np.ndarray, cfg: AssignConfig) -> DiffArray:
    p = ops.sigmoid(preds.obj_logits).reshape(-1)
    t = inside.astype(np.float64)
    pos = ops.log(ops.clamp(p, lo=cfg.prob_floor)) * t
    neg = ops.log(ops.clamp(1.0 - p, lo=cfg.prob_floor)) * (1.0 - t)
    return -ops.sum(pos + neg) * cfg.explicit_obj_weight


def evaluate_loss(preds: DensePredictions, gts: GroundTruth, locations: LocationSet,
                  cfg: AssignConfig, prior=None, fixed: Optional[FixedAssignment] = None,
                  joint=joint_confidence) -> LossBreakdown:
    """Shared evaluator: learned weights when ``fixed`` is None, else the given ones."""
    n_loc, k = preds.cls_logits.shape
    if n_loc != len(locations):
        raise ValueError(f"{n_loc} prediction rows for {len(locations)} locations")
    cls_conf = classification_confidence_map(preds, cfg.objectness_mode)
    boxes_pred = ltrb_decode(locations.xy, preds.ltrb)

    # IoU-derived negative weights never see gradients.
    boxes_det = ltrb_decode(locations.xy, stop_gradient(preds.ltrb).data)
    if len(gts):
        max_iou = iou_matrix(boxes_det, gts.boxes).max(axis=1)
    else:
        max_iou = np.zeros(n_loc)

    neg_weight = np.ones((n_loc, k))
    loc_neg = np.ones(n_loc)
    inside_any = np.zeros(n_loc, dtype=bool)
    pos_terms, confidences, objects = [], [], []
    n_dropped = 0

    if fixed is None:
        if isinstance(prior, CenterPrior):
            prior = prior.bind(preds.cls_logits.tape)
        elif not isinstance(prior, BoundPrior):
            raise TypeError("learned assignment needs a CenterPrior")
        for obj_id, (box_arr, cat) in enumerate(zip(gts.boxes, gts.labels)):
            cat = int(cat)
            if not 0 <= cat < k:
                raise ValueError(f"object {obj_id} category {cat} out of range for K={k}")
            box = Box.from_array(box_arr)
            idx = inside_mask(locations, box, obj_id, strict=cfg.strict_inside).indices
            if idx.size == 0:
                n_dropped += 1
                continue
            inside_any[idx] = True
            w_neg = negative_weights(max_iou[idx], cfg.iou_clamp_eps)
            neg_weight[idx, cat] = np.minimum(neg_weight[idx, cat], w_neg)
            loc_neg[idx] = np.minimum(loc_neg[idx], w_neg)

            p_cls = cls_conf[idx, cat]
            p_loc = loc_confidence(giou_loss_diff(boxes_pred[idx], box_arr), cfg.lam)
            p_weighting, _ = joint(p_cls, p_loc, cfg.confidence_mode)
            p_pos = p_cls * p_loc
            d = center_offsets(locations.xy[idx], box, locations.strides[idx])
            log_g = prior.log_weight(d, cat)
            log_c = p_weighting * (1.0 / cfg.tau)
            w_pos = positive_weights_log(log_c, log_g)
            conf = ops.sum(w_pos * p_pos)
            pos_terms.append(ops.log(ops.clamp(conf, lo=cfg.prob_floor)))
            confidences.append(conf.item())
            objects.append(ObjectState(
                obj_id, cat, idx, w_pos.numpy(),
                np.ones(idx.size) if log_g is None else np.exp(log_g.data),
                confidence_weight(p_weighting.data, cfg.tau).data, p_pos.numpy()))
    else:
        neg_weight = np.asarray(fixed.neg_weight, dtype=np.float64)
        loc_neg = neg_weight.min(axis=1)
        n_dropped = fixed.skipped
        for obj_id, idx, w in fixed.positives:
            box_arr, cat = gts.boxes[obj_id], int(gts.labels[obj_id])
            inside_any[inside_mask(locations, Box.from_array(box_arr), obj_id,
                                   strict=cfg.strict_inside).indices] = True
            p_cls = cls_conf[idx, cat]
            p_loc = loc_confidence(giou_loss_diff(boxes_pred[idx], box_arr), cfg.lam)
            p_pos = p_cls * p_loc
            conf = ops.sum(p_pos * np.asarray(w, dtype=np.float64))
            pos_terms.append(ops.log(ops.clamp(conf, lo=cfg.prob_floor)))
            confidences.append(conf.item())
            objects.append(ObjectState(obj_id, cat, np.asarray(idx), np.asarray(w, float),
                                       np.ones(len(idx)), np.ones(len(idx)), p_pos.numpy()))

    if pos_terms:
        positive = -ops.sum(ops.stack(pos_terms)) * cfg.focal_alpha
    else:
        positive = DiffArray(0.0)
    _check_finite(positive, "positive")
    negative = _negative_map(cls_conf, neg_weight, cfg)
    _check_finite(negative, "negative")
    total = positive + negative
    objectness = None
    if cfg.objectness_mode == "explicit":
        objectness = _objectness_bce(preds, inside_any, cfg)
        _check_finite(objectness, "objectness")
        total = total + objectness
    return LossBreakdown(total, positive, negative, objectness, np.array(confidences),
                         objects, loc_neg, max_iou, n_dropped)


def autoassign_loss(preds: DensePredictions, gts, locations: LocationSet, prior,
                    cfg: Optional[AssignConfig] = None) -> LossBreakdown:
    """Learned-weight loss: center prior times confidence weighting for positives,
    IoU-derived weights for negatives, focal modulation on the negative side."""
    if not isinstance(gts, GroundTruth):
        gts = GroundTruth.from_objects(gts)
    return evaluate_loss(preds, gts, locations, cfg or AssignConfig(), prior=prior)


def fixed_weight_loss(preds: DensePredictions, gts, locations: LocationSet,
                      assignment: FixedAssignment,
                      cfg: Optional[AssignConfig] = None) -> LossBreakdown:
    if not isinstance(gts, GroundTruth):
        gts = GroundTruth.from_objects(gts)
    return evaluate_loss(preds, gts, locations, cfg or AssignConfig(), fixed=assignment)
