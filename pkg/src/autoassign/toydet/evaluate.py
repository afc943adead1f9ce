"""Inference decoding, per-category NMS and all-point interpolated AP."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..assign import DensePredictions
from ..geometry import LocationSet, iou_matrix, ltrb_decode


@dataclass
class Detection:
    box: np.ndarray
    category: int
    score: float
    scene_id: int = 0


@dataclass
class EvalResult:
    ap50: float
    per_category: dict
    precision: dict
    recall: dict
    n_gt: dict
    n_det: dict
    excluded: list = field(default_factory=list)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def detection_scores(preds: DensePredictions, objectness_mode: str = "implicit") -> np.ndarray:
    """Final (L, K) confidence: class probability times objectness probability."""
    p = _sigmoid(preds.cls_logits.data)
    if objectness_mode == "none":
        return p
    return p * _sigmoid(preds.obj_logits.data)


def nms(detections: Sequence[Detection], iou_threshold: float = 0.6) -> list:
    """Greedy per-category suppression of boxes overlapping a kept box by more than the threshold."""
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    kept: list = []
    for i in order:
        d = detections[i]
        same = [k for k in kept if k.category == d.category and k.scene_id == d.scene_id]
        if same and iou_matrix(d.box, np.stack([k.box for k in same])).max() > iou_threshold:
            continue
        kept.append(d)
    return kept


def decode_detections(preds: DensePredictions, locations: LocationSet, scene_id: int = 0,
                      objectness_mode: str = "implicit", score_threshold: float = 0.05,
                      top_k: int = 100, nms_iou: float = 0.6) -> list:
    scores = detection_scores(preds, objectness_mode)
    boxes = ltrb_decode(locations.xy, preds.ltrb.data)
    loc_idx, cat_idx = np.nonzero(scores > score_threshold)
    flat_scores = scores[loc_idx, cat_idx]
    order = np.argsort(-flat_scores, kind="stable")[:top_k]
    dets = []
    for o in order:
        b = boxes[loc_idx[o]]
        if not (b[2] > b[0] and b[3] > b[1]):
            continue
        dets.append(Detection(b.copy(), int(cat_idx[o]), float(flat_scores[o]), scene_id))
    return nms(dets, nms_iou)


def average_precision(recall: np.ndarray, precision: np.ndarray) -> float:
    """Area under the PR staircase with the monotone precision envelope."""
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def evaluate_ap(detections: Sequence[Detection], gts: Sequence, num_classes: int,
                iou_threshold: float = 0.5) -> EvalResult:
    """AP at ``iou_threshold``; ``gts[scene_id]`` is a ``(boxes, labels)`` pair.

    Detections are matched highest-score first to the best-overlapping
    unmatched ground truth of the same category and scene. Categories with no
    ground truth are excluded from the mean and listed in ``excluded``.
    """
    per_cat, precs, recs, n_gt, n_det, excluded = {}, {}, {}, {}, {}, []
    for c in range(num_classes):
        gt_boxes = {sid: np.asarray(b, float).reshape(-1, 4)[np.asarray(l) == c]
                    for sid, (b, l) in enumerate(gts)}
        total = sum(len(b) for b in gt_boxes.values())
        dets = sorted((d for d in detections if d.category == c), key=lambda d: -d.score)
        n_gt[c], n_det[c] = total, len(dets)
        if total == 0:
            excluded.append(c)
            continue
        used = {sid: np.zeros(len(b), dtype=bool) for sid, b in gt_boxes.items()}
        tp = np.zeros(len(dets))
        for i, d in enumerate(dets):
            cand = gt_boxes.get(d.scene_id)
            if cand is None or len(cand) == 0:
                continue
            ious = iou_matrix(d.box, cand)[0]
            ious[used[d.scene_id]] = -1.0
            j = int(np.argmax(ious))
            if ious[j] >= iou_threshold:
                used[d.scene_id][j] = True
                tp[i] = 1.0
        ctp = np.cumsum(tp)
        recall = ctp / total
        precision = ctp / np.arange(1, len(dets) + 1) if dets else np.zeros(0)
        precs[c], recs[c] = precision, recall
        per_cat[c] = average_precision(recall, precision) if dets else 0.0
    ap = float(np.mean(list(per_cat.values()))) if per_cat else 0.0
    return EvalResult(ap, per_cat, precs, recs, n_gt, n_det, excluded)
