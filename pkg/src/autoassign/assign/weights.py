"""Confidence weighting and the positive / negative weight maps."""

from __future__ import annotations

import numpy as np

from ..diffcore import DiffArray, as_array, ops


def loc_confidence(loc_loss, lam: float) -> DiffArray:
    """Localization likelihood ``exp(-lam * loss)``."""
    return ops.exp(as_array(loc_loss) * (-lam))


def cls_confidence(cls_logits, obj_logits, category: int, mode: str = "implicit") -> DiffArray:
    """Classification confidence of ``category`` for each row.

    ``implicit`` and ``explicit`` multiply in the objectness probability;
    ``none`` uses the class probability alone. The extra supervision of the
    explicit mode is added by the loss, not here.
    """
    cls_logits = as_array(cls_logits)
    if cls_logits.ndim != 2:
        raise ValueError(f"cls logits must be (n, K), got {cls_logits.shape}")
    k = cls_logits.shape[1]
    if not 0 <= category < k:
        raise ValueError(f"category {category} out of range for K={k}")
    p = ops.sigmoid(cls_logits[:, category])
    if mode == "none":
        return p
    if mode not in ("implicit", "explicit"):
        raise ValueError(f"unknown objectness mode {mode!r}")
    obj = as_array(obj_logits).reshape(-1)
    return p * ops.sigmoid(obj)


def joint_confidence(cls_conf, loc_conf, mode: str = "full"):
    """Return ``(P_pos, P_neg)``.

    ``P_pos`` is ``cls * loc`` in full mode and the single retained factor in
    the ``cls-only`` / ``loc-only`` ablations. ``P_neg`` is always the
    classification confidence.
    """
    cls_conf, loc_conf = as_array(cls_conf), as_array(loc_conf)
    if mode == "full":
        p_pos = cls_conf * loc_conf
    elif mode == "cls-only":
        p_pos = cls_conf
    elif mode == "loc-only":
        p_pos = loc_conf
    else:
        raise ValueError(f"unknown confidence mode {mode!r}")
    return p_pos, cls_conf


def confidence_weight(p_pos, tau: float) -> DiffArray:
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    return ops.exp(as_array(p_pos) * (1.0 / tau))


def positive_weights(C, G) -> DiffArray:
    """``C * G`` normalized to sum to one over the candidate set."""
    C, G = as_array(C), as_array(G)
    if C.size == 0:
        raise ValueError("empty candidate set; objects without in-box locations must be filtered")
    cg = C * G
    total = ops.sum(cg)
    if not total.item() > 0:
        raise ValueError("positive weights have a zero normalizer")
    return ops.div(cg, total)


def positive_weights_log(log_c, log_g=None) -> DiffArray:
    """Same as :func:`positive_weights` but from ``log C`` and ``log G``.

    A constant shift by the max keeps the exponentials in range; it cancels in
    the normalization, so gradients are unaffected.
    """
    z = as_array(log_c)
    if z.size == 0:
        raise ValueError("empty candidate set; objects without in-box locations must be filtered")
    if log_g is not None:
        z = z + log_g
    e = ops.exp(z - float(np.max(z.data)))
    return ops.div(e, ops.sum(e))


def iou_penalty(ious, epsilon: float = 1e-6) -> np.ndarray:
    """``1 / (1 - iou)`` with iou clamped to ``1 - epsilon``."""
    ious = np.minimum(np.asarray(ious, dtype=np.float64), 1.0 - epsilon)
    return 1.0 / (1.0 - ious)


def negative_weights(ious, epsilon: float = 1e-6) -> np.ndarray:
    """Negative weights over one object's in-box candidates.

    The IoU penalty is min-max normalized over the set and subtracted from 1,
    so the best-localized candidate gets weight 0. When every candidate ties
    the normalized value is 1 for all of them.
    """
    f = iou_penalty(ious, epsilon)
    if f.size == 0:
        return f
    lo, hi = f.min(), f.max()
    if hi == lo:
        return np.zeros_like(f)
    return 1.0 - (f - lo) / (hi - lo)
