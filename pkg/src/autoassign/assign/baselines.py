"""Fixed, hand-designed assignment strategies used as comparison points.

Each strategy yields constant positive weights per object plus a (L, K)
negative-weight matrix, which :func:`fixed_weight_loss` consumes.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..geometry import Box, LocationSet, inside_mask, ltrb_encode
from .loss import FixedAssignment, GroundTruth

STRATEGIES = ("uniform-inbox", "center-sampling", "center-sampling+scale-ranges")
DEFAULT_SCALE_RANGES = ((0.0, 32.0), (32.0, math.inf))


def baseline_assign(strategy: str, locations: LocationSet, gts: GroundTruth, num_classes: int,
                    radius: float = 1.5,
                    scale_ranges: Sequence = DEFAULT_SCALE_RANGES,
                    uniform_weight: str = "mean", strict: bool = True) -> FixedAssignment:
    """Positive location sets and negative flags for a fixed strategy.

    uniform-inbox
        every in-box location is positive with weight ``1/|S_n|`` (or 1 when
        ``uniform_weight="one"``) and negatives keep weight 1 everywhere.
    center-sampling
        positives are in-box locations within ``radius`` strides of the box
        center (per axis); those locations drop out of the negatives for the
        object's category.
    center-sampling+scale-ranges
        additionally keeps a location only when the largest of its LTRB
        targets, in pixels, falls in the (lo, hi] range of its level.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if uniform_weight not in ("mean", "one"):
        raise ValueError(f"uniform_weight must be 'mean' or 'one', got {uniform_weight!r}")
    n_loc = len(locations)
    neg = np.ones((n_loc, num_classes))
    positives, skipped = [], 0
    for obj_id, (box_arr, cat) in enumerate(zip(gts.boxes, gts.labels)):
        box = Box.from_array(box_arr)
        idx = inside_mask(locations, box, obj_id, strict=strict).indices
        if strategy != "uniform-inbox" and idx.size:
            s = locations.strides[idx]
            cx, cy = box.center
            xy = locations.xy[idx]
            near = (np.abs(xy[:, 0] - cx) <= radius * s) & (np.abs(xy[:, 1] - cy) <= radius * s)
            if strategy == "center-sampling+scale-ranges":
                if len(scale_ranges) != len(locations.specs):
                    raise ValueError(f"{len(scale_ranges)} scale ranges for "
                                     f"{len(locations.specs)} pyramid levels")
                reach = ltrb_encode(xy, box_arr[None]).max(axis=1)
                lo = np.array([scale_ranges[l][0] for l in locations.level[idx]])
                hi = np.array([scale_ranges[l][1] for l in locations.level[idx]])
                near &= (reach > lo) & (reach <= hi)
            idx = idx[near]
        if idx.size == 0:
            skipped += 1
            continue
        if strategy == "uniform-inbox":
            w = np.full(idx.size, 1.0 / idx.size if uniform_weight == "mean" else 1.0)
        else:
            w = np.full(idx.size, 1.0 / idx.size)
            neg[idx, int(cat)] = 0.0
        positives.append((obj_id, idx, w))
    return FixedAssignment(positives, neg, skipped)
