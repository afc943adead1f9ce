"""Box arithmetic, pyramid location grids and stride-normalized center offsets.

Boxes are ``(x1, y1, x2, y2)`` in pixels. Functions that take arrays accept
``(..., 4)`` layouts; the differentiable variants accept :class:`DiffArray`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diffcore import DiffArray, as_array, ops

AREA_FLOOR = 1e-9


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(np.isfinite(coords)):
            raise ValueError(f"non-finite box {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {coords}")

    @classmethod
    def from_array(cls, a) -> "Box":
        return cls(*(float(v) for v in a))

    def to_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2])

    @property
    def center(self) -> tuple:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class PyramidLevelSpec:
    stride: int
    height: int
    width: int


@dataclass
class LocationSet:
    """Concatenated pyramid locations, level-major then row-major."""

    xy: np.ndarray        # (L, 2) image-space cell centers
    level: np.ndarray     # (L,) level index
    flat: np.ndarray      # (L,) index within its level
    strides: np.ndarray   # (L,) stride of the owning level
    specs: tuple

    def __len__(self):
        return len(self.xy)

    @property
    def level_offsets(self) -> list:
        out, acc = [], 0
        for s in self.specs:
            out.append(acc)
            acc += s.height * s.width
        return out

    def grid_position(self, index: int) -> tuple:
        """(level, row, col) of a global location index."""
        lvl = int(self.level[index])
        f = int(self.flat[index])
        return lvl, f // self.specs[lvl].width, f % self.specs[lvl].width


@dataclass
class InBoxIndex:
    object_id: int
    indices: np.ndarray


def make_locations(specs: Sequence[PyramidLevelSpec]) -> LocationSet:
    if not specs:
        raise ValueError("at least one pyramid level is required")
    prev = 0
    xy, level, flat, strides = [], [], [], []
    for lvl, s in enumerate(specs):
        if s.height <= 0 or s.width <= 0:
            raise ValueError(f"zero-sized pyramid level {s}")
        if s.stride < 1 or s.stride <= prev:
            raise ValueError(f"strides must be >= 1 and strictly increasing, got {s.stride} after {prev}")
        prev = s.stride
        rows, cols = np.meshgrid(np.arange(s.height), np.arange(s.width), indexing="ij")
        pts = np.stack([(cols.ravel() + 0.5) * s.stride, (rows.ravel() + 0.5) * s.stride], axis=1)
        xy.append(pts)
        level.append(np.full(len(pts), lvl))
        flat.append(np.arange(len(pts)))
        strides.append(np.full(len(pts), float(s.stride)))
    return LocationSet(np.concatenate(xy).astype(np.float64), np.concatenate(level),
                       np.concatenate(flat), np.concatenate(strides), tuple(specs))


def inside_mask(locations: LocationSet, box: Box, object_id: int = 0,
                strict: bool = True) -> InBoxIndex:
    """Locations inside ``box``; ``strict`` excludes points on the box edge."""
    x, y = locations.xy[:, 0], locations.xy[:, 1]
    if strict:
        m = (x > box.x1) & (x < box.x2) & (y > box.y1) & (y < box.y2)
    else:
        m = (x >= box.x1) & (x <= box.x2) & (y >= box.y1) & (y <= box.y2)
    return InBoxIndex(object_id, np.flatnonzero(m))


def center_offsets(xy: np.ndarray, box: Box, strides) -> np.ndarray:
    """Offsets of ``xy`` from the box center, divided by each location's stride."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    cx, cy = box.center
    s = np.asarray(strides, dtype=np.float64).reshape(-1)
    return np.stack([(xy[:, 0] - cx) / s, (xy[:, 1] - cy) / s], axis=1)


def iou(a: Box, b: Box) -> float:
    return float(iou_matrix(a.to_array()[None], b.to_array()[None])[0, 0])


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) box arrays (plain numpy)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / np.maximum(union, AREA_FLOOR)


def giou_loss_diff(pred, gt) -> DiffArray:
    """Per-row ``1 - GIoU`` for (N, 4) predicted and (N, 4) or (4,) target boxes.

    Branch-free: min/max are built from relu, and the union and enclosing areas
    are floored at ``AREA_FLOOR`` so near-degenerate boxes keep finite gradients.
    """
    pred, gt = as_array(pred), as_array(gt)
    px1, py1, px2, py2 = (pred[..., i] for i in range(4))
    gx1, gy1, gx2, gy2 = (gt[..., i] for i in range(4))
    iw = ops.relu(ops.minimum(px2, gx2) - ops.maximum(px1, gx1))
    ih = ops.relu(ops.minimum(py2, gy2) - ops.maximum(py1, gy1))
    inter = iw * ih
    area_p = (px2 - px1) * (py2 - py1)
    area_g = (gx2 - gx1) * (gy2 - gy1)
    union = ops.clamp(area_p + area_g - inter, lo=AREA_FLOOR)
    ew = ops.maximum(px2, gx2) - ops.minimum(px1, gx1)
    eh = ops.maximum(py2, gy2) - ops.minimum(py1, gy1)
    enclose = ops.clamp(ew * eh, lo=AREA_FLOOR)
    giou = inter / union - (enclose - union) / enclose
    return 1.0 - giou


def giou_loss(pred: Box, gt: Box) -> float:
    return giou_loss_diff(pred.to_array(), gt.to_array()).item()


def ltrb_decode(xy, ltrb):
    """Boxes ``(x - l, y - t, x + r, y + b)`` from locations and LTRB distances.

    Works on plain arrays or on a differentiable ``ltrb``.
    """
    if isinstance(ltrb, DiffArray):
        xy = np.asarray(xy, dtype=np.float64)
        sign = np.array([-1.0, -1.0, 1.0, 1.0])
        return ops.add(np.concatenate([xy, xy], axis=-1), ltrb * sign)
    xy = np.asarray(xy, dtype=np.float64)
    ltrb = np.asarray(ltrb, dtype=np.float64)
    return np.concatenate([xy - ltrb[..., :2], xy + ltrb[..., 2:]], axis=-1)


def ltrb_encode(xy, boxes) -> np.ndarray:
    """Inverse of :func:`ltrb_decode` for plain arrays."""
    xy = np.asarray(xy, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64)
    return np.concatenate([xy - boxes[..., :2], boxes[..., 2:] - xy], axis=-1)
