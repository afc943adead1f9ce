"""Procedural grayscale scenes whose per-category evidence sits off the box center."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..geometry import Box, iou_matrix

SHAPE_KINDS = ("filled-rect", "ellipse", "bottom-bar", "left-bar")

# evidence extent as a fraction of the box (width, height)
_EVIDENCE_EXTENT = {
    "filled-rect": (0.6, 0.6),
    "ellipse": (0.7, 0.7),
    "bottom-bar": (0.8, 0.3),
    "left-bar": (0.3, 0.8),
}


@dataclass
class CategorySpec:
    kind: str = "filled-rect"
    size_min: float = 14.0
    size_max: float = 28.0
    offset_x: float = 0.0   # evidence shift, fraction of box width (+ right)
    offset_y: float = 0.0   # evidence shift, fraction of box height (+ down)
    intensity: float = 1.0
    evidence_w: Optional[float] = None   # fraction of box width; None = kind default
    evidence_h: Optional[float] = None

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}; expected one of {SHAPE_KINDS}")
        fw, fh = _EVIDENCE_EXTENT[self.kind]
        self.evidence_w = fw if self.evidence_w is None else float(self.evidence_w)
        self.evidence_h = fh if self.evidence_h is None else float(self.evidence_h)
        if not (0 < self.evidence_w <= 1 and 0 < self.evidence_h <= 1):
            raise ValueError(f"evidence extent must lie in (0, 1], got "
                             f"({self.evidence_w}, {self.evidence_h})")
        if not (-0.5 <= self.offset_x <= 0.5 and -0.5 <= self.offset_y <= 0.5):
            raise ValueError(f"evidence offset must lie in [-0.5, 0.5], got "
                             f"({self.offset_x}, {self.offset_y})")
        if not 0 < self.size_min <= self.size_max:
            raise ValueError(f"bad size range ({self.size_min}, {self.size_max})")


@dataclass
class SceneGenConfig:
    image_size: int = 64
    categories: list = field(default_factory=lambda: [CategorySpec()])
    objects_min: int = 1
    objects_max: int = 3
    noise_std: float = 0.05
    max_overlap_iou: float = 0.0
    margin: int = 1
    max_retries: int = 50

    def __post_init__(self):
        if not self.categories:
            raise ValueError("at least one category is required")
        if not 0 <= self.objects_min <= self.objects_max:
            raise ValueError(f"bad objects-per-scene range ({self.objects_min}, {self.objects_max})")
        largest = max(c.size_max for c in self.categories)
        if largest + 2 * self.margin > self.image_size:
            raise ValueError(f"objects up to {largest}px do not fit a {self.image_size}px image")

    @property
    def num_classes(self) -> int:
        return len(self.categories)


@dataclass
class SyntheticScene:
    image: np.ndarray      # (1, H, W)
    boxes: np.ndarray      # (N, 4)
    labels: np.ndarray     # (N,)
    seed: int
    n_unplaced: int = 0

    @property
    def objects(self) -> list:
        return [(Box.from_array(b), int(c)) for b, c in zip(self.boxes, self.labels)]


def evidence_box(box: np.ndarray, spec: CategorySpec) -> np.ndarray:
    """Sub-box where the category's evidence is drawn, clipped to ``box``."""
    x1, y1, x2, y2 = box
    w, h = x2 - x1, y2 - y1
    fw, fh = spec.evidence_w, spec.evidence_h
    cx = 0.5 * (x1 + x2) + spec.offset_x * w
    cy = 0.5 * (y1 + y2) + spec.offset_y * h
    ev = np.array([cx - 0.5 * fw * w, cy - 0.5 * fh * h, cx + 0.5 * fw * w, cy + 0.5 * fh * h])
    return np.array([max(ev[0], x1), max(ev[1], y1), min(ev[2], x2), min(ev[3], y2)])


def _render(image: np.ndarray, box: np.ndarray, spec: CategorySpec):
    ev = evidence_box(box, spec)
    size = image.shape[-1]
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    if spec.kind == "ellipse":
        cx, cy = 0.5 * (ev[0] + ev[2]), 0.5 * (ev[1] + ev[3])
        rx, ry = 0.5 * (ev[2] - ev[0]), 0.5 * (ev[3] - ev[1])
        mask = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
    else:
        mask = (xs >= ev[0]) & (xs < ev[2]) & (ys >= ev[1]) & (ys < ev[3])
    image[0][mask] = spec.intensity


def generate_scene(cfg: SceneGenConfig, seed: int) -> SyntheticScene:
    """Deterministic scene for ``(cfg, seed)``.

    Placement retries a bounded number of times per object; objects that do
    not fit are left out and counted in ``n_unplaced``.
    """
    rng = np.random.default_rng(seed)
    size = cfg.image_size
    n_target = int(rng.integers(cfg.objects_min, cfg.objects_max + 1))
    boxes, labels, unplaced = [], [], 0
    for _ in range(n_target):
        cat = int(rng.integers(cfg.num_classes))
        spec = cfg.categories[cat]
        placed = False
        for _ in range(cfg.max_retries):
            w = float(rng.integers(int(spec.size_min), int(spec.size_max) + 1))
            h = float(rng.integers(int(spec.size_min), int(spec.size_max) + 1))
            x1 = float(rng.integers(cfg.margin, int(size - cfg.margin - w) + 1))
            y1 = float(rng.integers(cfg.margin, int(size - cfg.margin - h) + 1))
            cand = np.array([x1, y1, x1 + w, y1 + h])
            if boxes and iou_matrix(cand, np.array(boxes)).max() > cfg.max_overlap_iou:
                continue
            boxes.append(cand)
            labels.append(cat)
            placed = True
            break
        unplaced += not placed
    image = np.zeros((1, size, size))
    for b, c in zip(boxes, labels):
        _render(image, b, cfg.categories[c])
    image += rng.normal(0.0, cfg.noise_std, image.shape)
    return SyntheticScene(image, np.array(boxes, dtype=np.float64).reshape(-1, 4),
                          np.array(labels, dtype=np.int64), seed, unplaced)


def generate_dataset(cfg: SceneGenConfig, seeds: Sequence[int]) -> list:
    return [generate_scene(cfg, int(s)) for s in seeds]


def save_dataset(scenes: Sequence[SyntheticScene], directory) -> Path:
    """One raw little-endian float64 file per image plus ``annotations.txt``.

    Annotation lines: ``scene_id seed x1 y1 x2 y2 category``; a scene without
    objects appears once with ``-`` placeholders so it is not lost.
    """
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    lines = ["# scene_id seed height width x1 y1 x2 y2 category"]
    for sid, sc in enumerate(scenes):
        sc.image.astype("<f8").tofile(directory / "images" / f"{sid:05d}.bin")
        h, w = sc.image.shape[-2:]
        if len(sc.labels) == 0:
            lines.append(f"{sid} {sc.seed} {h} {w} - - - - -")
        for b, c in zip(sc.boxes, sc.labels):
            lines.append(f"{sid} {sc.seed} {h} {w} " + " ".join(format(v, ".17g") for v in b) + f" {c}")
    (directory / "annotations.txt").write_text("\n".join(lines) + "\n")
    return directory


def load_dataset(directory) -> list:
    directory = Path(directory)
    entries: dict = {}
    for line in (directory / "annotations.txt").read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        sid, seed, h, w = int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3])
        e = entries.setdefault(sid, {"seed": seed, "shape": (h, w), "boxes": [], "labels": []})
        if parts[4] != "-":
            e["boxes"].append([float(v) for v in parts[4:8]])
            e["labels"].append(int(parts[8]))
    scenes = []
    for sid in sorted(entries):
        e = entries[sid]
        img = np.fromfile(directory / "images" / f"{sid:05d}.bin", dtype="<f8")
        scenes.append(SyntheticScene(img.reshape(1, *e["shape"]),
                                     np.array(e["boxes"], dtype=np.float64).reshape(-1, 4),
                                     np.array(e["labels"], dtype=np.int64), e["seed"]))
    return scenes


def find_scene(scenes: Sequence[SyntheticScene], scene_id: int) -> Optional[SyntheticScene]:
    return scenes[scene_id] if 0 <= scene_id < len(scenes) else None
