"""Tiny convolutional dense detector with a shared head over a 2-3 level pyramid."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..assign import DensePredictions
from ..diffcore import DiffArray, Parameter, Tape, ops
from ..geometry import LocationSet, PyramidLevelSpec, make_locations

MAX_PARAMETERS = 50_000


@dataclass
class ModelConfig:
    image_size: int = 64
    stem_channels: int = 8
    channels: int = 16
    head_channels: int = 16
    num_levels: int = 2          # strides 4, 8 (and 16 with 3 levels)
    head_kernel: int = 3         # 1 or 3; sets the head's receptive-field growth
    prior_prob: float = 0.01
    seed: int = 0


class DetectorModel:
    """Backbone of stride-2 convolutions; level l has stride ``4 * 2**l``.

    The head is shared across levels: a classification tower feeding K class
    logits and a regression tower feeding 4 LTRB logits and the objectness
    logit. LTRB distances are ``exp(logit) * stride``.
    """

    def __init__(self, num_classes: int, cfg: Optional[ModelConfig] = None):
        self.cfg = cfg = cfg or ModelConfig()
        if cfg.num_levels not in (2, 3):
            raise ValueError(f"num_levels must be 2 or 3, got {cfg.num_levels}")
        if cfg.head_kernel not in (1, 3):
            raise ValueError(f"head_kernel must be 1 or 3, got {cfg.head_kernel}")
        if cfg.image_size % (4 * 2 ** (cfg.num_levels - 1)):
            raise ValueError(f"image size {cfg.image_size} is not divisible by the coarsest stride")
        self.num_classes = num_classes
        rng = np.random.default_rng(cfg.seed)
        self.params: list = []

        def conv(name, cin, cout, std=None, bias=0.0, k=3):
            std = math.sqrt(2.0 / (cin * k * k)) if std is None else std
            w = Parameter(f"{name}.weight", rng.normal(0.0, std, (cout, cin, k, k)))
            b = Parameter(f"{name}.bias", np.full(cout, bias))
            self.params += [w, b]
            return w, b

        c0, c, ch = cfg.stem_channels, cfg.channels, cfg.head_channels
        self.stem = conv("stem", 1, c0)
        self.down4 = conv("down4", c0, c)
        self.refine4 = conv("refine4", c, c)
        self.downs = [conv(f"down{4 * 2 ** l}", c, c) for l in range(1, cfg.num_levels)]
        hk = cfg.head_kernel
        self.cls_tower = conv("head.cls_tower", c, ch, k=hk)
        self.reg_tower = conv("head.reg_tower", c, ch, k=hk)
        self.cls_out = conv("head.cls_out", ch, num_classes, std=0.01,
                            bias=-math.log((1 - cfg.prior_prob) / cfg.prior_prob), k=hk)
        self.reg_out = conv("head.reg_out", ch, 4, std=0.01, k=hk)
        self.obj_out = conv("head.obj_out", ch, 1, std=0.01, k=hk)
        if self.num_parameters() > MAX_PARAMETERS:
            raise ValueError(f"model has {self.num_parameters()} parameters (> {MAX_PARAMETERS})")

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.params)

    def level_specs(self) -> list:
        out = []
        for l in range(self.cfg.num_levels):
            s = 4 * 2 ** l
            out.append(PyramidLevelSpec(s, self.cfg.image_size // s, self.cfg.image_size // s))
        return out

    def locations(self) -> LocationSet:
        return make_locations(self.level_specs())

    def state(self) -> dict:
        return {p.name: p.value.copy() for p in self.params}

    def load_state(self, state: dict) -> None:
        for p in self.params:
            if p.name not in state:
                raise KeyError(f"checkpoint lacks parameter {p.name}")
            if state[p.name].shape != p.value.shape:
                raise ValueError(f"shape mismatch for {p.name}: {state[p.name].shape} vs {p.value.shape}")
            p.value[...] = state[p.name]

    def forward(self, images, tape: Optional[Tape] = None, overrides: Optional[dict] = None) -> list:
        """Dense predictions for each image of a (N, 1, H, W) or (1, H, W) batch.

        ``overrides`` maps parameter names to arrays used in place of the
        stored values (the gradient checker feeds its own leaves this way).
        """
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        if images.shape[1:] != (1, self.cfg.image_size, self.cfg.image_size):
            raise ValueError(f"expected images of shape (1, {self.cfg.image_size}, "
                             f"{self.cfg.image_size}), got {images.shape[1:]}")
        bind = dict(overrides or {})

        def leaf(p: Parameter) -> DiffArray:
            if p.name not in bind:
                bind[p.name] = tape.watch(p) if tape is not None else DiffArray(p.value)
            return bind[p.name]

        def conv(x, layer, stride=1, act=True):
            w, b = layer
            y = ops.conv2d(x, leaf(w), stride=stride, padding=w.value.shape[-1] // 2)
            y = y + leaf(b).reshape(1, -1, 1, 1)
            return ops.relu(y) if act else y

        x = conv(images, self.stem, stride=2)
        x = conv(x, self.down4, stride=2)
        feats = [conv(x, self.refine4)]
        for layer in self.downs:
            feats.append(conv(feats[-1], layer, stride=2))

        n = images.shape[0]
        cls_all, obj_all, reg_all = [], [], []
        for l, f in enumerate(feats):
            stride = 4 * 2 ** l
            ct = conv(f, self.cls_tower)
            rt = conv(f, self.reg_tower)
            cls = conv(ct, self.cls_out, act=False)
            reg = conv(rt, self.reg_out, act=False)
            obj = conv(rt, self.obj_out, act=False)
            cls_all.append(cls.transpose(0, 2, 3, 1).reshape(n, -1, self.num_classes))
            obj_all.append(obj.transpose(0, 2, 3, 1).reshape(n, -1, 1))
            reg_all.append(ops.exp(reg.transpose(0, 2, 3, 1).reshape(n, -1, 4)) * float(stride))
        cls_cat = ops.concat(cls_all, axis=1)
        obj_cat = ops.concat(obj_all, axis=1)
        reg_cat = ops.concat(reg_all, axis=1)
        return [DensePredictions(cls_cat[i], obj_cat[i], reg_cat[i]) for i in range(n)]


def save_checkpoint(model: DetectorModel, extra: dict, directory, stem: str = "checkpoint"):
    """Flat little-endian float64 blob plus a text manifest ``name shape offset``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = [(p.name, p.value) for p in model.params] + sorted(extra.items())
    lines, offset, chunks = [], 0, []
    for name, arr in arrays:
        arr = np.asarray(arr, dtype="<f8")
        shape = "x".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"{name} {shape} {offset}")
        chunks.append(arr.ravel())
        offset += arr.size
    np.concatenate(chunks).astype("<f8").tofile(directory / f"{stem}.bin")
    (directory / f"{stem}.manifest").write_text("\n".join(lines) + "\n")
    return directory / f"{stem}.bin"


def load_checkpoint(directory, stem: str = "checkpoint") -> dict:
    directory = Path(directory)
    blob = np.fromfile(directory / f"{stem}.bin", dtype="<f8")
    out = {}
    for line in (directory / f"{stem}.manifest").read_text().splitlines():
        name, shape, offset = line.split()
        dims = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
        size = int(np.prod(dims)) if dims else 1
        out[name] = blob[int(offset): int(offset) + size].reshape(dims)
    return out
