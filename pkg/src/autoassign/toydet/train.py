"""Serial momentum-SGD training of the toy detector under a chosen assignment strategy."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..assign import (AssignConfig, CenterPrior, GroundTruth, STRATEGIES, baseline_assign,
                      evaluate_loss)
from ..diffcore import Tape, ops, parameters_grad_norm, sgd_step
from .evaluate import EvalResult, decode_detections, evaluate_ap
from .model import DetectorModel
from .scenes import SyntheticScene

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    iterations: int = 300
    batch_size: int = 4
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    milestones: tuple = (2 / 3, 8 / 9)   # fractions of `iterations`; lr /= 10 at each
    warmup: int = 50
    grad_clip: float = 10.0              # global norm; <= 0 disables
    prior_lr_scale: float = 1.0
    seed: int = 0
    # fixed-strategy parameters
    strategy: str = "autoassign"
    radius: float = 1.5
    scale_ranges: tuple = ((0.0, 32.0), (32.0, float("inf")))
    uniform_weight: str = "mean"

    def __post_init__(self):
        valid = ("autoassign",) + STRATEGIES
        if self.strategy not in valid:
            raise ValueError(f"unknown training strategy {self.strategy!r}; expected one of {valid}")

    def lr_at(self, it: int) -> float:
        lr = self.lr
        for m in self.milestones:
            if it >= int(round(m * self.iterations)):
                lr *= 0.1
        if self.warmup and it < self.warmup:
            lr *= (it + 1) / self.warmup
        return lr


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.records])


class TrainingError(RuntimeError):
    def __init__(self, iteration: int, scene_seed: int, cause: Exception):
        super().__init__(f"non-finite loss at iteration {iteration} (scene seed {scene_seed}): {cause}")
        self.iteration = iteration
        self.scene_seed = scene_seed


def scene_loss(preds, scene: SyntheticScene, locations, prior, assign_cfg: AssignConfig,
               train_cfg: TrainConfig, num_classes: int):
    gts = GroundTruth(scene.boxes, scene.labels)
    if train_cfg.strategy == "autoassign":
        return evaluate_loss(preds, gts, locations, assign_cfg, prior=prior)
    fixed = baseline_assign(train_cfg.strategy, locations, gts, num_classes,
                            radius=train_cfg.radius, scale_ranges=train_cfg.scale_ranges,
                            uniform_weight=train_cfg.uniform_weight,
                            strict=assign_cfg.strict_inside)
    return evaluate_loss(preds, gts, locations, assign_cfg, fixed=fixed)


def train(model: DetectorModel, prior: CenterPrior, scenes: Sequence[SyntheticScene],
          assign_cfg: AssignConfig, cfg: TrainConfig, log_every: int = 0,
          on_record: Optional[Callable[[dict], None]] = None) -> TrainLog:
    """Train in place and return one log record per iteration.

    The summed per-scene loss of a step is divided by the number of objects in
    the step (at least 1). Scenes are drawn from a seeded permutation.
    ``on_record`` sees each record as soon as its step completes, so callers
    can stream logs that survive an abort.
    """
    if not scenes:
        raise ValueError("no training scenes")
    rng = np.random.default_rng(cfg.seed)
    locations = model.locations()
    net_params = model.params
    prior_params = prior.parameters()
    order = rng.permutation(len(scenes))
    cursor = 0
    out = TrainLog()
    t0 = time.perf_counter()
    for it in range(cfg.iterations):
        batch = []
        for _ in range(cfg.batch_size):
            if cursor == len(order):
                order, cursor = rng.permutation(len(scenes)), 0
            batch.append(scenes[order[cursor]])
            cursor += 1
        tape = Tape()
        preds = model.forward(np.stack([s.image for s in batch]), tape)
        bound = prior.bind(tape)
        totals, pos, neg, n_obj, dropped = [], 0.0, 0.0, 0, 0
        for p, scene in zip(preds, batch):
            try:
                br = scene_loss(p, scene, locations, bound, assign_cfg, cfg, model.num_classes)
            except FloatingPointError as exc:
                raise TrainingError(it, scene.seed, exc) from exc
            totals.append(br.total)
            pos += br.positive.item()
            neg += br.negative.item()
            n_obj += len(scene.labels) - br.n_dropped
            dropped += br.n_dropped
        norm = float(max(1, n_obj))
        loss = ops.sum(ops.stack(totals)) * (1.0 / norm)
        if not np.isfinite(loss.item()):
            raise TrainingError(it, batch[0].seed, FloatingPointError("non-finite batch loss"))
        tape.backward(loss)
        gnorm = parameters_grad_norm(net_params + prior_params)
        if cfg.grad_clip > 0 and gnorm > cfg.grad_clip:
            scale = cfg.grad_clip / gnorm
            for p in net_params + prior_params:
                p.grad *= scale
        lr = cfg.lr_at(it)
        sgd_step(net_params, lr, cfg.momentum, cfg.weight_decay)
        sgd_step(prior_params, lr * cfg.prior_lr_scale, cfg.momentum, 0.0)
        prior.clamp_()
        record = {
            "iteration": it, "lr": lr, "loss": loss.item(), "positive": pos / norm,
            "negative": neg / norm, "objects": n_obj, "dropped": dropped, "grad_norm": gnorm,
            "mu": prior.mu.value.tolist(), "sigma": prior.sigma.value.tolist(),
        }
        out.records.append(record)
        if on_record is not None:
            on_record(record)
        if log_every and (it % log_every == 0 or it == cfg.iterations - 1):
            log.info("it %d loss %.4f pos %.4f neg %.4f |g| %.3f mu %s (%.1fs)", it, loss.item(),
                     pos / norm, neg / norm, gnorm, np.round(prior.mu.value, 3).tolist(),
                     time.perf_counter() - t0)
    return out


def predict(model: DetectorModel, scenes: Sequence[SyntheticScene], batch_size: int = 16) -> list:
    preds = []
    for i in range(0, len(scenes), batch_size):
        chunk = scenes[i: i + batch_size]
        preds.extend(model.forward(np.stack([s.image for s in chunk])))
    return preds


def evaluate_model(model: DetectorModel, scenes: Sequence[SyntheticScene],
                   objectness_mode: str = "implicit", nms_iou: float = 0.6,
                   score_threshold: float = 0.05) -> EvalResult:
    locations = model.locations()
    dets = []
    for sid, p in enumerate(predict(model, scenes)):
        dets.extend(decode_detections(p, locations, sid, objectness_mode,
                                      score_threshold=score_threshold, nms_iou=nms_iou))
    return evaluate_ap(dets, [(s.boxes, s.labels) for s in scenes], model.num_classes)
