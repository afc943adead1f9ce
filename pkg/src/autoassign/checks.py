"""Gradient-check suites: every differentiable op, the full loss, and the toy model end to end."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .assign import AssignConfig, CenterPrior, DensePredictions, GroundTruth, evaluate_loss
from .assign.weights import confidence_weight, loc_confidence, positive_weights_log
from .diffcore import GradCheckReport, grad_check, inject_fault, ops
from .geometry import PyramidLevelSpec, giou_loss_diff, make_locations


@dataclass
class CaseResult:
    suite: str
    name: str
    seed: int
    report: GradCheckReport


@dataclass
class SuiteOutcome:
    cases: list
    seconds: float

    @property
    def passed(self) -> bool:
        return all(c.report.passed for c in self.cases)

    def failing_ops(self) -> list:
        return sorted({c.name for c in self.cases if not c.report.passed})

    def worst_per_suite(self) -> dict:
        out: dict = {}
        for c in self.cases:
            best = out.get(c.suite)
            if best is None or c.report.max_rel_error > best.report.max_rel_error:
                out[c.suite] = c
        return out

    def render(self) -> str:
        lines = [f"{c.suite} {c.name} seed={c.seed} {c.report.summary()}" for c in self.cases]
        lines.append("")
        for suite, c in sorted(self.worst_per_suite().items()):
            lines.append(f"worst[{suite}] {c.name} seed={c.seed} {c.report.summary()}")
        lines.append(f"status {'PASS' if self.passed else 'FAIL'}"
                     + ("" if self.passed else " failing: " + ", ".join(self.failing_ops())))
        return "\n".join(lines) + "\n"


def _away_from(rng, shape, lo=0.2, hi=1.5):
    """Values with magnitude in [lo, hi] and random sign (keeps kinks out of reach)."""
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


def _distinct(rng, shape):
    """A random permutation of well-separated values, so max has a unique argmax."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.3 + rng.uniform(-0.05, 0.05, n)).reshape(shape)


def _weighted(out, rng, via: str = "mul"):
    """Scalarize with fixed random weights so every output element matters.

    ``via="matmul"`` avoids mul and sum, so a sign fault in either one cannot
    cancel against the scalarizer inside its own case.
    """
    w = rng.normal(size=out.shape)
    if via == "matmul":
        return ops.matmul(ops.reshape(out, (1, out.size)), w.reshape(-1, 1))
    return ops.sum(out * w)


# Each builder returns (inputs, f) for one seed; shapes stay at <= 16 elements per input.
def _unit_cases() -> dict:
    def binary(fn, positive_b=False, via="mul"):
        def build(rng):
            a = rng.normal(size=(3, 4))
            b = rng.uniform(0.5, 2.0, (3, 4)) if positive_b else rng.normal(size=(1, 4))
            return [a, b], lambda x: _weighted(fn(x[0], x[1]), np.random.default_rng(7), via)
        return build

    def unary(fn, sampler, via="mul"):
        def build(rng):
            return [sampler(rng)], lambda x: _weighted(fn(x[0]), np.random.default_rng(7), via)
        return build

    def conv(rng):
        x, k = rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 2, 3, 3))
        return [x, k], lambda v: _weighted(ops.conv2d(v[0], v[1], stride=1, padding=1),
                                           np.random.default_rng(7))

    def conv_strided(rng):
        x, k = rng.normal(size=(1, 4, 4)), rng.normal(size=(2, 1, 3, 3))
        return [x, k], lambda v: _weighted(ops.conv2d(v[0], v[1], stride=2, padding=1),
                                           np.random.default_rng(7))

    def giou(rng):
        xy = rng.uniform(0, 4, (3, 2))
        pred = np.concatenate([xy, xy + rng.uniform(1, 3, (3, 2))], axis=1)
        gxy = xy + rng.uniform(-0.7, 0.7, (3, 2))
        gt = np.concatenate([gxy, gxy + rng.uniform(1, 3, (3, 2))], axis=1)
        return [pred], lambda v: ops.sum(giou_loss_diff(v[0], gt))

    def posw(rng):
        return [rng.normal(size=5), rng.normal(size=5)], \
            lambda v: _weighted(positive_weights_log(v[0], v[1]), np.random.default_rng(7))

    def confw(rng):
        return [rng.uniform(0.1, 2.0, 6)], \
            lambda v: _weighted(confidence_weight(loc_confidence(v[0], 5.0), 1 / 3),
                                np.random.default_rng(7))

    return {
        "add": binary(ops.add),
        "sub": binary(ops.sub),
        "mul": binary(ops.mul, via="matmul"),
        "div": binary(ops.div, positive_b=True),
        "maximum": lambda rng: ([_away_from(rng, (3, 4)), np.zeros((3, 4)) + 0.05],
                                lambda x: _weighted(ops.maximum(x[0], x[1]), np.random.default_rng(7))),
        "minimum": lambda rng: ([_away_from(rng, (3, 4)), np.zeros((3, 4)) - 0.05],
                                lambda x: _weighted(ops.minimum(x[0], x[1]), np.random.default_rng(7))),
        "negate": unary(ops.negate, lambda r: r.normal(size=(4, 4))),
        "exp": unary(ops.exp, lambda r: r.normal(size=(4, 4))),
        "log": unary(ops.log, lambda r: r.uniform(0.2, 3.0, (4, 4))),
        "sigmoid": unary(ops.sigmoid, lambda r: 2.0 * r.normal(size=(4, 4))),
        "relu": unary(ops.relu, lambda r: _away_from(r, (4, 4))),
        "power": unary(lambda a: ops.power(a, 2.5), lambda r: r.uniform(0.3, 2.0, (4, 4))),
        "clamp": unary(lambda a: ops.clamp(a, -0.1, 0.1) + a * 0.5, lambda r: _away_from(r, (4, 4))),
        "sum": unary(lambda a: ops.sum(a, axis=1), lambda r: r.normal(size=(4, 4)), via="matmul"),
        "mean": unary(lambda a: ops.mean(a, axis=0), lambda r: r.normal(size=(4, 4))),
        "max": unary(lambda a: ops.max(a, axis=1), lambda r: _distinct(r, (4, 4))),
        "reshape": unary(lambda a: ops.reshape(a, (2, 8)), lambda r: r.normal(size=(4, 4))),
        "transpose": unary(lambda a: ops.transpose(a, (1, 0)), lambda r: r.normal(size=(4, 4))),
        "index": unary(lambda a: a[np.array([0, 2, 2]), 1:3], lambda r: r.normal(size=(4, 4))),
        "take": unary(lambda a: ops.take(a, np.array([3, 0, 3]), axis=1), lambda r: r.normal(size=(4, 4))),
        "concat": binary(lambda a, b: ops.concat([a, b], axis=0)),
        "stack": lambda rng: ([rng.normal(size=(2, 4)), rng.normal(size=(2, 4))],
                              lambda x: _weighted(ops.stack([x[0], x[1]], axis=1), np.random.default_rng(7))),
        "matmul": lambda rng: ([rng.normal(size=(3, 4)), rng.normal(size=(4, 2))],
                               lambda x: _weighted(ops.matmul(x[0], x[1]), np.random.default_rng(7))),
        "conv2d": conv,
        "conv2d-strided": conv_strided,
        "giou": giou,
        "positive-weights": posw,
        "confidence-weight": confw,
    }


UNIT_CASES = tuple(_unit_cases())


def run_unit_suite(seeds: Sequence[int] = range(10), tolerance: float = 1e-4,
                   epsilon: float = 1e-5, names: Optional[Sequence[str]] = None) -> list:
    cases = _unit_cases()
    out = []
    for name in names or cases:
        for seed in seeds:
            inputs, f = cases[name](np.random.default_rng(seed))
            out.append(CaseResult("unit", name, seed,
                                  grad_check(f, inputs, epsilon=epsilon, tolerance=tolerance)))
    return out


def random_loss_instance(seed: int, num_classes: int = 2, max_objects: int = 3):
    """A small scene: 20 locations (4x4 at stride 8, 2x2 at stride 16), 1-3 boxes."""
    rng = np.random.default_rng(seed)
    locations = make_locations([PyramidLevelSpec(8, 4, 4), PyramidLevelSpec(16, 2, 2)])
    n_obj = int(rng.integers(1, max_objects + 1))
    boxes = []
    for _ in range(n_obj):
        w, h = rng.uniform(12, 26, 2)
        x1, y1 = rng.uniform(0, 32 - w), rng.uniform(0, 32 - h)
        boxes.append([x1, y1, x1 + w, y1 + h])
    gts = GroundTruth(np.array(boxes), rng.integers(0, num_classes, n_obj))
    n = len(locations)
    inputs = [rng.normal(-1.0, 1.0, (n, num_classes)), rng.normal(0.0, 1.0, (n, 1)),
              np.log(rng.uniform(4.0, 16.0, (n, 4))),
              rng.normal(0.0, 0.3, (num_classes, 2)), rng.uniform(0.7, 1.5, (num_classes, 2))]
    return locations, gts, inputs


def full_loss_function(locations, gts, num_classes: int, cfg: Optional[AssignConfig] = None,
                       prior_mode: str = "category") -> Callable:
    cfg = cfg or AssignConfig()
    prior = CenterPrior(num_classes, prior_mode)

    def f(x):
        preds = DensePredictions(x[0], x[1], ops.exp(x[2]))
        bound = prior.bind(mu=x[3], sigma=x[4])
        return evaluate_loss(preds, gts, locations, cfg, prior=bound).total
    return f


def run_loss_suite(seeds: Sequence[int] = range(10), tolerance: float = 1e-4,
                   epsilon: float = 1e-5) -> list:
    out = []
    for seed in seeds:
        locations, gts, inputs = random_loss_instance(seed)
        f = full_loss_function(locations, gts, 2)
        out.append(CaseResult("loss", "full-loss", seed,
                              grad_check(f, inputs, epsilon=epsilon, tolerance=tolerance)))
    return out


def run_model_suite(seeds: Sequence[int] = (0,), tolerance: float = 1e-3,
                    epsilon: float = 1e-5) -> list:
    """All parameters of a narrow toy model on a 16x16 image with one object."""
    from .toydet import DetectorModel, ModelConfig

    out = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        model = DetectorModel(2, ModelConfig(image_size=16, stem_channels=2, channels=3,
                                             head_channels=3, seed=seed))
        prior = CenterPrior(2, "category")
        image = rng.normal(0.0, 0.5, (1, 16, 16))
        image[0, 4:12, 3:11] += 1.0
        gts = GroundTruth(np.array([[2.0, 3.0, 12.0, 13.0]]), np.array([int(rng.integers(2))]))
        locations = model.locations()
        names = [p.name for p in model.params]
        inputs = [p.value.copy() for p in model.params] + [prior.mu.value.copy(),
                                                           prior.sigma.value.copy() + 0.2]
        cfg = AssignConfig()

        def f(x, names=names, image=image, gts=gts, locations=locations, model=model,
              prior=prior, cfg=cfg):
            preds = model.forward(image, overrides=dict(zip(names, x[:len(names)])))[0]
            bound = prior.bind(mu=x[-2], sigma=x[-1])
            return evaluate_loss(preds, gts, locations, cfg, prior=bound).total

        out.append(CaseResult("model", "toy-model", seed,
                              grad_check(f, inputs, epsilon=epsilon, tolerance=tolerance)))
    return out


def run_all(seeds: Sequence[int] = range(10), unit_tolerance: float = 1e-4,
            model_tolerance: float = 1e-3, epsilon: float = 1e-5, fault: Optional[str] = None,
            model_seeds: Sequence[int] = (0,)) -> SuiteOutcome:
    """Unit, full-loss and end-to-end suites; ``fault`` negates one op's backward rule."""
    t0 = time.perf_counter()

    def go():
        return (run_unit_suite(seeds, unit_tolerance, epsilon)
                + run_loss_suite(seeds, unit_tolerance, epsilon)
                + run_model_suite(model_seeds, model_tolerance, epsilon))

    if fault:
        with inject_fault(fault):
            cases = go()
    else:
        cases = go()
    return SuiteOutcome(cases, time.perf_counter() - t0)
