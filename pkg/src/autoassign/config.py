"""Plain-text run configuration: one ``section.key = value`` per line.

Lines starting with ``#`` and blank lines are ignored. Categories are given as
``scene.category.<i>.<field>`` with contiguous indices starting at 0. Every
key has a default, so a config file only needs the keys it changes. The
resolved configuration serializes back to the same format with every key
present, and that text is what runs store next to their outputs.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .assign import CONFIDENCE_MODES, OBJECTNESS_MODES, PRIOR_MODES, STRATEGIES, AssignConfig, \
    CenterPrior
from .toydet import CategorySpec, ModelConfig, SceneGenConfig, TrainConfig
from .toydet.scenes import SHAPE_KINDS


class ConfigError(ValueError):
    """Malformed config; the message names the line and key when known."""


# strategy name -> keys it overrides on top of the base config
STRATEGY_OVERRIDES = {
    "autoassign": {},
    "uniform-inbox": {"strategy.name": "uniform-inbox"},
    "center-sampling": {"strategy.name": "center-sampling"},
    "center-sampling+scale-ranges": {"strategy.name": "center-sampling+scale-ranges"},
    "cls-only": {"assign.confidence_mode": "cls-only"},
    "loc-only": {"assign.confidence_mode": "loc-only"},
    "no-obj": {"assign.objectness_mode": "none"},
    "explicit-obj": {"assign.objectness_mode": "explicit"},
    "fixed-prior": {"prior.mode": "fixed"},
    "shared-prior": {"prior.mode": "shared"},
    "no-prior": {"prior.mode": "none"},
}
STRATEGY_NAMES = tuple(STRATEGY_OVERRIDES)

CATEGORY_FIELDS = {
    "kind": str, "size_min": float, "size_max": float, "offset_x": float, "offset_y": float,
    "intensity": float, "evidence_w": float, "evidence_h": float,
}


def _fmt_float(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_float(text: str) -> float:
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _parse_list(conv):
    def parse(text: str) -> tuple:
        return tuple(conv(t.strip()) for t in text.split(",") if t.strip())
    return parse


def _parse_ranges(text: str) -> tuple:
    out = []
    for part in text.split(","):
        lo, hi = part.split(":")
        out.append((_parse_float(lo.strip()), _parse_float(hi.strip())))
    return tuple(out)


_KINDS = {
    int: (int, str),
    float: (_parse_float, _fmt_float),
    str: (str, str),
    bool: (_parse_bool, lambda v: "true" if v else "false"),
    "floats": (_parse_list(_parse_float), lambda v: ", ".join(_fmt_float(x) for x in v)),
    "ints": (_parse_list(int), lambda v: ", ".join(str(x) for x in v)),
    "strs": (_parse_list(str), lambda v: ", ".join(v)),
    "ranges": (_parse_ranges, lambda v: ", ".join(f"{_fmt_float(a)}:{_fmt_float(b)}" for a, b in v)),
}

# key -> (kind, default, allowed values or None)
SCHEMA = {
    "run.out": (str, "runs/default", None),
    "run.seed": (int, 0, None),

    "scene.image_size": (int, 64, None),
    "scene.objects_min": (int, 1, None),
    "scene.objects_max": (int, 3, None),
    "scene.noise_std": (float, 0.1, None),
    "scene.max_overlap_iou": (float, 0.1, None),
    "scene.margin": (int, 1, None),
    "scene.max_retries": (int, 50, None),
    "scene.train_count": (int, 1000, None),
    "scene.train_seed": (int, 1000, None),
    "scene.test_count": (int, 200, None),
    "scene.test_seed": (int, 5000, None),

    "assign.tau": (float, 1 / 3, None),
    "assign.lam": (float, 5.0, None),
    "assign.focal_alpha": (float, 0.25, None),
    "assign.focal_gamma": (float, 2.0, None),
    "assign.confidence_mode": (str, "full", CONFIDENCE_MODES),
    "assign.objectness_mode": (str, "implicit", OBJECTNESS_MODES),
    "assign.iou_clamp_eps": (float, 1e-6, None),
    "assign.prob_floor": (float, 1e-12, None),
    "assign.explicit_obj_weight": (float, 1.0, None),
    "assign.strict_inside": (bool, True, None),

    "prior.mode": (str, "category", PRIOR_MODES),
    "prior.mu_init": (float, 0.0, None),
    "prior.sigma_init": (float, 1.0, None),
    "prior.sigma_floor": (float, 1e-3, None),
    "prior.lr_scale": (float, 0.3, None),

    "model.stem_channels": (int, 8, None),
    "model.channels": (int, 16, None),
    "model.head_channels": (int, 16, None),
    "model.num_levels": (int, 2, None),
    "model.head_kernel": (int, 3, None),
    "model.prior_prob": (float, 0.01, None),

    "optim.iterations": (int, 1000, None),
    "optim.batch_size": (int, 4, None),
    "optim.lr": (float, 0.01, None),
    "optim.momentum": (float, 0.9, None),
    "optim.weight_decay": (float, 1e-4, None),
    "optim.milestones": ("floats", (2 / 3, 8 / 9), None),
    "optim.warmup": (int, 50, None),
    "optim.grad_clip": (float, 10.0, None),

    "strategy.name": (str, "autoassign", ("autoassign",) + STRATEGIES),
    "strategy.radius": (float, 1.5, None),
    "strategy.scale_ranges": ("ranges", ((0.0, 32.0), (32.0, math.inf)), None),
    "strategy.uniform_weight": (str, "mean", ("mean", "one")),

    "eval.nms_iou": (float, 0.6, None),
    "eval.score_threshold": (float, 0.05, None),
    "eval.probe_scene": (int, 0, None),

    "gradcheck.seeds": ("ints", tuple(range(10)), None),
    "gradcheck.model_seeds": ("ints", (0,), None),
    "gradcheck.epsilon": (float, 1e-5, None),
    "gradcheck.unit_tolerance": (float, 1e-4, None),
    "gradcheck.model_tolerance": (float, 1e-3, None),
    "gradcheck.inject_fault": (str, "", None),

    "compare.strategies": ("strs", ("autoassign", "uniform-inbox", "center-sampling+scale-ranges"),
                           None),
    "compare.seeds": ("ints", (0,), None),
    "compare.sweep_key": (str, "", None),
    "compare.sweep_values": ("strs", (), None),

    "dump.scene_id": (int, 0, None),
    "dump.split": (str, "test", ("train", "test")),
    "dump.checkpoint": (str, "", None),
    "eval.checkpoint": (str, "", None),
}

DEFAULT_CATEGORIES = (
    {"kind": "filled-rect", "size_min": 10.0, "size_max": 32.0},
    {"kind": "ellipse", "size_min": 10.0, "size_max": 32.0},
    {"kind": "bottom-bar", "size_min": 20.0, "size_max": 36.0, "offset_y": 0.25, "evidence_h": 0.2},
    {"kind": "left-bar", "size_min": 32.0, "size_max": 56.0, "offset_x": -0.35, "evidence_w": 0.15},
)

_CATEGORY_KEY = re.compile(r"^scene\.category\.(\d+)\.([a-z_]+)$")


def _category_dict(spec: CategorySpec) -> dict:
    return {name: getattr(spec, name) for name in CATEGORY_FIELDS}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: v[1] for k, v in SCHEMA.items()})
    categories: list = field(default_factory=lambda: [_category_dict(CategorySpec(**c))
                                                      for c in DEFAULT_CATEGORIES])

    # ------------------------------------------------------------------ access
    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """Copy with ``key -> text or value`` overrides applied and validated."""
        out = RunConfig(dict(self.values), [dict(c) for c in self.categories])
        for key, value in overrides.items():
            out._set(key, value, where=f"override {key}")
        out.validate()
        return out

    def with_strategy(self, name: str) -> "RunConfig":
        if name not in STRATEGY_OVERRIDES:
            raise ConfigError(f"unknown strategy {name!r}; valid names: {', '.join(STRATEGY_NAMES)}")
        return self.with_overrides(STRATEGY_OVERRIDES[name])

    # ------------------------------------------------------------------- parse
    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        seen: dict = {}
        cats: dict = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            where = f"{source}:{lineno}"
            if "=" not in line:
                raise ConfigError(f"{where}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ConfigError(f"{where}: missing key before '='")
            if key in seen:
                raise ConfigError(f"{where}: key {key!r} repeats line {seen[key]}")
            seen[key] = lineno
            m = _CATEGORY_KEY.match(key)
            if m:
                idx, name = int(m.group(1)), m.group(2)
                if name not in CATEGORY_FIELDS:
                    raise ConfigError(f"{where}: key {key!r}: unknown category field {name!r}; "
                                      f"expected one of {', '.join(CATEGORY_FIELDS)}")
                try:
                    cats.setdefault(idx, {})[name] = CATEGORY_FIELDS[name](
                        _parse_float(value) if CATEGORY_FIELDS[name] is float else value)
                except ValueError as exc:
                    raise ConfigError(f"{where}: key {key!r}: {exc}") from None
                continue
            cfg._set(key, value, where)
        if cats:
            if sorted(cats) != list(range(len(cats))):
                raise ConfigError(f"{source}: category indices must be contiguous from 0, "
                                  f"got {sorted(cats)}")
            cfg.categories = []
            for i in range(len(cats)):
                try:
                    cfg.categories.append(_category_dict(CategorySpec(**cats[i])))
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{source}: scene.category.{i}: {exc}") from None
        cfg.validate(source)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.parse(path.read_text(), str(path))

    def _set(self, key: str, value, where: str):
        if key not in SCHEMA:
            raise ConfigError(f"{where}: unknown key {key!r}")
        kind, _, allowed = SCHEMA[key]
        parse = _KINDS[kind][0]
        if isinstance(value, str):
            try:
                value = parse(value)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{where}: key {key!r}: cannot parse {value!r} ({exc})") from None
        if allowed is not None and value not in allowed:
            raise ConfigError(f"{where}: key {key!r}: {value!r} not in {', '.join(allowed)}")
        self.values[key] = value

    def validate(self, source: str = "<config>") -> None:
        """Build every component once so bad combinations fail before any work starts."""
        try:
            self.scene_config()
            self.assign_config()
            self.make_prior()
            self.model_config()
            self.train_config()
            from .toydet import DetectorModel
            DetectorModel(len(self.categories), self.model_config())
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: {exc}") from None
        for name in self["compare.strategies"]:
            if name not in STRATEGY_OVERRIDES:
                raise ConfigError(f"{source}: key 'compare.strategies': unknown strategy {name!r}; "
                                  f"valid names: {', '.join(STRATEGY_NAMES)}")
        sweep = self["compare.sweep_key"]
        if sweep and (sweep not in SCHEMA or not self["compare.sweep_values"]):
            raise ConfigError(f"{source}: key 'compare.sweep_key': {sweep!r} must be a known key "
                              f"and compare.sweep_values must be non-empty")

    # --------------------------------------------------------------- serialize
    def to_text(self) -> str:
        lines = []
        section = None
        for key, (kind, _, _) in SCHEMA.items():
            head = key.split(".", 1)[0]
            if head != section:
                if section is not None:
                    lines.append("")
                section = head
            lines.append(f"{key} = {_KINDS[kind][1](self.values[key])}")
            if key == "scene.test_seed":
                for i, cat in enumerate(self.categories):
                    for name, conv in CATEGORY_FIELDS.items():
                        v = cat[name]
                        lines.append(f"scene.category.{i}.{name} = "
                                     f"{_fmt_float(v) if conv is float else v}")
        return "\n".join(lines) + "\n"

    # ------------------------------------------------------------ components
    @property
    def num_classes(self) -> int:
        return len(self.categories)

    def scene_config(self) -> SceneGenConfig:
        v = self.values
        return SceneGenConfig(
            image_size=v["scene.image_size"],
            categories=[CategorySpec(**c) for c in self.categories],
            objects_min=v["scene.objects_min"], objects_max=v["scene.objects_max"],
            noise_std=v["scene.noise_std"], max_overlap_iou=v["scene.max_overlap_iou"],
            margin=v["scene.margin"], max_retries=v["scene.max_retries"])

    def assign_config(self) -> AssignConfig:
        return AssignConfig(**{f.name: self.values[f"assign.{f.name}"] for f in fields(AssignConfig)})

    def make_prior(self) -> CenterPrior:
        v = self.values
        return CenterPrior(self.num_classes, v["prior.mode"], v["prior.mu_init"],
                           v["prior.sigma_init"], v["prior.sigma_floor"])

    def model_config(self) -> ModelConfig:
        v = self.values
        return ModelConfig(image_size=v["scene.image_size"], stem_channels=v["model.stem_channels"],
                           channels=v["model.channels"], head_channels=v["model.head_channels"],
                           num_levels=v["model.num_levels"], head_kernel=v["model.head_kernel"],
                           prior_prob=v["model.prior_prob"], seed=v["run.seed"])

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            iterations=v["optim.iterations"], batch_size=v["optim.batch_size"], lr=v["optim.lr"],
            momentum=v["optim.momentum"], weight_decay=v["optim.weight_decay"],
            milestones=tuple(v["optim.milestones"]), warmup=v["optim.warmup"],
            grad_clip=v["optim.grad_clip"], prior_lr_scale=v["prior.lr_scale"], seed=v["run.seed"],
            strategy=v["strategy.name"], radius=v["strategy.radius"],
            scale_ranges=tuple(v["strategy.scale_ranges"]),
            uniform_weight=v["strategy.uniform_weight"])

    def split_seeds(self, split: str) -> range:
        base, count = self[f"scene.{split}_seed"], self[f"scene.{split}_count"]
        return range(base, base + count)


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.load(path)
