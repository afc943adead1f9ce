from __future__ import annotations

from dataclasses import dataclass

CONFIDENCE_MODES = ("full", "cls-only", "loc-only")
OBJECTNESS_MODES = ("implicit", "explicit", "none")


@dataclass
class AssignConfig:
    """Hyperparameters of the weighting mechanism and the joint loss.

    ``confidence_mode`` selects what feeds the confidence weighting function;
    ``objectness_mode`` selects how the objectness logit enters the
    classification confidence.
    """

    tau: float = 1.0 / 3.0
    lam: float = 5.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    confidence_mode: str = "full"
    objectness_mode: str = "implicit"
    iou_clamp_eps: float = 1e-6
    prob_floor: float = 1e-12
    explicit_obj_weight: float = 1.0
    strict_inside: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if not self.focal_gamma >= 0:
            raise ValueError(f"focal gamma must be >= 0, got {self.focal_gamma}")
        if not 0.0 <= self.focal_alpha <= 1.0:
            raise ValueError(f"focal alpha must lie in [0, 1], got {self.focal_alpha}")
        if self.confidence_mode not in CONFIDENCE_MODES:
            raise ValueError(f"confidence mode {self.confidence_mode!r} not in {CONFIDENCE_MODES}")
        if self.objectness_mode not in OBJECTNESS_MODES:
            raise ValueError(f"objectness mode {self.objectness_mode!r} not in {OBJECTNESS_MODES}")
