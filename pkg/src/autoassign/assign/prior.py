"""Learnable per-category Gaussian center prior."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..diffcore import DiffArray, Parameter, Tape, as_array, ops

PRIOR_MODES = ("none", "fixed", "shared", "category")


class CenterPrior:
    """Gaussian location weighting ``exp(-(d - mu)^2 / (2 sigma^2))`` per category.

    ``mu`` and ``sigma`` have shape (K, 2), or (1, 2) in ``shared`` mode, and
    live in stride-normalized units. ``fixed`` keeps them frozen; ``none``
    turns the prior off (weight 1 everywhere).
    """

    def __init__(self, num_classes: int, mode: str = "category", mu_init=0.0,
                 sigma_init=1.0, sigma_floor: float = 1e-3):
        if mode not in PRIOR_MODES:
            raise ValueError(f"prior mode {mode!r} not in {PRIOR_MODES}")
        self.num_classes = num_classes
        self.mode = mode
        self.sigma_floor = sigma_floor
        rows = 1 if mode == "shared" else num_classes
        learnable = mode in ("shared", "category")
        mu = np.broadcast_to(np.asarray(mu_init, dtype=np.float64), (rows, 2)).copy()
        sigma = np.broadcast_to(np.asarray(sigma_init, dtype=np.float64), (rows, 2)).copy()
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
        self.mu = Parameter("prior.mu", mu, learnable)
        self.sigma = Parameter("prior.sigma", sigma, learnable)

    def parameters(self) -> list:
        return [self.mu, self.sigma]

    def clamp_(self) -> None:
        np.maximum(self.sigma.value, self.sigma_floor, out=self.sigma.value)

    def row(self, category: int) -> int:
        if not 0 <= category < self.num_classes:
            raise ValueError(f"category {category} out of range for K={self.num_classes}")
        return 0 if self.mode == "shared" else category

    def bind(self, tape: Optional[Tape] = None, mu=None, sigma=None) -> "BoundPrior":
        """Attach the parameters to ``tape`` (or use explicit arrays) for one evaluation."""
        if mu is None:
            mu = tape.watch(self.mu) if tape is not None else DiffArray(self.mu.value)
        if sigma is None:
            sigma = tape.watch(self.sigma) if tape is not None else DiffArray(self.sigma.value)
        return BoundPrior(self, as_array(mu), as_array(sigma))


@dataclass
class BoundPrior:
    prior: CenterPrior
    mu: DiffArray
    sigma: DiffArray

    @property
    def mode(self) -> str:
        return self.prior.mode

    def log_weight(self, d: np.ndarray, category: int) -> Optional[DiffArray]:
        """log G for stride-normalized offsets ``d`` (n, 2); None when the prior is off."""
        r = self.prior.row(category)
        if self.mode == "none":
            return None
        diff = ops.sub(np.asarray(d, dtype=np.float64), self.mu[r])
        sq = ops.div(diff * diff, (self.sigma[r] * self.sigma[r]) * 2.0)
        return -ops.sum(sq, axis=1)


def center_weight(d, category: int, prior, tape: Optional[Tape] = None) -> DiffArray:
    """G(d) in (0, 1] for each offset row of ``d``; ones when the prior is off."""
    bound = prior if isinstance(prior, BoundPrior) else prior.bind(tape)
    d = np.asarray(d, dtype=np.float64).reshape(-1, 2)
    logw = bound.log_weight(d, category)
    if logw is None:
        return DiffArray(np.ones(len(d)))
    return ops.exp(logw)
