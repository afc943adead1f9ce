from __future__ import annotations

from typing import Iterable

from .tape import Parameter


def sgd_step(params: Iterable[Parameter], lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0) -> None:
    """One momentum-SGD update; clears gradients afterwards.

    ``v <- momentum * v + grad + weight_decay * param``, ``param <- param - lr * v``.
    Frozen parameters are left untouched.
    """
    for p in params:
        if not p.learnable:
            p.zero_grad()
            continue
        p.velocity *= momentum
        p.velocity += p.grad + weight_decay * p.value
        p.value -= lr * p.velocity
        p.zero_grad()
