"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every operation applied to arrays that belong to it.
Arrays without a tape are constants: operations on constants only are
evaluated eagerly and never recorded.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_state = threading.local()


def _faults() -> set:
    if not hasattr(_state, "faults"):
        _state.faults = set()
    return _state.faults


class inject_fault:
    """Flip the sign of the backward rule of ``op_tag`` inside the block.

    Negative-control hook for the gradient checker; never active by default.
    """

    def __init__(self, op_tag: str):
        self.op_tag = op_tag

    def __enter__(self):
        _faults().add(self.op_tag)
        return self

    def __exit__(self, *exc):
        _faults().discard(self.op_tag)
        return False


@dataclass
class _Node:
    tag: str
    parents: tuple
    backward: Optional[BackwardFn]


class DiffArray:
    """A float64 array that may participate in reverse-mode differentiation."""

    __array_priority__ = 100

    def __init__(self, data, tape: Optional["Tape"] = None, node: Optional[int] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def values(self) -> list:
        return self.data.ravel().tolist()

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tracked = "" if self.node is None else f", node={self.node}"
        return f"DiffArray({np.array2string(self.data, precision=6)}{tracked})"

    # Operator sugar; the implementations live in ops.py.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.negate(self)

    def __pow__(self, exponent):
        from . import ops
        return ops.power(self, exponent)

    def __getitem__(self, index):
        from . import ops
        return ops.index(self, index)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)

    def max(self, axis=None):
        from . import ops
        return ops.max(self, axis)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)


def as_array(x) -> DiffArray:
    if isinstance(x, DiffArray):
        return x
    return DiffArray(x)


class Tape:
    """Append-only record of operations, replayed backwards by :meth:`backward`.

    Node ids are assigned in execution order, so parents always precede their
    children. A tape must stay on the thread that created it.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._grads: dict[int, np.ndarray] = {}
        self._watched: list[tuple["Parameter", DiffArray]] = []

    def __len__(self):
        return len(self._nodes)

    def variable(self, data, tag: str = "leaf") -> DiffArray:
        """Register ``data`` as a differentiable leaf."""
        node = len(self._nodes)
        self._nodes.append(_Node(tag, (), None))
        return DiffArray(np.array(data, dtype=np.float64), self, node)

    def watch(self, param: "Parameter") -> DiffArray:
        """Leaf view of a parameter; frozen parameters come back as constants."""
        if not param.learnable:
            return DiffArray(param.value)
        leaf = self.variable(param.value, tag=f"param:{param.name}")
        self._watched.append((param, leaf))
        return leaf

    def record(self, tag: str, data: np.ndarray, parents: Sequence[DiffArray],
               backward: BackwardFn) -> DiffArray:
        ids = tuple(p.node if p.tape is self else None for p in parents)
        if all(i is None for i in ids):
            return DiffArray(data)
        if tag in _faults():
            inner = backward

            def backward(g, inner=inner):
                return [None if r is None else -r for r in inner(g)]

        node = len(self._nodes)
        self._nodes.append(_Node(tag, ids, backward))
        return DiffArray(data, self, node)

    def backward(self, out: DiffArray, seed: Optional[np.ndarray] = None) -> None:
        """Accumulate d(out)/d(node) for every node that ``out`` depends on.

        ``out`` must be a scalar unless ``seed`` is given. Gradients of watched
        learnable parameters are added to ``Parameter.grad``.
        """
        if out.tape is not self:
            raise ValueError("output does not belong to this tape")
        if seed is None:
            if out.size != 1:
                raise ValueError(f"backward needs a scalar output or a seed, got shape {out.shape}")
            seed = np.ones_like(out.data)
        grads: dict[int, np.ndarray] = {out.node: np.asarray(seed, dtype=np.float64)}
        for nid in range(out.node, -1, -1):
            g = grads.get(nid)
            if g is None:
                continue
            node = self._nodes[nid]
            if node.backward is None:
                continue
            for pid, pg in zip(node.parents, node.backward(g)):
                if pid is None or pg is None:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        self._grads = grads
        for param, leaf in self._watched:
            g = grads.get(leaf.node)
            if g is not None:
                param.grad += g

    def grad(self, x: DiffArray) -> np.ndarray:
        """Gradient of the last backward output w.r.t. ``x`` (zeros if unreached)."""
        if x.tape is not self or x.node is None:
            return np.zeros_like(x.data)
        g = self._grads.get(x.node)
        return np.zeros_like(x.data) if g is None else g


@dataclass(eq=False)
class Parameter:
    """Named persistent array; learnable ones accumulate gradients."""

    name: str
    value: np.ndarray
    learnable: bool = True
    grad: np.ndarray = field(init=False)
    velocity: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.velocity = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def parameters_grad_norm(params: Iterable[Parameter]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad ** 2)) for p in params if p.learnable)))


# stop_gradient freezing: grad_check evaluates the function once while
# recording every detached value, then replays those values at perturbed
# points so numeric derivatives obey the same detachment as the analytic ones.

def _detach_mode():
    return getattr(_state, "detach", None)


class record_detached:
    def __enter__(self):
        self.values: list[np.ndarray] = []
        _state.detach = ("record", self.values)
        return self

    def __exit__(self, *exc):
        _state.detach = None
        return False


class replay_detached:
    def __init__(self, values: list):
        self.values = values

    def __enter__(self):
        _state.detach = ("replay", iter(self.values))
        return self

    def __exit__(self, *exc):
        _state.detach = None
        return False


def stop_gradient(a) -> DiffArray:
    """Forward identity whose backward contributes nothing."""
    a = as_array(a)
    mode = _detach_mode()
    if mode is None:
        return DiffArray(a.data.copy())
    kind, store = mode
    if kind == "record":
        store.append(a.data.copy())
        return DiffArray(a.data.copy())
    frozen = next(store, None)
    if frozen is None or frozen.shape != a.shape:
        raise RuntimeError("detached-value replay diverged from the recorded evaluation")
    return DiffArray(frozen.copy())
