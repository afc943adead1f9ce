"""Differentiable operations on :class:`DiffArray`.

Callers are responsible for keeping ``log`` and ``div`` inside their domains
(clamp first); the ops here reject bad inputs instead of saturating.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tape import DiffArray, Tape, as_array

ELEMENTWISE_OPS = ("add", "sub", "mul", "div", "exp", "log", "sigmoid", "relu",
                   "power", "clamp", "negate")
REDUCE_OPS = ("sum", "max", "mean")


def _tape_of(*arrays: DiffArray) -> Optional[Tape]:
    tape = None
    for a in arrays:
        if a.tape is None:
            continue
        if tape is None:
            tape = a.tape
        elif a.tape is not tape:
            raise ValueError("cannot combine arrays recorded on different tapes")
    return tape


def _emit(tag, data, parents, backward) -> DiffArray:
    tape = _tape_of(*parents)
    if tape is None:
        return DiffArray(data)
    return tape.record(tag, data, parents, backward)


def _broadcast_shape(a: DiffArray, b: DiffArray) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}") from None


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- binary ops

def add(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    _broadcast_shape(a, b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    _broadcast_shape(a, b)
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (unbroadcast(g * bd, a.shape), unbroadcast(g * ad, b.shape)))


def div(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    _broadcast_shape(a, b)
    if np.any(b.data == 0.0):
        raise ValueError("division by zero; clamp the denominator away from 0")
    ad, bd = a.data, b.data
    out = ad / bd
    return _emit("div", out, (a, b),
                 lambda g: (unbroadcast(g / bd, a.shape),
                            unbroadcast(-g * out / bd, b.shape)))


def maximum(a, b) -> DiffArray:
    """Elementwise max, written as ``b + relu(a - b)`` (ties route to ``b``)."""
    b = as_array(b)
    return add(b, relu(sub(a, b)))


def minimum(a, b) -> DiffArray:
    """Elementwise min, written as ``a - relu(a - b)`` (ties route to ``a``)."""
    a = as_array(a)
    return sub(a, relu(sub(a, b)))


# ----------------------------------------------------------------- unary ops

def negate(a) -> DiffArray:
    a = as_array(a)
    return _emit("negate", -a.data, (a,), lambda g: (-g,))


def exp(a) -> DiffArray:
    a = as_array(a)
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a) -> DiffArray:
    a = as_array(a)
    if np.any(a.data <= 0.0):     # NaN propagates; callers check finiteness
        bad = a.data[a.data <= 0.0].ravel()[0]
        raise ValueError(f"log of non-positive value {bad!r}; clamp the input first")
    ad = a.data
    return _emit("log", np.log(ad), (a,), lambda g: (g / ad,))


def sigmoid(a) -> DiffArray:
    a = as_array(a)
    x = a.data
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> DiffArray:
    a = as_array(a)
    mask = a.data > 0.0
    return _emit("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def power(a, exponent: float) -> DiffArray:
    """``a ** exponent`` for a constant exponent.

    The derivative at ``a == 0`` is taken as 0 whenever it is not finite.
    """
    a = as_array(a)
    p = float(exponent)
    ad = a.data
    if p == 0.0:
        return _emit("power", np.ones_like(ad), (a,), lambda g: (np.zeros_like(ad),))
    if np.any(ad < 0) and not p.is_integer():
        raise ValueError(f"fractional power {p} of a negative value")
    out = ad ** p

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = p * ad ** (p - 1.0)
        d = np.where(np.isfinite(d), d, 0.0)
        return (g * d,)

    return _emit("power", out, (a,), backward)


def clamp(a, lo: Optional[float] = None, hi: Optional[float] = None) -> DiffArray:
    """Clip into ``[lo, hi]``; gradient passes only where the input is inside."""
    a = as_array(a)
    ad = a.data
    out = np.clip(ad, lo, hi)
    inside = np.ones(ad.shape, dtype=bool)
    if lo is not None:
        inside &= ad >= lo
    if hi is not None:
        inside &= ad <= hi
    return _emit("clamp", out, (a,), lambda g: (g * inside,))


_UNARY = {"exp": exp, "log": log, "sigmoid": sigmoid, "relu": relu, "negate": negate}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_tag: str, a, b=None, **kwargs) -> DiffArray:
    """Dispatch by name; ``power`` takes ``b`` as its exponent, ``clamp`` takes lo/hi."""
    if op_tag in _UNARY:
        return _UNARY[op_tag](a)
    if op_tag in _BINARY:
        if b is None:
            raise ValueError(f"{op_tag} needs two operands")
        return _BINARY[op_tag](a, b)
    if op_tag == "power":
        return power(a, b if b is not None else kwargs["exponent"])
    if op_tag == "clamp":
        return clamp(a, kwargs.get("lo"), kwargs.get("hi"))
    raise ValueError(f"unknown elementwise op {op_tag!r}; expected one of {ELEMENTWISE_OPS}")


# ---------------------------------------------------------------- reductions

def _check_axis(a: DiffArray, axis):
    if axis is None:
        return None
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"axis {axis} out of range for shape {a.shape}")
    return axis % a.ndim


def sum(a, axis: Optional[int] = None) -> DiffArray:
    a = as_array(a)
    axis = _check_axis(a, axis)
    shape = a.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", np.sum(a.data, axis=axis), (a,), backward)


def mean(a, axis: Optional[int] = None) -> DiffArray:
    a = as_array(a)
    axis = _check_axis(a, axis)
    n = a.size if axis is None else a.shape[axis]
    shape = a.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _emit("mean", np.mean(a.data, axis=axis), (a,), backward)


def max(a, axis: Optional[int] = None) -> DiffArray:
    """Max reduction; the gradient goes to the first maximal element only."""
    a = as_array(a)
    axis = _check_axis(a, axis)
    ad = a.data
    if axis is None:
        flat = int(np.argmax(ad))

        def backward(g):
            out = np.zeros(ad.size)
            out[flat] = g
            return (out.reshape(ad.shape),)

        return _emit("max", ad.ravel()[flat], (a,), backward)
    idx = np.expand_dims(np.argmax(ad, axis=axis), axis)

    def backward(g):
        out = np.zeros_like(ad)
        np.put_along_axis(out, idx, np.expand_dims(g, axis), axis)
        return (out,)

    return _emit("max", np.take_along_axis(ad, idx, axis).squeeze(axis), (a,), backward)


_REDUCE = {"sum": sum, "max": max, "mean": mean}


def reduce(op_tag: str, a, axis: Optional[int] = None) -> DiffArray:
    if op_tag not in _REDUCE:
        raise ValueError(f"unknown reduction {op_tag!r}; expected one of {REDUCE_OPS}")
    return _REDUCE[op_tag](a, axis)


# ----------------------------------------------------------------- structure

def reshape(a, shape) -> DiffArray:
    a = as_array(a)
    shape_in = a.shape
    return _emit("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(shape_in),))


def transpose(a, axes=None) -> DiffArray:
    a = as_array(a)
    inv = None if axes is None else np.argsort(axes)
    return _emit("transpose", np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inv),))


def index(a, key) -> DiffArray:
    """Basic or advanced indexing; repeated indices accumulate on backward."""
    a = as_array(a)
    if isinstance(key, DiffArray):
        raise TypeError("index with a plain array, not a DiffArray")
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, key, g)
        return (out,)

    return _emit("index", a.data[key], (a,), backward)


def take(a, indices, axis: int = 0) -> DiffArray:
    a = as_array(a)
    indices = np.asarray(indices, dtype=np.int64)
    axis = _check_axis(a, axis)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (out,)

    return _emit("take", np.take(a.data, indices, axis=axis), (a,), backward)


def concat(arrays: Sequence, axis: int = 0) -> DiffArray:
    arrays = [as_array(x) for x in arrays]
    sizes = [x.shape[axis] for x in arrays]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat", np.concatenate([x.data for x in arrays], axis=axis),
                 tuple(arrays), backward)


def stack(arrays: Sequence, axis: int = 0) -> DiffArray:
    arrays = [as_array(x) for x in arrays]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _emit("stack", np.stack([x.data for x in arrays], axis=axis),
                 tuple(arrays), backward)


def matmul(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _emit("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


# ---------------------------------------------------------------- convolution

def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> DiffArray:
    """Cross-correlation of ``x`` [C,H,W] or [N,C,H,W] with ``kernel`` [F,C,k,k]."""
    x, kernel = as_array(x), as_array(kernel)
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    kd = kernel.data
    if xd.ndim != 4 or kd.ndim != 4:
        raise ValueError(f"conv2d expects [C,H,W] or [N,C,H,W] input and [F,C,k,k] kernel, "
                         f"got {x.shape} and {kernel.shape}")
    n, c, h, w = xd.shape
    f, kc, k, k2 = kd.shape
    if kc != c or k != k2:
        raise ValueError(f"conv2d channel/kernel mismatch: input {x.shape}, kernel {kernel.shape}")
    if k % 2 == 0:
        raise ValueError(f"conv2d kernel size must be odd, got {k}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride {stride} or padding {padding}")
    ho, wo = conv_output_size(h, k, stride, padding), conv_output_size(w, k, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d output would be {ho}x{wo} for input {x.shape}")

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # cols: (N*ho*wo, C*k*k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    kmat = kd.reshape(f, c * k * k)
    out = (cols @ kmat.T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def backward(g):
        gg = g if batched else g[None]
        gmat = gg.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        gk = (gmat.T @ cols).reshape(kd.shape)
        gcols = (gmat @ kmat).reshape(n, ho, wo, c, k, k)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + (ho - 1) * stride + 1 : stride,
                    j : j + (wo - 1) * stride + 1 : stride] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding : padding + h, padding : padding + w]
        return (gx if batched else gx[0], gk)

    return _emit("conv2d", out if batched else out[0], (x, kernel), backward)

