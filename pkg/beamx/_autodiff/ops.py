"""
Differentiable ops over dense float64 tensors.

Shapes must agree exactly; the only implicit broadcasting is a Python
scalar combined with a tensor. Row-wise operations that would otherwise
need broadcasting have their own ops (add_bias, row_scale).
"""
import numbers
from typing import Optional, Sequence

import numpy as np

from beamx._autodiff.tensor import DomainError, ShapeError, Tensor, as_tensor, record


def _is_scalar(value) -> bool:
    return isinstance(value, numbers.Real) and not isinstance(value, bool)


def _same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        return record("add", a.data + b, (a,), lambda g: (g,))
    if _is_scalar(a):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        return record("sub", a.data - b, (a,), lambda g: (g,))
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record("neg", -a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return record("scale", a.data * c, (a,), lambda g: (g * c,))


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        return scale(a, b)
    if _is_scalar(a):
        return scale(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    return record("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    if _is_scalar(b):
        if b == 0:
            raise DomainError("div: division by zero")
        return scale(a, 1.0 / b)
    b = as_tensor(b)
    if np.any(b.data == 0):
        raise DomainError(f"div: zero entries in the denominator of shape {b.shape}")
    if _is_scalar(a):
        c = float(a)
        value = c / b.data
        return record("div", value, (b,), lambda g: (-g * value / b.data,))
    a = as_tensor(a)
    _same_shape("div", a, b)
    value = a.data / b.data
    return record("div", value, (a, b), lambda g: (g / b.data, -g * value / b.data))


def square(a) -> Tensor:
    a = as_tensor(a)
    return record("square", a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError(f"sqrt of negative input (min {a.data.min():.3e})")
    value = np.sqrt(a.data)
    return record("sqrt", value, (a,), lambda g: (0.5 * g / value,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    value = np.exp(a.data)
    return record("exp", value, (a,), lambda g: (g * value,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log of non-positive input (min {a.data.min():.3e})")
    return record("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return record("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    slope = np.where(mask, 1.0, alpha)
    return record("leaky_relu", a.data * slope, (a,), lambda g: (g * slope,))


def clamp_min(a, c: float) -> Tensor:
    """max(a, c) elementwise against a constant; the gradient goes to a where a >= c."""
    a = as_tensor(a)
    mask = a.data >= c
    return record("clamp_min", np.where(mask, a.data, c), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return record("matmul", a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def add_bias(x, b) -> Tensor:
    """x[M×d] + b[d], the bias added to every row."""
    x, b = as_tensor(x), as_tensor(b)
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_bias: rows {x.shape} do not fit bias {b.shape}")
    return record("add_bias", x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def row_scale(x, s) -> Tensor:
    """Row i of x[M×d] multiplied by s[i]; s may be [M] or [M×1]."""
    x, s = as_tensor(x), as_tensor(s)
    if x.data.ndim != 2 or s.size != x.shape[0]:
        raise ShapeError(f"row_scale: {x.shape} rows vs scale {s.shape}")
    col = s.data.reshape(-1, 1)
    return record(
        "row_scale",
        x.data * col,
        (x, s),
        lambda g: (g * col, (g * x.data).sum(axis=1).reshape(s.shape)),
    )


def reduce_norm_sq(a) -> Tensor:
    a = as_tensor(a)
    return record("reduce_norm_sq", np.sum(a.data * a.data), (a,), lambda g: (2.0 * g * a.data,))


# ---------------------------------------------------------------- reductions


def _check_axis(kind: str, a: Tensor, axis: Optional[int]) -> None:
    if axis is not None and not (0 <= axis < a.data.ndim):
        raise ShapeError(f"{kind}: axis {axis} out of range for shape {a.shape}")


def sum(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    _check_axis("sum", a, axis)

    def grad(g):
        if axis is None:
            return (np.full(a.shape, float(np.asarray(g).reshape(-1)[0])),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape),)

    return record("sum", np.sum(a.data, axis=axis), (a,), grad)


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    _check_axis("mean", a, axis)
    count = a.size if axis is None else a.shape[axis]
    if count == 0:
        raise ShapeError(f"mean over an empty axis of shape {a.shape}")
    return scale(sum(a, axis=axis), 1.0 / count)


def _extremum(kind: str, a: Tensor, axis: Optional[int], pick) -> Tensor:
    _check_axis(kind, a, axis)
    if a.size == 0:
        raise ShapeError(f"{kind} of an empty tensor")
    if axis is None:
        # np.argmax / np.argmin return the first extremal index
        idx = int(pick(a.data.reshape(-1)))
        value = a.data.reshape(-1)[idx]

        def grad(g):
            out = np.zeros(a.size)
            out[idx] = float(np.asarray(g).reshape(-1)[0])
            return (out.reshape(a.shape),)

        return record(kind, value, (a,), grad)

    idx = np.expand_dims(pick(a.data, axis=axis), axis)
    value = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def grad(g):
        out = np.zeros(a.shape)
        np.put_along_axis(out, idx, np.expand_dims(g, axis), axis=axis)
        return (out,)

    return record(kind, value, (a,), grad)


def max(a, axis: Optional[int] = None) -> Tensor:
    return _extremum("max", as_tensor(a), axis, np.argmax)


def min(a, axis: Optional[int] = None) -> Tensor:
    return _extremum("min", as_tensor(a), axis, np.argmin)


# ---------------------------------------------------------------- structure


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    ndim = tensors[0].data.ndim
    for t in tensors:
        if t.data.ndim != ndim:
            raise ShapeError(f"concat: rank mismatch {[t.shape for t in tensors]}")
        other = [d for i, d in enumerate(t.shape) if i != axis]
        ref = [d for i, d in enumerate(tensors[0].shape) if i != axis]
        if other != ref:
            raise ShapeError(f"concat(axis={axis}): shape mismatch {[t.shape for t in tensors]}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def grad(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, grad)


def slice(a, start: int, stop: int, axis: int = 0) -> Tensor:
    a = as_tensor(a)
    _check_axis("slice", a, axis)
    if not (0 <= start <= stop <= a.shape[axis]):
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis {axis} of {a.shape}")
    index = [np.s_[:]] * a.data.ndim
    index[axis] = np.s_[start:stop]
    index = tuple(index)

    def grad(g):
        out = np.zeros(a.shape)
        out[index] = g
        return (out,)

    return record("slice", a.data[index], (a,), grad)


def gather(a, rows) -> Tensor:
    """Rows of a selected (and possibly repeated) by an integer index array."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)
    if rows.ndim != 1:
        raise ShapeError(f"gather: index must be 1-d, got shape {rows.shape}")
    if rows.size and (rows.min() < 0 or rows.max() >= a.shape[0]):
        raise ShapeError(f"gather: index out of range for {a.shape[0]} rows")

    def grad(g):
        out = np.zeros(a.shape)
        np.add.at(out, rows, g)
        return (out,)

    return record("gather", a.data[rows], (a,), grad)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        value = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return record("reshape", value, (a,), lambda g: (np.asarray(g).reshape(a.shape),))
