"""
Reverse-mode automatic differentiation over dense float64 tensors.

Every trainable model and every unsupervised loss in beamx is written with
these ops. Complex quantities are carried as pairs of real tensors.

Typical usage example:

x = Tensor.parameter([1.0, 2.0, 3.0])
with Tape() as tape:
    y = reduce_norm_sq(x)
grads = backward(tape, y)   # {x: [2., 4., 6.]}
"""
from typing import Callable, Dict, Mapping, Optional, Sequence, Union

import jax
import numpy as np

from beamx._autodiff.ops import (
    add,
    add_bias,
    clamp_min,
    concat,
    div,
    exp,
    gather,
    leaky_relu,
    log,
    matmul,
    max,
    mean,
    min,
    mul,
    neg,
    reduce_norm_sq,
    relu,
    reshape,
    row_scale,
    scale,
    slice,
    sqrt,
    square,
    sub,
    sum,
)
from beamx._autodiff.segment import SEGMENT_MODES, segment_reduce, segment_softmax
from beamx._autodiff.tensor import (
    DomainError,
    ShapeError,
    Tape,
    TapeNode,
    Tensor,
    active_tape,
    as_tensor,
    backward,
)
from beamx.defaults import default_seed

__all__ = [
    "DomainError", "ShapeError", "Tape", "TapeNode", "Tensor", "active_tape", "as_tensor",
    "backward", "forward_op", "grad_check", "OP_KINDS", "SEGMENT_MODES",
    "add", "add_bias", "clamp_min", "concat", "div", "exp", "gather", "leaky_relu", "log",
    "matmul", "max", "mean", "min", "mul", "neg", "reduce_norm_sq", "relu", "reshape",
    "row_scale", "scale", "slice", "sqrt", "square", "sub", "sum",
    "segment_reduce", "segment_softmax",
]

OP_KINDS: Dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "matmul": matmul,
    "scale": scale,
    "sum": sum,
    "mean": mean,
    "max": max,
    "min": min,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "exp": exp,
    "log": log,
    "square": square,
    "sqrt": sqrt,
    "concat": concat,
    "slice": slice,
    "gather": gather,
    "reshape": reshape,
    "reduce_norm_sq": reduce_norm_sq,
    "clamp_min": clamp_min,
    "add_bias": add_bias,
    "row_scale": row_scale,
}


def forward_op(kind: str, inputs: Sequence, **attrs) -> Tensor:
    """
    Evaluate the op named kind on inputs, e.g.
    forward_op("leaky_relu", [x], alpha=0.2) or forward_op("concat", [a, b], axis=1).
    """
    if kind not in OP_KINDS:
        raise ValueError(f"Unknown op kind '{kind}'. Available kinds: {sorted(OP_KINDS)}")
    if kind == "concat":
        return concat(list(inputs), **attrs)
    return OP_KINDS[kind](*inputs, **attrs)


Point = Union[np.ndarray, Sequence[float], Mapping[str, np.ndarray]]


def grad_check(fn: Callable, point: Point, eps: float = 1e-5, max_coords: Optional[int] = None,
               seed: int = default_seed) -> float:
    """
    Compare tape gradients with central finite differences.

    Args:
        fn: maps a parameter Tensor (or a dict of named parameter Tensors,
            when point is a mapping) to a single-element Tensor.
        point: where to evaluate.
        eps: finite-difference step.
        max_coords: check only this many coordinates, drawn at random over
            all arrays; None checks every coordinate.
        seed: seed of the coordinate draw.

    Returns:
        max over checked coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    named = isinstance(point, Mapping)
    base = {k: np.array(v, dtype=np.float64) for k, v in point.items()} if named \
        else {None: np.array(point, dtype=np.float64)}

    def evaluate(arrays):
        leaves = {k: Tensor.parameter(a, name=k) for k, a in arrays.items()}
        return leaves, fn(leaves if named else leaves[None])

    with Tape() as tape:
        leaves, out = evaluate(base)
    grads = backward(tape, out)

    coords = [(key, idx) for key, array in base.items() for idx in np.ndindex(array.shape)]
    if max_coords is not None and max_coords < len(coords):
        picked = np.asarray(jax.random.permutation(jax.random.PRNGKey(seed), len(coords)))[:max_coords]
        coords = [coords[i] for i in sorted(picked)]

    worst = 0.0
    for key, idx in coords:
        array = base[key]
        analytic = grads.get(leaves[key], np.zeros_like(array))
        shifted = dict(base)
        plus = array.copy()
        plus[idx] += eps
        shifted[key] = plus
        f_plus = evaluate(shifted)[1].item()
        minus = array.copy()
        minus[idx] -= eps
        shifted[key] = minus
        f_minus = evaluate(shifted)[1].item()
        numeric = (f_plus - f_minus) / (2.0 * eps)
        err = abs(analytic[idx] - numeric) / np.maximum(1.0, abs(analytic[idx]))
        worst = np.maximum(worst, err)
    return float(worst)
