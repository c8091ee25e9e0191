import contextvars
import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np


class ShapeError(ValueError):
    """Raised when the operands of a tape op do not conform."""


class DomainError(ValueError):
    """Raised when an op is evaluated outside of its domain (log of a negative, ...)."""


_active_tape: contextvars.ContextVar = contextvars.ContextVar("beamx_active_tape", default=None)


class TapeNode:
    """
    One recorded op.

    Attributes:
        kind (str): op-kind identifier, e.g. "matmul".
        inputs (tuple): input tensors, in call order.
        output (Tensor): the tensor produced by the op.
        backward_fn (Callable): maps the output gradient to one gradient per
            input (None for inputs that receive none).
    """

    __slots__ = ("kind", "inputs", "output", "backward_fn")

    def __init__(self, kind: str, inputs: Tuple["Tensor", ...], output: "Tensor", backward_fn: Callable) -> None:
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn

    def __repr__(self) -> str:
        shapes = ", ".join(str(t.shape) for t in self.inputs)
        return f"TapeNode({self.kind}: {shapes} -> {self.output.shape})"


class Tape:
    """
    Append-only record of the ops evaluated while the tape is active.

    Typical usage example:

    with Tape() as tape:
        loss = f(params)
    grads = backward(tape, loss)
    """

    def __init__(self) -> None:
        self.nodes: List[TapeNode] = []
        self._token = None

    def record(self, node: TapeNode) -> None:
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None


def active_tape() -> Optional[Tape]:
    return _active_tape.get()


class Tensor:
    """
    Dense float64 tensor, row-major.

    Leaves created with Tensor.parameter are trainable; every other tensor
    requires a gradient only if it was produced on an active tape from
    something that does.
    """

    __slots__ = ("data", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node: Optional[TapeNode] = None
        self.name = name

    @classmethod
    def parameter(cls, data, name: Optional[str] = None) -> "Tensor":
        return cls(data, requires_grad=True, name=name)

    @classmethod
    def constant(cls, data) -> "Tensor":
        return cls(data, requires_grad=False)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # operator sugar, the ops module does the work
    def __add__(self, other):
        from beamx._autodiff import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from beamx._autodiff import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from beamx._autodiff import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from beamx._autodiff import ops
        return ops.add(ops.neg(self), other)

    def __mul__(self, other):
        from beamx._autodiff import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from beamx._autodiff import ops
        return ops.mul(self, other)

    def __truediv__(self, other):
        from beamx._autodiff import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from beamx._autodiff import ops
        return ops.div(other, self)

    def __neg__(self):
        from beamx._autodiff import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from beamx._autodiff import ops
        return ops.matmul(self, other)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor.constant(value)


def record(kind: str, value: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """
    Wrap a forward value into a Tensor and append the op to the active tape
    when at least one input needs a gradient.
    """
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        if all(np.all(np.isfinite(t.data)) for t in inputs):
            raise DomainError(f"op '{kind}' produced non-finite values from finite inputs")
    out = Tensor(value)
    tape = _active_tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = TapeNode(kind, tuple(inputs), out, backward_fn)
        out.node = node
        tape.record(node)
    return out


def backward(tape: Tape, output: Tensor) -> Dict[Tensor, np.ndarray]:
    """
    Reverse sweep over the tape.

    Args:
        tape: the tape the output was computed on.
        output: single-element tensor to differentiate.

    Returns:
        {parameter tensor: gradient array of the same shape} for every
        trainable leaf the output depends on.
    """
    if output.data.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")

    seed = np.ones_like(output.data)
    if output.is_leaf:
        return {output: seed} if output.requires_grad else {}

    grads: Dict[int, np.ndarray] = {id(output): seed}
    leaves: Dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        input_grads = node.backward_fn(g)
        for tensor, tensor_grad in zip(node.inputs, input_grads):
            if tensor_grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if tensor.is_leaf:
                leaves[key] = tensor
            if key in grads:
                grads[key] = grads[key] + tensor_grad
            else:
                grads[key] = tensor_grad

    result = {}
    for key, tensor in leaves.items():
        g = np.asarray(grads[key], dtype=np.float64)
        if g.shape != tensor.shape:
            g = g.reshape(tensor.shape)
        result[tensor] = g
    logging.debug(f"backward over {len(tape.nodes)} tape nodes, {len(result)} parameter leaves")
    return result
