"""Dense tensors with a recorded tape for reverse-mode differentiation."""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

_TAPES: list["Tape"] = []
_DEBUG = False


class TapeError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised in debug mode when an op produces NaN/Inf from finite inputs."""

    def __init__(self, op: str):
        super().__init__(f"non-finite output produced by op '{op}'")
        self.op = op


def set_debug(flag: bool) -> None:
    global _DEBUG
    _DEBUG = bool(flag)


@contextlib.contextmanager
def debug_mode(flag: bool = True):
    prev = _DEBUG
    set_debug(flag)
    try:
        yield
    finally:
        set_debug(prev)


class Tensor:
    """A numpy array that can take part in a recorded computation.

    Leaves created with ``requires_grad=True`` are parameters; their ``grad``
    buffer is filled (additively) by :meth:`Tape.backward`.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[_Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


class _Node:
    __slots__ = ("op", "out", "inputs", "vjp")

    def __init__(self, op: str, out: Tensor, inputs: tuple, vjp: Callable):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Append-only record of differentiable ops.

    Use as a context manager; ops executed inside record themselves when any
    input requires a gradient. Append order is a valid topological order, so
    :meth:`backward` just walks the list in reverse.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, out: Tensor, inputs: tuple, vjp: Callable) -> None:
        if self.consumed:
            raise TapeError("tape already consumed")
        node = _Node(op, out, inputs, vjp)
        out._node = node
        self.nodes.append(node)

    def op_names(self) -> list[str]:
        return [n.op for n in self.nodes]

    def first_nonfinite_op(self) -> Optional[str]:
        for node in self.nodes:
            if not np.all(np.isfinite(node.out.data)):
                return node.op
        return None

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise TapeError("tape already consumed")
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._node is None or loss._node not in self.nodes:
            raise TapeError("loss was not produced on this tape")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.vjp(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if t._node is None:
                    if t.grad is None:
                        t.grad = np.array(gi, dtype=t.data.dtype, copy=True)
                    else:
                        t.grad = t.grad + gi
                else:
                    key = id(t)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
        self.release()

    def release(self) -> None:
        """Drop saved values and break node/tensor reference cycles."""
        for node in self.nodes:
            node.out = node.vjp = None
            node.inputs = ()
        self.nodes.clear()


def current_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


@contextlib.contextmanager
def no_grad():
    """Suspend recording (e.g. for evaluation or finite differences)."""
    saved = list(_TAPES)
    _TAPES.clear()
    try:
        yield
    finally:
        _TAPES.extend(saved)


def backward(loss: Tensor) -> None:
    """Back-propagate ``loss`` through the tape that produced it."""
    node = loss._node
    if node is None:
        raise TapeError("loss is a leaf; nothing to differentiate")
    for tape in reversed(_TAPES):
        if node in tape.nodes:
            tape.backward(loss)
            return
    raise TapeError("tape already consumed or no longer active")


def make_output(op: str, data: np.ndarray, inputs: Sequence, vjp: Callable) -> Tensor:
    out = Tensor(data)
    if _DEBUG and not np.all(np.isfinite(out.data)):
        if all(np.all(np.isfinite(t.data)) for t in inputs if isinstance(t, Tensor)):
            raise NonFiniteError(op)
    tape = current_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, out, tuple(inputs), vjp)
    return out
