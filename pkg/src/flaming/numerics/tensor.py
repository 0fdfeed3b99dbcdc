"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

Values live in numpy arrays; the graph is a flat list of tape records built
during the forward pass. `backward` walks the records in reverse creation
order (creation order is already topological) and accumulates gradients into
every tensor that requires them. One tape supports exactly one backward pass.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "NumericsError",
    "NonFiniteError",
    "TapeError",
    "DimensionError",
    "as_tensor",
    "constant",
    "parameter",
    "backward",
    "stop_gradient",
    "set_finite_checks",
    "finite_checks_enabled",
    "add",
    "sub",
    "tabs",
    "mul",
    "div",
    "neg",
    "matmul",
    "reshape",
    "transpose",
    "concat",
    "stack",
    "getitem",
    "tsum",
    "tmean",
    "relu",
    "texp",
    "tlog",
    "tsqrt",
]


class NumericsError(Exception):
    """Base class for tensor-engine failures."""


class NonFiniteError(NumericsError):
    """An operation produced NaN or Inf."""

    def __init__(self, op: str, tensor_name: Optional[str] = None):
        self.op = op
        self.tensor_name = tensor_name
        where = f" (tensor '{tensor_name}')" if tensor_name else ""
        super().__init__(f"non-finite values produced by op '{op}'{where}")


class TapeError(NumericsError):
    """Backward called on a missing, stale, or already-consumed tape."""


class DimensionError(NumericsError):
    """Operand shapes violate an operation's contract."""


_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def _active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


_CHECK_FINITE = True


def set_finite_checks(enabled: bool) -> None:
    """Toggle the per-op finiteness guard (on by default)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


def finite_checks_enabled() -> bool:
    return _CHECK_FINITE


class Tensor:
    """A dense float64 array, optionally tracked for gradients.

    `grad` is None until a backward pass deposits something; None means zero.
    Tensors with requires_grad=False are treated as constants and must not be
    mutated once shared across threads.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def constant(x, name: Optional[str] = None) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=False, name=name)


def parameter(x, name: Optional[str] = None) -> Tensor:
    return Tensor(np.array(x, dtype=np.float64, copy=True), requires_grad=True, name=name)


class _Record:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Recorder for one forward pass; a context manager.

    Records are appended in creation order, so every input of a record was
    created earlier -- the list is already a topological order. `backward`
    may be run once; afterwards the tape is consumed.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise TapeError("tape exited out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self._records)

    @property
    def consumed(self) -> bool:
        return self._consumed


def _finite_guard(arr: np.ndarray, op: str, name: Optional[str] = None) -> None:
    if _CHECK_FINITE and not np.isfinite(arr).all():
        raise NonFiniteError(op, name)


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor],
          backward_fn: Callable) -> Tensor:
    """Wrap an op result, recording it when gradients are in play."""
    _finite_guard(data, op)
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and not tape._consumed and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._records.append(_Record(op, tuple(inputs), out, backward_fn))
    return out


def backward(loss: Tensor) -> dict:
    """Reverse-mode sweep from a scalar loss over the active tape.

    Deposits gradients into `.grad` of every requires_grad tensor reached by
    the sweep (leaves accumulate; unreached leaves keep whatever they held,
    None meaning zero). Returns a map from tensor id to gradient array for
    the tensors that received one. The tape is consumed afterwards.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise TapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    tape = _active_tape()
    if tape is None:
        raise TapeError("backward called with no active tape")
    if tape._consumed:
        raise TapeError("tape already consumed; run a new forward pass")
    produced = {id(rec.output) for rec in tape._records}
    if id(loss) not in produced:
        raise TapeError("loss was not produced on the active tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape._records):
        gout = grads.get(id(rec.output))
        if gout is None:
            continue
        gins = rec.backward_fn(gout)
        for t, g in zip(rec.inputs, gins):
            if g is None or not t.requires_grad:
                continue
            prev = grads.get(id(t))
            grads[id(t)] = g if prev is None else prev + g

    deposited: set[int] = set()
    for rec in tape._records:
        for t in rec.inputs:
            tid = id(t)
            if (t.requires_grad and tid in grads and tid not in produced
                    and tid not in deposited):
                g = grads[tid]
                t.grad = np.array(g) if t.grad is None else t.grad + g
                deposited.add(tid)
    if loss.requires_grad:
        loss.grad = grads[id(loss)]
    tape._consumed = True
    tape._records.clear()
    return grads


def stop_gradient(x: Tensor) -> Tensor:
    """Identity on values; blocks all gradient flow into `x`."""
    return Tensor(x.data, requires_grad=False, name=x.name)


# ---------------------------------------------------------------------------
# helpers


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit("add", out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _emit("sub", out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _emit("mul", out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data
    ad, bd = a.data, b.data

    def bwd(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None
        return ga, gb

    return _emit("div", out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product on the last two axes; leading axes broadcast."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError("matmul operands must have ndim >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def bwd(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ bd.swapaxes(-1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, bd.shape)
        return ga, gb

    return _emit("matmul", out, (a, b), bwd)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    orig = a.data.shape

    def bwd(g):
        return (g.reshape(orig),)

    return _emit("reshape", out, (a,), bwd)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inv),)

    return _emit("transpose", out, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of zero tensors")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit("concat", out, tuple(tensors), bwd)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("stack of zero tensors")
    out = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(moved[i] for i in range(len(tensors)))

    return _emit("stack", out, tuple(tensors), bwd)


def getitem(a: Tensor, key) -> Tensor:
    out = a.data[key]
    shape = a.data.shape
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)

    def bwd(g):
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, key, g)
        return (full,)

    return _emit("getitem", out, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, shape).copy(),)

    return _emit("sum", np.asarray(out), (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= shape[ax]

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2 / count, shape).copy(),)

    return _emit("mean", np.asarray(out), (a,), bwd)


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0.0

    def bwd(g):
        return (g * mask,)

    return _emit("relu", out, (a,), bwd)


def tabs(a: Tensor) -> Tensor:
    out = np.abs(a.data)
    sign = np.sign(a.data)

    def bwd(g):
        return (g * sign,)

    return _emit("abs", out, (a,), bwd)


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return _emit("exp", out, (a,), bwd)


def tlog(a: Tensor) -> Tensor:
    out = np.log(a.data)
    ad = a.data

    def bwd(g):
        return (g / ad,)

    return _emit("log", out, (a,), bwd)


def tsqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def bwd(g):
        return (g * 0.5 / out,)

    return _emit("sqrt", out, (a,), bwd)
