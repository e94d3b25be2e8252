"""Dense tensor with reverse-mode automatic differentiation.

Tensors wrap a numpy array (float32 or float64, uniform within a run) and
optionally participate in a recorded computation graph. Every differentiable
op attaches a backward closure to its output; ``backward`` walks the graph in
reverse topological order and accumulates gradients into ``.grad``.

Binary ops require exactly matching shapes and dtypes. There is no implicit
broadcasting; the few broadcast patterns the models need (channel bias, row
bias) are explicit ops in ``nnops``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

SUPPORTED_DTYPES = (np.float32, np.float64)

_grad_enabled = True

# Off by default: when enabled, every op output is checked for NaN/Inf.
debug_check_finite = False


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (sampling, cached forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense real array plus optional autograd bookkeeping.

    ``data`` is always a numpy array of float32 or float64. ``requires_grad``
    marks trainable leaves; op outputs require grad iff any input does and
    recording is enabled. ``grad`` is populated by ``backward`` and has the
    same shape and dtype as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in SUPPORTED_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        if debug_check_finite and not np.all(np.isfinite(arr)):
            raise FloatingPointError("tensor contains NaN or Inf")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Operator sugar; Tensor-Tensor only, scalars go through scale/add_scalar.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op output, recording the graph edge when grads are live."""
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def _check_match(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise ValueError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


# ---------------------------------------------------------------------------
# elementwise / linear algebra
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_match(a, b, "add")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_match(a, b, "sub")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _result(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_match(a, b, "mul")

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _result(a.data * b.data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)

    def backward(g):
        _accumulate(a, g * s)

    return _result(a.data * s, (a,), backward)


def add_scalar(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)

    def backward(g):
        _accumulate(a, g)

    return _result(a.data + s, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul: expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: inner dims differ, {a.data.shape} @ {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise ValueError(f"matmul: dtype mismatch {a.data.dtype} vs {b.data.dtype}")

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _result(a.data.reshape(shape), (a,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two (B, C, H, W) tensors along the channel axis."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ValueError("concat_channels: expects 4-d (B, C, H, W) tensors")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ValueError(f"concat_channels: incompatible shapes {a.data.shape} vs {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise ValueError("concat_channels: dtype mismatch")
    ca = a.data.shape[1]

    def backward(g):
        _accumulate(a, g[:, :ca])
        _accumulate(b, g[:, ca:])

    return _result(np.concatenate([a.data, b.data], axis=1), (a, b), backward)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def silu(a: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        # d/dx x*sig(x) = sig(x) * (1 + x*(1 - sig(x)))
        _accumulate(a, g * sig * (1.0 + a.data * (1.0 - sig)))

    return _result(a.data * sig, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - y * y))

    return _result(y, (a,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, np.full(a.data.shape, g, dtype=a.data.dtype))

    return _result(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        _accumulate(a, np.full(a.data.shape, g / n, dtype=a.data.dtype))

    return _result(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), backward)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p._backward is not None and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) through the recorded graph.

    ``loss`` must be a scalar (shape ``()``). Gradients accumulate into the
    ``.grad`` of every reachable tensor with ``requires_grad``.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if loss._backward is None:
        return
    _accumulate(loss, np.ones((), dtype=loss.data.dtype))
    for node in reversed(_topo_order(loss)):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
