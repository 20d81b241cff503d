"""Dense fp32 tensors with reverse-mode automatic differentiation, plus Adam.

Every network computation in the package runs through this engine. Forward
ops build a tape of primitive records (each output tensor keeps references to
its parents and a backward closure); ``backward`` on a scalar loss walks the
tape once in reverse topological order and accumulates gradients into leaf
tensors that were created with ``requires_grad=True``.

Scope is deliberately narrow: fp32 only, 1-D/2-D arrays, and no broadcasting
beyond the matrix + row-vector bias case. Shapes must otherwise match
exactly; mismatches raise ``ValueError`` at op time.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericsError

__all__ = [
    "Tensor",
    "no_grad",
    "record",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "sin",
    "relu",
    "sigmoid",
    "softplus",
    "concat",
    "reshape",
    "gather_rows",
    "sum_reduce",
    "mse",
    "bce_with_logits",
    "AdamState",
    "adam_step",
    "Adam",
]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference-only forward)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """An fp32 array plus optional gradient buffer and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float32)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward_fn is None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar for the common compositions.
    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


def record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Create an op output, linking it into the tape when grads are active.

    ``backward_fn(gout)`` must return one gradient array (or ``None``) per
    parent, in order. Exposed so other modules can define fused primitives
    (e.g. the trilinear gather) without touching the engine.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    # Reverse topological order via iterative post-order DFS.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    # ``order`` keeps every reachable node alive, so id() keys are stable.
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is None:
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, gp in zip(node._parents, node._backward_fn(g)):
            if gp is None or not parent.requires_grad:
                continue
            gp = gp.astype(np.float32, copy=False)
            pid = id(parent)
            grads[pid] = gp if pid not in grads else grads[pid] + gp


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- primitives ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return record(a.data @ b.data, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    bias = b.data.ndim == 1 and a.data.ndim == 2 and a.data.shape[1] == b.data.shape[0]
    if not bias and a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")

    def bwd(g):
        return g, g.sum(axis=0) if bias else g

    return record(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub shape mismatch: {a.shape} - {b.shape}")

    def bwd(g):
        return g, -g

    return record(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} * {b.shape}")

    def bwd(g):
        return g * b.data, g * a.data

    return record(a.data * b.data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    def bwd(g):
        return (g * np.float32(c),)

    return record(a.data * np.float32(c), (a,), bwd)


def sin(a: Tensor) -> Tensor:
    def bwd(g):
        return (g * np.cos(a.data),)

    return record(np.sin(a.data), (a,), bwd)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def bwd(g):
        return (g * (a.data > 0.0),)

    return record(out, (a,), bwd)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Stable in both tails.
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(np.float32)


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)

    def bwd(g):
        return (g * s * (1.0 - s),)

    return record(s, (a,), bwd)


def softplus(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

    def bwd(g):
        return (g * _sigmoid(a.data),)

    return record(out.astype(np.float32), (a,), bwd)


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ValueError("concat of zero tensors")
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return record(np.concatenate([p.data for p in parts], axis=axis), parts, bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.data.shape

    def bwd(g):
        return (g.reshape(old),)

    return record(a.data.reshape(shape), (a,), bwd)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds into the source."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.data.ndim != 2:
        raise ValueError("gather_rows needs a 2-D tensor")

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return record(a.data[idx], (a,), bwd)


def sum_reduce(a: Tensor) -> Tensor:
    def bwd(g):
        return (np.full_like(a.data, np.float32(g)),)

    return record(a.data.sum(dtype=np.float32), (a,), bwd)


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant target array."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, np.float32)
    if pred.data.shape != t.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {t.shape}")
    diff = pred.data - t

    def bwd(g):
        return (g * diff * np.float32(2.0 / diff.size),)

    return record(np.mean(diff * diff, dtype=np.float32), (pred,), bwd)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross entropy on raw logits against constant 0/1 targets."""
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets, np.float32)
    if logits.data.shape != t.shape:
        raise ValueError(f"bce shape mismatch: {logits.shape} vs {t.shape}")
    x = logits.data
    loss = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))

    def bwd(g):
        return (g * (_sigmoid(x) - t) / np.float32(x.size),)

    return record(np.mean(loss, dtype=np.float32), (logits,), bwd)


# -- Adam ----------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment buffers and step count for one parameter tensor."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_param(cls, param: Tensor) -> "AdamState":
        return cls(m=np.zeros_like(param.data), v=np.zeros_like(param.data))


def adam_step(
    param: Tensor,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place on ``param.data``."""
    if grad.shape != param.data.shape:
        raise ValueError(f"grad shape {grad.shape} != param shape {param.data.shape}")
    if not np.isfinite(grad).all():
        raise NumericsError("non-finite gradient; step rejected")
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    param.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(np.float32)


@dataclass
class Adam:
    """Adam over a list of parameter tensors sharing one learning rate.

    Parameters whose ``grad`` is ``None`` at ``step()`` time are skipped
    entirely (no moment decay), which keeps untouched parameters bit-exact.
    """

    params: list[Tensor]
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: list[AdamState] = field(default_factory=list)

    def __post_init__(self):
        self.states = [AdamState.for_param(p) for p in self.params]

    def step(self) -> None:
        for p, s in zip(self.params, self.states):
            if p.grad is not None:
                adam_step(p, p.grad, s, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
