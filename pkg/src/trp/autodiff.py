"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation tape is the implicit DAG linking each Tensor to its
parents; ``backward`` walks it once in reverse topological order.
Everything is numpy-backed and single-threaded per tape.
"""

from __future__ import annotations

import hashlib
import json
from typing import Callable, Iterable, Sequence

import numpy as np


class ContractViolation(ValueError):
    """A caller broke a documented precondition."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node on the tape: value, accumulated gradient, parent links."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    # -- arithmetic -------------------------------------------------------

    def _lift(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._lift(other)
        out = Tensor(self.data + other.data, _parents=(self, other))

        def backward(g):
            return (_unbroadcast(g, self.data.shape),
                    _unbroadcast(g, other.data.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, _parents=(self,))
        out._backward = lambda g: (-g,)
        return out

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        out = Tensor(self.data * other.data, _parents=(self, other))

        def backward(g):
            return (_unbroadcast(g * other.data, self.data.shape),
                    _unbroadcast(g * self.data, other.data.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        out = Tensor(self.data / other.data, _parents=(self, other))

        def backward(g):
            return (_unbroadcast(g / other.data, self.data.shape),
                    _unbroadcast(-g * self.data / other.data ** 2, other.data.shape))

        out._backward = backward
        return out

    def __matmul__(self, other):
        other = self._lift(other)
        out = Tensor(self.data @ other.data, _parents=(self, other))

        def backward(g):
            a, b = self.data, other.data
            if a.ndim == 1 and b.ndim == 2:
                return (g @ b.T, np.outer(a, g))
            if a.ndim == 2 and b.ndim == 1:
                return (np.outer(g, b), a.T @ g)
            if a.ndim == 1 and b.ndim == 1:
                return (g * b, g * a)
            return (g @ b.T, a.T @ g)

        out._backward = backward
        return out

    # -- shape ops --------------------------------------------------------

    def reshape(self, *shape):
        src = self.data.shape
        out = Tensor(self.data.reshape(*shape), _parents=(self,))
        out._backward = lambda g: (g.reshape(src),)
        return out

    def take_rows(self, indices) -> "Tensor":
        """Gather rows by integer index; backward scatter-adds."""
        idx = np.asarray(indices, dtype=np.intp)
        out = Tensor(self.data[idx], _parents=(self,))

        def backward(g):
            acc = np.zeros_like(self.data)
            np.add.at(acc, idx, g)
            return (acc,)

        out._backward = backward
        return out

    # -- reductions -------------------------------------------------------

    def sum(self, axis=None):
        out = Tensor(self.data.sum(axis=axis), _parents=(self,))

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, self.data.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), self.data.shape).copy(),)

        out._backward = backward
        return out

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def max(self, axis: int) -> "Tensor":
        """Max over one axis; gradient goes to the first argmax."""
        out_data = self.data.max(axis=axis)
        argmax = np.expand_dims(self.data.argmax(axis=axis), axis)
        out = Tensor(out_data, _parents=(self,))

        def backward(g):
            acc = np.zeros_like(self.data)
            np.put_along_axis(acc, argmax, np.expand_dims(g, axis), axis)
            return (acc,)

        out._backward = backward
        return out

    # -- elementwise nonlinearities ----------------------------------------

    def sigmoid(self):
        x = self.data
        val = np.empty_like(x)
        pos = x >= 0
        val[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        val[~pos] = ex / (1.0 + ex)
        out = Tensor(val, _parents=(self,))
        out._backward = lambda g: (g * val * (1.0 - val),)
        return out

    def tanh(self):
        val = np.tanh(self.data)
        out = Tensor(val, _parents=(self,))
        out._backward = lambda g: (g * (1.0 - val ** 2),)
        return out

    def exp(self):
        val = np.exp(self.data)
        out = Tensor(val, _parents=(self,))
        out._backward = lambda g: (g * val,)
        return out

    def log(self):
        out = Tensor(np.log(self.data), _parents=(self,))
        out._backward = lambda g: (g / self.data,)
        return out

    def relu(self):
        """Clamp at zero; subgradient 0 at the kink."""
        mask = self.data > 0
        out = Tensor(np.where(mask, self.data, 0.0), _parents=(self,))
        out._backward = lambda g: (g * mask,)
        return out


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max of two tensors; ties send the gradient to `a`."""
    if a.data.shape != b.data.shape:
        raise ContractViolation(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    take_a = a.data >= b.data
    out = Tensor(np.where(take_a, a.data, b.data), _parents=(a, b))
    out._backward = lambda g: (g * take_a, g * ~take_a)
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [t.data for t in tensors]
    sizes = [p.shape[axis] for p in parts]
    out = Tensor(np.concatenate(parts, axis=axis), _parents=tuple(tensors))

    def backward(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    out._backward = backward
    return out


def logsumexp(x: Tensor, axis: int) -> Tensor:
    """Numerically stable log-sum-exp over one axis, differentiable."""
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    z = (x - shift).exp().sum(axis=axis).log()
    return z + shift.reshape(*z.data.shape)


def backward(loss: Tensor) -> None:
    """Reverse pass from a scalar loss, accumulating into `.grad`."""
    if loss.data.ndim != 0:
        raise ContractViolation("loss must be scalar")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad = parent.grad + g


def grad(loss: Tensor, leaves: Iterable[Tensor]) -> dict[int, np.ndarray]:
    """d(loss)/d(leaf) for every leaf; non-participating leaves get zeros.

    Keys are ``id(leaf)``; leaves keep their accumulated ``.grad`` too.
    """
    leaves = list(leaves)
    for t in leaves:
        t.grad = None
    backward(loss)
    out = {}
    for t in leaves:
        out[id(t)] = t.grad if t.grad is not None else np.zeros_like(t.data)
    return out


# -- optimizer --------------------------------------------------------------


class Adam:
    """Adam with bias correction over a dict of named parameter tensors."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ContractViolation(f"gradient shape mismatch for {k!r}")
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g ** 2
            m_hat = self.m[k] / (1 - self.beta1 ** t)
            v_hat = self.v[k] / (1 - self.beta2 ** t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# -- finite differences ------------------------------------------------------


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                      eps: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must rebuild its tape from the current parameter values on each
    call so perturbed evaluations stay consistent (common random numbers
    are the caller's responsibility via fixed seeds inside `f`).
    """
    if eps <= 0:
        raise ContractViolation("eps must be positive")
    loss = f()
    grads = grad(loss, params)
    worst = 0.0
    for p in params:
        analytic = grads[id(p)]
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FloatingPointError(
                    f"non-finite value at coordinate {i} of {p.name or 'param'}")
            numeric = (hi - lo) / (2 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / (abs(a) + 1e-12)
            worst = max(worst, err)
    return worst


# -- checkpoint format -------------------------------------------------------

CHECKPOINT_MAGIC = "trp-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Single-file format: JSON header line, then raw float64-LE payload."""
    names = sorted(tensors)
    payload = b"".join(
        np.ascontiguousarray(tensors[n], dtype="<f8").tobytes() for n in names)
    header = {
        "format": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


class CheckpointError(ValueError):
    """Malformed or corrupted checkpoint file."""


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("format") != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file")
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("sha256"):
        raise CheckpointError(
            f"checksum mismatch: header {header.get('sha256')}, payload {digest}")
    tensors = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        raw = payload[offset:offset + 8 * count]
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        offset += 8 * count
    return tensors, header.get("meta", {})
