"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation record is define-by-run: every operation whose inputs require
gradients links its output back to its parents together with a backward rule.
``backward`` on a scalar walks that record once in reverse topological order
and populates ``grad`` on every reachable tensor that requires gradients.
A second ``backward`` into already-populated gradients is a hard error;
clearing gradients (``zero_grad``) is the explicit reset.

Randomness is never implicit: callers construct a generator with
:func:`make_rng` (numpy's PCG64, a 64-bit permuted congruential generator)
and thread it through every API that draws samples.

Single-threaded by design: a graph and its tensors belong to one logical
thread for the duration of a training step. Gradient-free tensors are
immutable in practice and safe to share read-only.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "GradientError",
    "ShapeError",
    "no_grad",
    "grad_enabled",
    "from_op",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "relu",
    "tsum",
    "tmean",
    "tmax",
    "reshape",
    "transpose",
    "swapaxes",
    "concat",
    "stack",
    "zero_grad",
    "grad_check",
    "grad_check_params",
    "make_rng",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GradientError(RuntimeError):
    """Misuse of the gradient machinery (non-scalar loss, double backward, ...)."""


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator (PCG64). All randomness in this package flows from here."""
    return np.random.Generator(np.random.PCG64(seed))


_grad_enabled = True


class no_grad:
    """Context manager that suppresses recording of backward rules."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense float64 array plus an optional backward rule linking it to its parents."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, cut out of the computation record."""
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar; populates ``grad`` on all
        requires_grad ancestors. Errors if any of them already holds a gradient."""
        if self.data.size != 1:
            raise GradientError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GradientError("backward on a tensor with no recorded computation "
                                "(requires_grad is False)")

        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        for node in order:
            g = grads.get(id(node))
            if g is None:
                continue
            if node.grad is not None:
                raise GradientError(
                    "backward into a tensor whose grad is already populated; "
                    "zero_grad the parameters between steps")
            node.grad = np.ascontiguousarray(g, dtype=np.float64)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return tmax(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def _toposort(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS; parents always precede consumers."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def from_op(data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Wrap an op result. `backward(out_grad) -> tuple of per-parent grads`.

    The extension point for fused operations (convolution, LSTM cell, losses)
    that want a hand-written backward rule instead of a composed one.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy trailing-dimension broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, name: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise --------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    return from_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    return from_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    return from_op(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "div")
    return from_op(a.data / b.data, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    p = float(exponent)
    out = a.data ** p
    return from_op(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return from_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    return from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return from_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def _expit(x: np.ndarray) -> np.ndarray:
    # numerically stable logistic, both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = _expit(a.data)
    return from_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    return from_op(np.maximum(a.data, 0.0), (a,),
                   lambda g: (g * (a.data > 0.0),))


# -- matmul --------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; leading (batch) dimensions broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")

    def backward(g):
        da = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        db = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return da, db

    return from_op(np.matmul(a.data, b.data), (a, b), backward)


# -- reductions ----------------------------------------------------------


def _normalize_axis(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} invalid for a {ndim}-d tensor")
        norm.append(ax % ndim)
    return tuple(norm)


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axes, keepdims: bool) -> np.ndarray:
    if not keepdims:
        if axes is None:
            g = g.reshape((1,) * len(shape))
        else:
            full = list(g.shape)
            for ax in sorted(axes):
                full.insert(ax, 1)
            g = g.reshape(full)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)
    out = np.sum(a.data, axis=axes, keepdims=keepdims)
    return from_op(out, (a,),
                   lambda g: (_expand_reduced(g, a.shape, axes, keepdims),))


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)
    out = np.mean(a.data, axis=axes, keepdims=keepdims)
    count = a.data.size if axes is None else int(np.prod([a.shape[ax] for ax in axes]))
    return from_op(out, (a,),
                   lambda g: (_expand_reduced(g, a.shape, axes, keepdims) / count,))


def tmax(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction. Gradient is split equally among tied maxima."""
    a = _as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)
    out = np.max(a.data, axis=axes, keepdims=keepdims)

    def backward(g):
        full = _expand_reduced(np.asarray(out), a.shape, axes, keepdims)
        mask = (a.data == full).astype(np.float64)
        counts = mask.sum(axis=axes, keepdims=True) if axes is not None else mask.sum()
        mask /= counts
        return (mask * _expand_reduced(g, a.shape, axes, keepdims),)

    return from_op(out, (a,), backward)


# -- structural ops ------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    return from_op(a.data.reshape(shape), (a,),
                   lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return from_op(np.transpose(a.data, axes), (a,),
                   lambda g: (np.transpose(g, inverse),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = _as_tensor(a)
    return from_op(np.swapaxes(a.data, ax1, ax2), (a,),
                   lambda g: (np.swapaxes(g, ax1, ax2),))


def _getitem(a: Tensor, index) -> Tensor:
    """Basic (slice/integer) indexing; the gradient scatters into zeros."""
    out = a.data[index]

    def backward(g):
        full = np.zeros(a.shape)
        full[index] = g
        return (full,)

    return from_op(np.array(out), (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(np.moveaxis(moved[offsets[i]:offsets[i + 1]], 0, axis)
                     for i in range(len(tensors)))

    return from_op(data, tuple(tensors), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(moved[i] for i in range(len(tensors)))

    return from_op(data, tuple(tensors), backward)


# -- gradient utilities --------------------------------------------------


def zero_grad(tensors) -> None:
    """Clear gradients; the explicit reset that re-arms backward."""
    for t in tensors:
        t.grad = None


def _max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
        return float("inf")
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    err = np.abs(analytic - numeric) / denom
    return float(err.max()) if err.size else 0.0


def grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between the recorded gradient of scalar f(x) and
    central finite differences. Non-finite values report as infinity."""
    probe = Tensor(np.array(x.data, copy=True), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise GradientError("grad_check needs a scalar-valued function")
    out.backward()
    analytic = np.zeros_like(probe.data) if probe.grad is None else probe.grad

    numeric = np.zeros_like(probe.data)
    flat = probe.data.ravel()
    nflat = numeric.ravel()
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(probe).item()
            flat[i] = orig - eps
            lo = f(probe).item()
            flat[i] = orig
            nflat[i] = (hi - lo) / (2.0 * eps)
    return _max_relative_error(analytic, numeric)


def grad_check_params(loss_fn, params, eps: float = 1e-3) -> float:
    """grad_check over a whole parameter set.

    `loss_fn()` rebuilds the scalar loss from the current parameter values;
    `params` is an iterable of (name, Tensor). Returns the max relative error
    over every coordinate of every parameter.
    """
    params = list(params)
    loss = loss_fn()
    loss.backward()
    analytic = {}
    for name, p in params:
        analytic[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
    zero_grad(p for _, p in params)

    worst = 0.0
    with no_grad():
        for name, p in params:
            flat = p.data.ravel()
            numeric = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = loss_fn().item()
                flat[i] = orig - eps
                lo = loss_fn().item()
                flat[i] = orig
                numeric[i] = (hi - lo) / (2.0 * eps)
            worst = max(worst, _max_relative_error(analytic[name].ravel(), numeric))
    return worst
