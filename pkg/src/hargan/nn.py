"""Differentiable building blocks for the sensor-window networks.

Every block accepts either a single sample or a batch (extra leading
dimension) and is a pure function of its parameters: no hidden state, and
any randomness (dropout) comes from a caller-supplied generator.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import (
    ShapeError,
    Tensor,
    _expit,
    exp,
    from_op,
    relu,
    stack,
    swapaxes,
    tmax,
    tmean,
    tsum,
)

__all__ = [
    "Dense",
    "Conv1d",
    "Lstm",
    "LayerNorm",
    "FeedForward",
    "MultiHeadAttention",
    "EncoderLayer",
    "attention",
    "softmax",
    "positional_encoding",
    "dropout",
    "leaky_relu",
    "bce_with_logits",
    "cross_entropy",
    "glorot_uniform",
]


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - tmax(x, axis=axis, keepdims=True)
    ex = exp(shifted)
    return ex / tsum(ex, axis=axis, keepdims=True)


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    return relu(x) - alpha * relu(-x)


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Sinusoidal position signal: sin on even columns, cos on odd ones."""
    if length < 1 or dim < 1:
        raise ShapeError(f"positional encoding needs positive sizes, got {length}x{dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * np.floor(i / 2.0)) / dim)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate); identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs a generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(mask)


class Dense:
    """Position-wise affine map; the kernel-size-1 1D convolution."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.w = Tensor(glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 1:
            return (x.reshape(1, -1) @ self.w + self.b).reshape(self.b.shape)
        return x @ self.w + self.b

    def params(self):
        return [("w", self.w), ("b", self.b)]


class Conv1d:
    """1D cross-correlation with zero padding; length-preserving when
    padding = (k-1)/2 and k is odd."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, padding: int | None = None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.padding = (kernel_size - 1) // 2 if padding is None else padding
        fan_in = in_channels * kernel_size
        fan_out = out_channels * kernel_size
        self.w = Tensor(glorot_uniform(rng, (out_channels, in_channels, kernel_size),
                                       fan_in, fan_out), requires_grad=True)
        self.b = Tensor(np.zeros(out_channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape((1,) + x.shape)
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(f"conv1d expects (batch, {self.in_channels}, length), "
                             f"got {x.shape}")
        out = _conv1d_op(x, self.w, self.b, self.padding)
        return out.reshape(out.shape[1:]) if squeeze else out

    def params(self):
        return [("w", self.w), ("b", self.b)]


def _conv1d_op(x: Tensor, w: Tensor, b: Tensor, padding: int) -> Tensor:
    batch, c_in, length = x.shape
    c_out, _, k = w.shape
    l_out = length + 2 * padding - k + 1
    if l_out < 1:
        raise ShapeError(f"conv1d kernel {k} with padding {padding} does not fit "
                         f"length {length}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    # columns: (batch, l_out, c_in * k) so the kernel application is one matmul
    cols = sliding_window_view(xp, k, axis=2)          # (batch, c_in, l_out, k)
    cols = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(batch, l_out, c_in * k)
    w2 = w.data.reshape(c_out, c_in * k)
    out = np.matmul(cols, w2.T) + b.data               # (batch, l_out, c_out)
    out = out.transpose(0, 2, 1)

    def backward(g):
        g_blc = g.transpose(0, 2, 1)                   # (batch, l_out, c_out)
        dw = np.tensordot(g_blc, cols, axes=([0, 1], [0, 1])).reshape(w.shape)
        db = g.sum(axis=(0, 2))
        dcols = np.matmul(g_blc, w2)                   # (batch, l_out, c_in * k)
        dcols = dcols.reshape(batch, l_out, c_in, k).transpose(0, 2, 3, 1)
        dxp = np.zeros((batch, c_in, length + 2 * padding))
        for j in range(k):
            dxp[:, :, j:j + l_out] += dcols[:, :, j, :]
        dx = dxp[:, :, padding:padding + length] if padding else dxp
        return dx, dw, db

    return from_op(np.ascontiguousarray(out), (x, w, b), backward)


def _lstm_cell(x_t: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor,
               hidden: int) -> Tensor:
    """One recurrence step; returns hstack(h_new, c_new) of shape (batch, 2*hidden).

    Gate layout in `w` (in+hidden, 4*hidden) and `b`: input, forget, candidate,
    output. Sigmoid on i/f/o, tanh on the candidate.
    """
    xh = np.concatenate([x_t.data, h.data], axis=1)
    z = xh @ w.data + b.data
    i = _expit(z[:, :hidden])
    f = _expit(z[:, hidden:2 * hidden])
    g_ = np.tanh(z[:, 2 * hidden:3 * hidden])
    o = _expit(z[:, 3 * hidden:])
    c_new = f * c.data + i * g_
    tc = np.tanh(c_new)
    h_new = o * tc
    out = np.concatenate([h_new, c_new], axis=1)
    c_prev = c.data

    def backward(grad):
        dh = grad[:, :hidden]
        dc = grad[:, hidden:].copy()
        do = dh * tc
        dc += dh * o * (1.0 - tc * tc)
        di = dc * g_
        df = dc * c_prev
        dg = dc * i
        dc_prev = dc * f
        dz = np.concatenate([di * i * (1.0 - i),
                             df * f * (1.0 - f),
                             dg * (1.0 - g_ * g_),
                             do * o * (1.0 - o)], axis=1)
        dxh = dz @ w.data.T
        dw = xh.T @ dz
        db = dz.sum(axis=0)
        in_dim = x_t.shape[1]
        return dxh[:, :in_dim], dxh[:, in_dim:], dc_prev, dw, db

    return from_op(out, (x_t, h, c, w, b), backward)


class Lstm:
    """Stacked LSTM over the time axis; zero initial states."""

    def __init__(self, input_size: int, hidden_size: int, num_layers: int,
                 rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.weights = []
        self.biases = []
        bound = 1.0 / math.sqrt(hidden_size)
        for layer in range(num_layers):
            in_dim = input_size if layer == 0 else hidden_size
            w = rng.uniform(-bound, bound, size=(in_dim + hidden_size, 4 * hidden_size))
            b = np.zeros(4 * hidden_size)
            b[hidden_size:2 * hidden_size] = 1.0  # forget gate open at init
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(b, requires_grad=True))

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """x: (batch, length, input_size) or (length, input_size).
        Returns (outputs (batch, length, hidden), last hidden (batch, hidden))."""
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape((1,) + x.shape)
        if x.shape[2] != self.input_size:
            raise ShapeError(f"lstm expects feature size {self.input_size}, "
                             f"got input of shape {x.shape}")
        batch, length, _ = x.shape
        hid = self.hidden_size
        steps = [x[:, t, :] for t in range(length)]
        last_h = None
        for layer in range(self.num_layers):
            w, b = self.weights[layer], self.biases[layer]
            h = Tensor(np.zeros((batch, hid)))
            c = Tensor(np.zeros((batch, hid)))
            outs = []
            for t in range(length):
                hc = _lstm_cell(steps[t], h, c, w, b, hid)
                h = hc[:, :hid]
                c = hc[:, hid:]
                outs.append(h)
            steps = outs
            last_h = h
        outputs = stack(steps, axis=1)
        if squeeze:
            return outputs.reshape(outputs.shape[1:]), last_h.reshape(last_h.shape[1:])
        return outputs, last_h

    def params(self):
        out = []
        for layer in range(self.num_layers):
            out.append((f"l{layer}.w", self.weights[layer]))
            out.append((f"l{layer}.b", self.biases[layer]))
        return out


def attention(q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
    """Scaled dot-product attention over the last two axes.

    q: (..., L_q, d_k), k: (..., L_k, d_k), v: (..., L_k, d_v). Scores are
    divided by sqrt(d_k) and softmaxed over the keys, so every output row is
    a convex combination of value rows.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: q/k key dims disagree ({q.shape} vs {k.shape})")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: k/v lengths disagree ({k.shape} vs {v.shape})")
    d_k = q.shape[-1]
    scores = (q @ swapaxes(k, -1, -2)) * (1.0 / math.sqrt(d_k))
    weights = softmax(scores, axis=-1)
    out = weights @ v
    return (out, weights) if return_weights else out


class MultiHeadAttention:
    """h parallel attention heads with per-head slices of width d/h.

    Q, K, V come from kernel-size-1 convolutions of the input (realized as
    position-wise affine maps), and a final projection merges the heads.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise ShapeError(f"model dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.q_proj = Dense(dim, dim, rng)
        self.k_proj = Dense(dim, dim, rng)
        self.v_proj = Dense(dim, dim, rng)
        self.out_proj = Dense(dim, dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        *lead, length, _ = x.shape
        head_dim = self.dim // self.heads
        x = x.reshape(tuple(lead) + (length, self.heads, head_dim))
        return swapaxes(x, -3, -2)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise ShapeError(f"multi-head attention expects dim {self.dim}, got {x.shape}")
        q = self._split(self.q_proj(x))
        k = self._split(self.k_proj(x))
        v = self._split(self.v_proj(x))
        heads = attention(q, k, v)
        merged = swapaxes(heads, -3, -2)
        merged = merged.reshape(x.shape)
        return self.out_proj(merged)

    def params(self):
        out = []
        for tag, layer in (("q", self.q_proj), ("k", self.k_proj),
                           ("v", self.v_proj), ("out", self.out_proj)):
            out.extend((f"{tag}.{n}", t) for n, t in layer.params())
        return out


class LayerNorm:
    """Normalize over the last axis to zero mean / unit variance, then scale and shift."""

    EPS = 1e-5

    def __init__(self, dim: int):
        if dim < 2:
            raise ShapeError(f"layer norm over a single feature is degenerate (dim={dim})")
        self.dim = dim
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise ShapeError(f"layer norm expects last dim {self.dim}, got {x.shape}")
        mu = tmean(x, axis=-1, keepdims=True)
        centered = x - mu
        var = tmean(centered * centered, axis=-1, keepdims=True)
        inv = (var + self.EPS) ** -0.5
        return centered * inv * self.gain + self.bias

    def params(self):
        return [("gain", self.gain), ("bias", self.bias)]


class FeedForward:
    """dim -> hidden -> dim with a ReLU in between; shape preserved."""

    def __init__(self, dim: int, hidden_dim: int, rng: np.random.Generator):
        self.inner = Dense(dim, hidden_dim, rng)
        self.outer = Dense(hidden_dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(relu(self.inner(x)))

    def params(self):
        out = [(f"inner.{n}", t) for n, t in self.inner.params()]
        out += [(f"outer.{n}", t) for n, t in self.outer.params()]
        return out


class EncoderLayer:
    """Self-attention and feedforward, each followed by a skip connection and
    layer normalization; input and output shapes match so layers stack."""

    def __init__(self, dim: int, heads: int, ff_dim: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.ff = FeedForward(dim, ff_dim, rng)
        self.norm2 = LayerNorm(dim)

    def __call__(self, x: Tensor) -> Tensor:
        a = self.norm1(x + self.attn(x))
        return self.norm2(a + self.ff(a))

    def params(self):
        out = [(f"attn.{n}", t) for n, t in self.attn.params()]
        out += [(f"norm1.{n}", t) for n, t in self.norm1.params()]
        out += [(f"ff.{n}", t) for n, t in self.ff.params()]
        out += [(f"norm2.{n}", t) for n, t in self.norm2.params()]
        return out


# -- losses ---------------------------------------------------------------


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on raw logits, stable at extreme values."""
    t = np.broadcast_to(np.asarray(targets, dtype=np.float64), logits.shape)
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError("bce_with_logits targets must be 0 or 1")
    x = logits.data
    elem = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    n = max(x.size, 1)
    out = np.asarray(elem.sum() / n)

    def backward(g):
        return (g * (_expit(x) - t) / n,)

    return from_op(out, (logits,), backward)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean softmax cross-entropy. logits: (n_classes,) or (batch, n_classes);
    targets: class index or (batch,) of indices."""
    squeeze = logits.ndim == 1
    x = logits.data[None, :] if squeeze else logits.data
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if x.ndim != 2 or t.shape != (x.shape[0],):
        raise ShapeError(f"cross_entropy got logits {logits.shape} and targets {t.shape}")
    n, n_classes = x.shape
    if np.any(t < 0) or np.any(t >= n_classes):
        raise ValueError(f"cross_entropy target out of range [0, {n_classes})")
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    picked = x[np.arange(n), t]
    out = np.asarray((lse - picked).sum() / n)

    def backward(g):
        soft = np.exp(x - m)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(n), t] -= 1.0
        grad = g * soft / n
        return (grad[0] if squeeze else grad,)

    return from_op(out, (logits,), backward)
