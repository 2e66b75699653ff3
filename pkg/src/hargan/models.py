"""The four adversarial networks and the two validation classifiers.

Recurrent family: channel trapezoids of padded 1D convolutions around a
stacked LSTM. The generator seeds a (C, L) sequence from the noise vector,
widens it through the expanding trapezoid, runs the LSTM over all L
positions, and narrows back down to C channels with a linear output. The
discriminator widens the input window, reads it with its LSTM, and scores
the final hidden state through dropout and a kernel-size-1 convolution.

Transformer family: the sequence is projected to the model width, gets the
sinusoidal position signal, and passes through a stack of encoder layers;
a kernel-size-1 convolution head with dropout maps back to channels
(generator) or to a single logit after mean-pooling over positions
(discriminator).

Checkpoints are a single file: one JSON header line (architecture tag,
config, tensor name/shape table, format version, optional metadata)
followed by the raw little-endian float64 buffers concatenated in header
order. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .datasets import DatasetProfile
from .tensor import ShapeError, Tensor, no_grad, relu, swapaxes, tanh

__all__ = [
    "RganConfig",
    "TganConfig",
    "ConvLstmClassifierConfig",
    "TransformerClassifierConfig",
    "RganGenerator",
    "RganDiscriminator",
    "TganGenerator",
    "TganDiscriminator",
    "ConvLstmClassifier",
    "TransformerClassifier",
    "CheckpointError",
    "count_params",
    "save_checkpoint",
    "load_checkpoint",
    "build_model",
    "MODEL_REGISTRY",
]

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable or incompatible checkpoint file."""


def _doubling_schedule(channels: int, stages: int = 2) -> tuple[int, ...]:
    return tuple(channels * (2 ** i) for i in range(stages + 1))


@dataclass(frozen=True)
class RganConfig:
    """Recurrent-family hyperparameters.

    conv_channels is the expanding schedule, starting at the profile channel
    count; empty means channel-doubling over two stages. The generator LSTM
    is square (hidden size = top of the schedule) so the contracting
    trapezoid mirrors the expanding one.
    """

    profile: DatasetProfile
    noise_len: int = 32
    conv_channels: tuple[int, ...] = ()
    kernel_size: int = 5
    gen_lstm_layers: int = 1
    disc_hidden_size: int = 64
    disc_lstm_layers: int = 1
    dropout: float = 0.1

    def schedule(self) -> tuple[int, ...]:
        sched = self.conv_channels or _doubling_schedule(self.profile.channels)
        if sched[0] != self.profile.channels:
            raise ShapeError(f"conv schedule {sched} must start at the profile's "
                             f"{self.profile.channels} channels")
        return tuple(sched)

    def __post_init__(self):
        if self.noise_len < 1:
            raise ShapeError(f"noise_len must be >= 1, got {self.noise_len}")
        if self.kernel_size % 2 != 1:
            raise ShapeError(f"kernel_size must be odd, got {self.kernel_size}")
        self.schedule()


@dataclass(frozen=True)
class TganConfig:
    """Transformer-family hyperparameters."""

    profile: DatasetProfile
    noise_len: int = 32
    model_dim: int = 32
    gen_heads: int = 2
    disc_heads: int = 2
    gen_layers: int = 1
    disc_layers: int = 1
    ff_dim: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        if self.noise_len < 1:
            raise ShapeError(f"noise_len must be >= 1, got {self.noise_len}")
        for heads in (self.gen_heads, self.disc_heads):
            if self.model_dim % heads != 0:
                raise ShapeError(f"model_dim {self.model_dim} not divisible by "
                                 f"{heads} heads")


@dataclass(frozen=True)
class ConvLstmClassifierConfig:
    profile: DatasetProfile
    conv_channels: tuple[int, ...] = ()
    kernel_size: int = 5
    hidden_size: int = 64
    lstm_layers: int = 1
    dropout: float = 0.1

    def schedule(self) -> tuple[int, ...]:
        return tuple(self.conv_channels or _doubling_schedule(self.profile.channels))


@dataclass(frozen=True)
class TransformerClassifierConfig:
    profile: DatasetProfile
    model_dim: int = 32
    heads: int = 2
    layers: int = 1
    ff_dim: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ShapeError(f"model_dim {self.model_dim} not divisible by "
                             f"{self.heads} heads")


def _config_to_dict(cfg) -> dict:
    out = {}
    for key, value in vars(cfg).items():
        if isinstance(value, DatasetProfile):
            out[key] = value.to_dict()
        elif isinstance(value, tuple):
            out[key] = list(value)
        else:
            out[key] = value
    return out


def _config_from_dict(cls, d: dict):
    kwargs = dict(d)
    kwargs["profile"] = DatasetProfile.from_dict(kwargs["profile"])
    for key, value in kwargs.items():
        if isinstance(value, list):
            kwargs[key] = tuple(value)
    return cls(**kwargs)


class _Model:
    """Shared parameter bookkeeping: named layers registered in build order."""

    arch = "?"

    def __init__(self, config):
        self.config = config
        self._layers: list[tuple[str, object]] = []

    def _register(self, name: str, layer):
        self._layers.append((name, layer))
        return layer

    def param_items(self) -> list[tuple[str, Tensor]]:
        out = []
        for lname, layer in self._layers:
            out.extend((f"{lname}.{pname}", t) for pname, t in layer.params())
        return out

    def param_tensors(self) -> list[Tensor]:
        return [t for _, t in self.param_items()]


def count_params(model_or_items) -> int:
    items = model_or_items.param_items() if hasattr(model_or_items, "param_items") \
        else list(model_or_items)
    return sum(t.data.size for _, t in items)


def _check_window_batch(x: Tensor, profile: DatasetProfile, who: str) -> Tensor:
    if x.ndim == 2:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 3 or x.shape[1:] != (profile.channels, profile.window_len):
        raise ShapeError(f"{who} expects windows of shape "
                         f"({profile.channels}, {profile.window_len}), got {x.shape}")
    return x


class RganGenerator(_Model):
    arch = "rgan_generator"

    def __init__(self, config: RganConfig, rng: np.random.Generator):
        super().__init__(config)
        profile = config.profile
        sched = config.schedule()
        c, length, k = profile.channels, profile.window_len, config.kernel_size
        self.seed_fc = self._register("seed_fc", nn.Dense(config.noise_len, c * length, rng))
        self.expand = [self._register(f"expand{i}", nn.Conv1d(sched[i], sched[i + 1], k, rng))
                       for i in range(len(sched) - 1)]
        top = sched[-1]
        self.lstm = self._register("lstm", nn.Lstm(top, top, config.gen_lstm_layers, rng))
        contract = tuple(reversed(sched))
        self.contract = [self._register(f"contract{i}",
                                        nn.Conv1d(contract[i], contract[i + 1], k, rng))
                         for i in range(len(contract) - 1)]

    def forward(self, z: Tensor, train: bool = False, rng=None) -> Tensor:
        cfg = self.config
        squeeze = z.ndim == 1
        if squeeze:
            z = z.reshape((1,) + z.shape)
        if z.shape[1] != cfg.noise_len:
            raise ShapeError(f"generator expects noise of length {cfg.noise_len}, "
                             f"got {z.shape}")
        c, length = cfg.profile.channels, cfg.profile.window_len
        h = self.seed_fc(z).reshape((z.shape[0], c, length))
        for conv in self.expand:
            h = tanh(conv(h))
        h = swapaxes(h, 1, 2)
        h, _ = self.lstm(h)
        h = swapaxes(h, 1, 2)
        for conv in self.contract[:-1]:
            h = tanh(conv(h))
        out = self.contract[-1](h)  # linear output on z-scored targets
        return out.reshape(out.shape[1:]) if squeeze else out

    def generate(self, n: int, rng: np.random.Generator) -> np.ndarray:
        with no_grad():
            z = Tensor(rng.standard_normal((n, self.config.noise_len)))
            return self.forward(z, train=False).data


class RganDiscriminator(_Model):
    arch = "rgan_discriminator"

    def __init__(self, config: RganConfig, rng: np.random.Generator):
        super().__init__(config)
        sched = config.schedule()
        k = config.kernel_size
        self.expand = [self._register(f"expand{i}", nn.Conv1d(sched[i], sched[i + 1], k, rng))
                       for i in range(len(sched) - 1)]
        self.lstm = self._register("lstm", nn.Lstm(sched[-1], config.disc_hidden_size,
                                                   config.disc_lstm_layers, rng))
        self.head = self._register("head", nn.Conv1d(config.disc_hidden_size, 1, 1, rng))

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        squeeze = x.ndim == 2
        x = _check_window_batch(x, self.config.profile, "rgan discriminator")
        h = x
        for conv in self.expand:
            h = nn.leaky_relu(conv(h))
        h = swapaxes(h, 1, 2)
        _, last = self.lstm(h)
        last = nn.dropout(last, self.config.dropout, train, rng)
        logit = self.head(last.reshape(last.shape + (1,)))  # 1x1 conv on length-1 sequence
        logit = logit.reshape((x.shape[0],))
        return logit.reshape(()) if squeeze else logit


class TganGenerator(_Model):
    arch = "tgan_generator"

    def __init__(self, config: TganConfig, rng: np.random.Generator):
        super().__init__(config)
        profile = config.profile
        c, length, d = profile.channels, profile.window_len, config.model_dim
        self.seed_fc = self._register("seed_fc", nn.Dense(config.noise_len, c * length, rng))
        self.in_proj = self._register("in_proj", nn.Dense(c, d, rng))
        self.encoders = [self._register(f"enc{i}",
                                        nn.EncoderLayer(d, config.gen_heads, config.ff_dim, rng))
                         for i in range(config.gen_layers)]
        self.head = self._register("head", nn.Dense(d, c, rng))
        self.pe = Tensor(nn.positional_encoding(length, d))

    def forward(self, z: Tensor, train: bool = False, rng=None) -> Tensor:
        cfg = self.config
        squeeze = z.ndim == 1
        if squeeze:
            z = z.reshape((1,) + z.shape)
        if z.shape[1] != cfg.noise_len:
            raise ShapeError(f"generator expects noise of length {cfg.noise_len}, "
                             f"got {z.shape}")
        c, length = cfg.profile.channels, cfg.profile.window_len
        h = self.seed_fc(z).reshape((z.shape[0], c, length))
        h = swapaxes(h, 1, 2)                # (batch, L, C)
        h = self.in_proj(h) + self.pe
        for enc in self.encoders:
            h = enc(h)
        h = nn.dropout(h, cfg.dropout, train, rng)
        out = swapaxes(self.head(h), 1, 2)   # (batch, C, L)
        return out.reshape(out.shape[1:]) if squeeze else out

    def generate(self, n: int, rng: np.random.Generator) -> np.ndarray:
        with no_grad():
            z = Tensor(rng.standard_normal((n, self.config.noise_len)))
            return self.forward(z, train=False).data


class TganDiscriminator(_Model):
    arch = "tgan_discriminator"

    def __init__(self, config: TganConfig, rng: np.random.Generator):
        super().__init__(config)
        profile = config.profile
        d = config.model_dim
        self.in_proj = self._register("in_proj", nn.Dense(profile.channels, d, rng))
        self.encoders = [self._register(f"enc{i}",
                                        nn.EncoderLayer(d, config.disc_heads, config.ff_dim, rng))
                         for i in range(config.disc_layers)]
        self.head = self._register("head", nn.Dense(d, 1, rng))
        self.pe = Tensor(nn.positional_encoding(profile.window_len, d))

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        squeeze = x.ndim == 2
        x = _check_window_batch(x, self.config.profile, "tgan discriminator")
        h = self.in_proj(swapaxes(x, 1, 2)) + self.pe
        for enc in self.encoders:
            h = enc(h)
        pooled = h.mean(axis=1)              # over positions
        pooled = nn.dropout(pooled, self.config.dropout, train, rng)
        logit = self.head(pooled).reshape((x.shape[0],))
        return logit.reshape(()) if squeeze else logit


class ConvLstmClassifier(_Model):
    arch = "convlstm_classifier"

    def __init__(self, config: ConvLstmClassifierConfig, rng: np.random.Generator):
        super().__init__(config)
        sched = config.schedule()
        k = config.kernel_size
        self.convs = [self._register(f"conv{i}", nn.Conv1d(sched[i], sched[i + 1], k, rng))
                      for i in range(len(sched) - 1)]
        self.lstm = self._register("lstm", nn.Lstm(sched[-1], config.hidden_size,
                                                   config.lstm_layers, rng))
        self.head = self._register("head", nn.Dense(config.hidden_size,
                                                    config.profile.num_classes, rng))

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        squeeze = x.ndim == 2
        x = _check_window_batch(x, self.config.profile, "classifier")
        h = x
        for conv in self.convs:
            h = relu(conv(h))
        _, last = self.lstm(swapaxes(h, 1, 2))
        last = nn.dropout(last, self.config.dropout, train, rng)
        logits = self.head(last)
        return logits.reshape(logits.shape[1:]) if squeeze else logits

    def predict(self, windows: np.ndarray) -> np.ndarray:
        with no_grad():
            logits = self.forward(Tensor(windows), train=False)
        return np.argmax(np.atleast_2d(logits.data), axis=1)


class TransformerClassifier(_Model):
    arch = "transformer_classifier"

    def __init__(self, config: TransformerClassifierConfig, rng: np.random.Generator):
        super().__init__(config)
        profile = config.profile
        d = config.model_dim
        self.in_proj = self._register("in_proj", nn.Dense(profile.channels, d, rng))
        self.encoders = [self._register(f"enc{i}",
                                        nn.EncoderLayer(d, config.heads, config.ff_dim, rng))
                         for i in range(config.layers)]
        self.head = self._register("head", nn.Dense(d, profile.num_classes, rng))
        self.pe = Tensor(nn.positional_encoding(profile.window_len, d))

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        squeeze = x.ndim == 2
        x = _check_window_batch(x, self.config.profile, "classifier")
        h = self.in_proj(swapaxes(x, 1, 2)) + self.pe
        for enc in self.encoders:
            h = enc(h)
        pooled = h.mean(axis=1)
        pooled = nn.dropout(pooled, self.config.dropout, train, rng)
        logits = self.head(pooled)
        return logits.reshape(logits.shape[1:]) if squeeze else logits

    def predict(self, windows: np.ndarray) -> np.ndarray:
        with no_grad():
            logits = self.forward(Tensor(windows), train=False)
        return np.argmax(np.atleast_2d(logits.data), axis=1)


MODEL_REGISTRY = {
    RganGenerator.arch: (RganGenerator, RganConfig),
    RganDiscriminator.arch: (RganDiscriminator, RganConfig),
    TganGenerator.arch: (TganGenerator, TganConfig),
    TganDiscriminator.arch: (TganDiscriminator, TganConfig),
    ConvLstmClassifier.arch: (ConvLstmClassifier, ConvLstmClassifierConfig),
    TransformerClassifier.arch: (TransformerClassifier, TransformerClassifierConfig),
}

CLASSIFIER_ARCHS = {
    "deepconvlstm": ConvLstmClassifier,
    "transformer": TransformerClassifier,
}


def build_model(arch: str, config_dict: dict, seed: int = 0):
    if arch not in MODEL_REGISTRY:
        raise CheckpointError(f"unknown architecture tag {arch!r}")
    cls, cfg_cls = MODEL_REGISTRY[arch]
    from .tensor import make_rng
    return cls(_config_from_dict(cfg_cls, config_dict), make_rng(seed))


def save_checkpoint(model, path: str | os.PathLike, meta: dict | None = None) -> None:
    items = model.param_items()
    header = {
        "format_version": CHECKPOINT_VERSION,
        "arch": model.arch,
        "config": _config_to_dict(model.config),
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in items],
        "meta": meta or {},
    }
    payload = json.dumps(header).encode() + b"\n"
    payload += b"".join(t.data.astype("<f8").tobytes() for _, t in items)
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike):
    """Rebuild the model from its config and restore tensors bit-exactly.
    Returns (model, meta)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as err:
        raise CheckpointError(f"{path}: unreadable header ({err})") from None
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version "
                              f"{header.get('format_version')}, expected {CHECKPOINT_VERSION}")
    model = build_model(header["arch"], header["config"])
    items = model.param_items()
    if [n for n, _ in items] != [t["name"] for t in header["tensors"]]:
        raise CheckpointError(f"{path}: tensor table does not match architecture")
    offset = 0
    for (name, tensor), entry in zip(items, header["tensors"]):
        shape = tuple(entry["shape"])
        if tensor.shape != shape:
            raise CheckpointError(f"{path}: {name} has shape {shape}, "
                                  f"expected {tensor.shape}")
        n_bytes = int(np.prod(shape)) * 8 if shape else 8
        chunk = blob[offset:offset + n_bytes]
        if len(chunk) != n_bytes:
            raise CheckpointError(f"{path}: truncated tensor data at {name}")
        tensor.data = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += n_bytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return model, header.get("meta", {})
