"""Conv-TasNet-style de-limiter with synthesis, masking and SGI heads."""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, asdict, replace

import numpy as np

from .autodiff import (
    RunningStats,
    ShapeError,
    Tensor,
    conv1d,
    conv1d_transposed,
    normalize,
    parameter,
    prelu,
    relu,
    sigmoid,
)

HEADS = ("synthesis", "masking", "sgi")
NORMS = ("gln", "ln", "bn", "fgln")


class ConfigError(ValueError):
    """Invalid network configuration."""


@dataclass(frozen=True)
class NetConfig:
    N: int = 128
    L: int = 32
    B: int = 32
    H: int = 64
    P: int = 3
    X: int = 2
    R: int = 1
    norm: str = "gln"
    head: str = "sgi"
    sample_rate: int = 44100
    channels: int = 2

    def __post_init__(self):
        for name in ("N", "L", "B", "H", "P", "X", "R", "sample_rate"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.L % 2:
            raise ConfigError("encoder kernel L must be even (stride is L/2)")
        if self.channels not in (1, 2):
            raise ConfigError("channels must be 1 or 2")
        if self.norm not in NORMS:
            raise ConfigError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got {self.head!r}")

    @property
    def stride(self) -> int:
        return self.L // 2

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d) -> "NetConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def with_(self, **changes) -> "NetConfig":
        return replace(self, **changes)


def encoder_padding(samples: int, L: int):
    """(left, right) zero padding giving exactly ceil(samples / (L/2)) frames."""
    stride = L // 2
    extra = (-samples) % stride
    left = stride // 2
    return left, stride - left + extra


def encoder_frames(samples: int, L: int) -> int:
    stride = L // 2
    return -(-samples // stride)


def _same_padding(kernel, dilation):
    total = dilation * (kernel - 1)
    return total // 2, total - total // 2


def receptive_field_samples(config: NetConfig) -> int:
    """Input span, in samples, that one encoder frame's separator output depends on."""
    frames = config.R * (config.P - 1) * (2**config.X - 1)
    return config.L + config.stride * frames


def receptive_field(config: NetConfig) -> float:
    """Receptive field in milliseconds at ``config.sample_rate``."""
    return 1000.0 * receptive_field_samples(config) / config.sample_rate


def parameter_shapes(config: NetConfig) -> "OrderedDict[str, tuple]":
    """Name and shape of every learnable tensor, in construction order."""
    c, n, l, b, h, p = config.channels, config.N, config.L, config.B, config.H, config.P
    shapes = OrderedDict()
    shapes["encoder.weight"] = (n, c, l)
    shapes["encoder.bias"] = (n,)
    shapes["bottleneck.weight"] = (b, n, 1)
    shapes["bottleneck.bias"] = (b,)
    for r in range(config.R):
        for x in range(config.X):
            pre = f"blocks.{r}.{x}."
            shapes[pre + "pw_in.weight"] = (h, b, 1)
            shapes[pre + "pw_in.bias"] = (h,)
            shapes[pre + "prelu1.slope"] = (1,)
            shapes[pre + "norm1.gain"] = (h,)
            shapes[pre + "norm1.bias"] = (h,)
            shapes[pre + "dw.weight"] = (h, 1, p)
            shapes[pre + "dw.bias"] = (h,)
            shapes[pre + "prelu2.slope"] = (1,)
            shapes[pre + "norm2.gain"] = (h,)
            shapes[pre + "norm2.bias"] = (h,)
            shapes[pre + "res.weight"] = (b, h, 1)
            shapes[pre + "res.bias"] = (b,)
            shapes[pre + "skip.weight"] = (b, h, 1)
            shapes[pre + "skip.bias"] = (b,)
    shapes["head.prelu.slope"] = (1,)
    shapes["head.proj.weight"] = (n, b, 1)
    shapes["head.proj.bias"] = (n,)
    shapes["decoder.weight"] = (n, c, l)
    shapes["decoder.bias"] = (c,)
    return shapes


def buffer_shapes(config: NetConfig) -> "OrderedDict[str, tuple]":
    """Batch-norm running statistics (empty for the other norms)."""
    shapes = OrderedDict()
    if config.norm != "bn":
        return shapes
    for r in range(config.R):
        for x in range(config.X):
            for k in (1, 2):
                pre = f"blocks.{r}.{x}.norm{k}."
                shapes[pre + "running_mean"] = (config.H,)
                shapes[pre + "running_var"] = (config.H,)
    return shapes


def _fan_in(name, shape, config):
    if name == "decoder.weight":
        return shape[0] * shape[2] // config.stride
    if name.endswith("bias"):
        return None
    return shape[1] * shape[2]


def _initial_values(config: NetConfig, seed: int) -> "OrderedDict[str, np.ndarray]":
    rng = np.random.default_rng(seed)
    values = OrderedDict()
    fan = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith("slope"):
            values[name] = np.full(shape, 0.25)
        elif ".norm" in name and name.endswith("gain"):
            values[name] = np.ones(shape)
        elif ".norm" in name and name.endswith("bias"):
            values[name] = np.zeros(shape)
        else:
            f = _fan_in(name, shape, config)
            if f is None:
                f = fan[name.rsplit(".", 1)[0]]
            else:
                fan[name.rsplit(".", 1)[0]] = f
            bound = 1.0 / np.sqrt(f)
            values[name] = rng.uniform(-bound, bound, size=shape)
    return values


class DelimiterNet:
    """Encoder, temporal-convolution separator, head and decoder.

    ``params`` maps names to leaf Tensors; ``running`` holds batch-norm
    statistics keyed by the norm layer's name prefix.
    """

    def __init__(self, config: NetConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.params = OrderedDict(
            (name, parameter(v, name=name)) for name, v in _initial_values(config, seed).items()
        )
        self.running = {}
        if config.norm == "bn":
            for r in range(config.R):
                for x in range(config.X):
                    for k in (1, 2):
                        self.running[f"blocks.{r}.{x}.norm{k}"] = RunningStats(config.H)

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict((k, v.data) for k, v in self.params.items())
        for prefix, stats in self.running.items():
            out[prefix + ".running_mean"] = stats.mean
            out[prefix + ".running_var"] = stats.var
        return out

    def load_arrays(self, arrays):
        for name, p in self.params.items():
            p.data = np.array(arrays[name], dtype=np.float64)
        for prefix, stats in self.running.items():
            stats.mean = np.array(arrays[prefix + ".running_mean"], dtype=np.float64)
            stats.var = np.array(arrays[prefix + ".running_var"], dtype=np.float64)

    def _norm(self, prefix, x, training):
        p = self.params
        return normalize(
            self.config.norm, x, p[prefix + ".gain"], p[prefix + ".bias"],
            running=self.running.get(prefix), training=training,
        )

    def separator(self, enc: Tensor, training: bool) -> Tensor:
        cfg, p = self.config, self.params
        h = conv1d(enc, p["bottleneck.weight"], p["bottleneck.bias"])
        skips = None
        for r in range(cfg.R):
            for x in range(cfg.X):
                pre = f"blocks.{r}.{x}."
                dilation = 2**x
                y = conv1d(h, p[pre + "pw_in.weight"], p[pre + "pw_in.bias"])
                y = self._norm(pre + "norm1", prelu(y, p[pre + "prelu1.slope"]), training)
                y = conv1d(
                    y, p[pre + "dw.weight"], p[pre + "dw.bias"], dilation=dilation,
                    padding=_same_padding(cfg.P, dilation), groups=cfg.H,
                )
                y = self._norm(pre + "norm2", prelu(y, p[pre + "prelu2.slope"]), training)
                h = h + conv1d(y, p[pre + "res.weight"], p[pre + "res.bias"])
                s = conv1d(y, p[pre + "skip.weight"], p[pre + "skip.bias"])
                skips = s if skips is None else skips + s
        feats = prelu(skips, p["head.prelu.slope"])
        return conv1d(feats, p["head.proj.weight"], p["head.proj.bias"])

    def forward(self, x, training: bool = False):
        """Run the network on ``x`` shaped ``[C, T]`` or ``[B, C, T]``.

        Returns ``(y, aux)``; ``y`` has the input's time length and ``aux``
        holds the SGI gains under ``"gains"`` (SGI head only).
        """
        cfg, p = self.config, self.params
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        squeeze = x.ndim == 2
        if squeeze:
            x = Tensor(x.data[np.newaxis], parents=(x,), backward_fn=lambda g: (g[0],))
        if x.ndim != 3 or x.shape[1] != cfg.channels:
            raise ShapeError(f"expected {cfg.channels} input channels, got shape {x.shape}")
        samples = x.shape[2]
        if samples < cfg.L:
            raise ShapeError(f"input of {samples} samples is shorter than the encoder kernel {cfg.L}")

        pad_l, pad_r = encoder_padding(samples, cfg.L)
        enc = relu(conv1d(x, p["encoder.weight"], p["encoder.bias"], stride=cfg.stride, padding=(pad_l, pad_r)))
        feats = self.separator(enc, training)

        if cfg.head == "masking":
            feats = sigmoid(feats) * enc
        decoded = conv1d_transposed(feats, p["decoder.weight"], p["decoder.bias"], stride=cfg.stride)
        decoded = decoded.crop(pad_l, pad_l + samples)

        aux = {}
        if cfg.head == "sgi":
            gains = sigmoid(decoded)
            aux["gains"] = gains
            y = gains * x
        else:
            y = decoded
        if squeeze:
            y = Tensor(y.data[0], parents=(y,), backward_fn=lambda g: (g[np.newaxis],))
            if "gains" in aux:
                aux["gains"] = Tensor(gains.data[0], parents=(gains,), backward_fn=lambda g: (g[np.newaxis],))
        return y, aux

    __call__ = forward


def build_model(config: NetConfig, seed: int = 0) -> DelimiterNet:
    if not isinstance(config, NetConfig):
        config = NetConfig.from_dict(dict(config))
    return DelimiterNet(config, seed)
