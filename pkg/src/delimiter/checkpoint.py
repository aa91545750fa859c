"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"DLMTCKPT"  u32 format_version
    u32 meta_len   meta JSON (canonical: sorted keys, no spaces)
    u32 n_tensors  n x (u32 name_len, utf-8 name, tensor snapshot)
    32-byte SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import tensor_from_bytes, tensor_to_bytes
from .net import DelimiterNet, NetConfig, buffer_shapes, parameter_shapes

MAGIC = b"DLMTCKPT"
FORMAT_VERSION = 1
_OPT_PREFIX = "optim."


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: NetConfig
    weights: "OrderedDict[str, np.ndarray]"
    step: int = 0
    dataset_seed: int | None = None
    model_seed: int = 0
    optimizer: dict | None = None
    format_version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)

    def model(self) -> DelimiterNet:
        net = DelimiterNet(self.config, seed=self.model_seed)
        net.load_arrays(self.weights)
        return net


def checkpoint_from_model(model: DelimiterNet, step=0, dataset_seed=None, optimizer=None, extra=None) -> Checkpoint:
    weights = OrderedDict((k, np.array(v, copy=True)) for k, v in model.state_arrays().items())
    opt = None
    if optimizer is not None:
        opt = {
            "step": int(optimizer["step"]),
            "m": [np.array(a, copy=True) for a in optimizer["m"]],
            "v": [np.array(a, copy=True) for a in optimizer["v"]],
        }
    return Checkpoint(
        config=model.config, weights=weights, step=int(step), dataset_seed=dataset_seed,
        model_seed=model.seed, optimizer=opt, extra=dict(extra or {}),
    )


def expected_shapes(config: NetConfig):
    shapes = parameter_shapes(config)
    shapes.update(buffer_shapes(config))
    return shapes


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    names = list(parameter_shapes(ckpt.config))
    meta = {
        "config": ckpt.config.to_dict(),
        "step": ckpt.step,
        "dataset_seed": ckpt.dataset_seed,
        "model_seed": ckpt.model_seed,
        "optimizer_step": None if ckpt.optimizer is None else ckpt.optimizer["step"],
        "extra": ckpt.extra,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()

    tensors = list(ckpt.weights.items())
    if ckpt.optimizer is not None:
        for name, m, v in zip(names, ckpt.optimizer["m"], ckpt.optimizer["v"]):
            tensors.append((f"{_OPT_PREFIX}m.{name}", m))
            tensors.append((f"{_OPT_PREFIX}v.{name}", v))

    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(meta_bytes)), meta_bytes]
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        encoded = name.encode()
        parts += [struct.pack("<I", len(encoded)), encoded, tensor_to_bytes(arr)]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(ckpt_or_model, path, **kwargs) -> Checkpoint:
    """Write a checkpoint; accepts a :class:`Checkpoint` or a model plus metadata."""
    ckpt = ckpt_or_model
    if isinstance(ckpt_or_model, DelimiterNet):
        ckpt = checkpoint_from_model(ckpt_or_model, **kwargs)
    Path(path).write_bytes(checkpoint_to_bytes(ckpt))
    return ckpt


def checkpoint_from_bytes(raw: bytes, expected_config: NetConfig | None = None) -> Checkpoint:
    if len(raw) < len(MAGIC) + 4 + 32:
        raise ChecksumError("checkpoint truncated")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checkpoint checksum mismatch (truncated or corrupted)")
    if body[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a de-limiter checkpoint")
    (version,) = struct.unpack_from("<I", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionError(f"checkpoint format {version}, this build reads {FORMAT_VERSION}")
    pos = len(MAGIC) + 4
    (meta_len,) = struct.unpack_from("<I", body, pos)
    pos += 4
    meta = json.loads(body[pos:pos + meta_len])
    pos += meta_len
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    tensors = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", body, pos)
        pos += 4
        name = body[pos:pos + name_len].decode()
        pos += name_len
        tensors[name], pos = tensor_from_bytes(body, pos)

    config = NetConfig.from_dict(meta["config"])
    if expected_config is not None and expected_config != config:
        _check_shapes(tensors, expected_shapes(expected_config))
    expected = expected_shapes(config)
    _check_shapes(tensors, expected)

    weights = OrderedDict((k, tensors[k]) for k in expected)
    optimizer = None
    if meta.get("optimizer_step") is not None:
        names = list(parameter_shapes(config))
        optimizer = {
            "step": meta["optimizer_step"],
            "m": [tensors[f"{_OPT_PREFIX}m.{n}"] for n in names],
            "v": [tensors[f"{_OPT_PREFIX}v.{n}"] for n in names],
        }
    return Checkpoint(
        config=config, weights=weights, step=meta["step"], dataset_seed=meta["dataset_seed"],
        model_seed=meta["model_seed"], optimizer=optimizer, format_version=version,
        extra=meta.get("extra", {}),
    )


def _check_shapes(tensors, expected):
    stored = {k: v for k, v in tensors.items() if not k.startswith(_OPT_PREFIX)}
    if set(stored) != set(expected):
        missing = sorted(set(expected) - set(stored))
        unexpected = sorted(set(stored) - set(expected))
        raise ShapeMismatchError(f"tensor names differ; missing {missing[:3]}, unexpected {unexpected[:3]}")
    for name, shape in expected.items():
        if tuple(stored[name].shape) != tuple(shape):
            raise ShapeMismatchError(f"{name}: stored {stored[name].shape}, expected {shape}")


def load_checkpoint(path, expected_config: NetConfig | None = None) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes(), expected_config)
