"""Training loop and inference pipeline for the de-limiter networks."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer
from .autodiff import adam_init, adam_step, neg_si_sdr
from .checkpoint import Checkpoint, checkpoint_from_model, save_checkpoint
from .dynamics import parallel_mix
from .loudness import loudness_normalize
from .metrics import si_sdr
from .net import ConfigError, DelimiterNet, NetConfig, build_model, receptive_field_samples

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainHyper:
    lr: float = 3e-3
    batch: int = 8
    epochs: int = 10
    seed: int = 0
    val_split: float = 0.1
    clip_norm: float | None = 5.0
    crop_seconds: float | None = None
    dataset_seed: int | None = None

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list = field(default_factory=list)
    model: DelimiterNet | None = None
    best_val_si_sdr: float = -math.inf
    initial_val_si_sdr: float = -math.inf


def evaluate_pairs(model: DelimiterNet, pairs, batch=8) -> float:
    """Mean SI-SDR (dB) of the model output against the target over ``pairs``."""
    scores = []
    for start in range(0, len(pairs), batch):
        chunk = pairs[start:start + batch]
        x = np.stack([p[0] for p in chunk])
        y, _ = model.forward(x, training=False)
        scores += [si_sdr(est, tgt) for est, (_, tgt) in zip(y.data, chunk)]
    return float(np.mean(scores))


def baseline_si_sdr(pairs) -> float:
    return float(np.mean([si_sdr(lim, tgt) for lim, tgt in pairs]))


def split_pairs(pairs, val_split, seed):
    order = np.random.default_rng([seed, 0x5EED]).permutation(len(pairs))
    n_val = int(round(len(pairs) * val_split)) if len(pairs) > 1 else 0
    n_val = min(max(n_val, 1 if val_split > 0 and len(pairs) > 1 else 0), len(pairs) - 1)
    val = [pairs[i] for i in sorted(order[:n_val])]
    train = [pairs[i] for i in sorted(order[n_val:])]
    return train, val


def _crop(batch_x, batch_y, rng, crop):
    if crop is None or crop >= batch_x.shape[-1]:
        return batch_x, batch_y
    xs, ys = [], []
    for x, y in zip(batch_x, batch_y):
        start = int(rng.integers(x.shape[-1] - crop + 1))
        xs.append(x[:, start:start + crop])
        ys.append(y[:, start:start + crop])
    return np.stack(xs), np.stack(ys)


def train(config: NetConfig, dataset, hyper: TrainHyper = TrainHyper(), out_dir=None, model_seed=None,
          validation=None) -> TrainResult:
    """Minimise negative SI-SDR of (limited -> original) pairs with Adam.

    ``dataset`` is a sequence of ``(limited, target)`` arrays shaped
    ``[C, T]``. A validation subset is split off with ``hyper.val_split``
    unless ``validation`` pairs are given. The best-validation weights are
    kept; with ``out_dir`` they are written to ``best.ckpt`` and the per-epoch
    log to ``train_log.jsonl``.
    """
    pairs = [(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)) for a, b in dataset]
    if not pairs:
        raise TrainingError("empty dataset")
    if validation is None:
        train_pairs, val_pairs = split_pairs(pairs, hyper.val_split, hyper.seed)
    else:
        train_pairs, val_pairs = pairs, list(validation)
    if not train_pairs:
        raise TrainingError("no training pairs left after the validation split")
    if pairs[0][0].shape[0] != config.channels:
        raise ConfigError(f"data has {pairs[0][0].shape[0]} channels, config expects {config.channels}")

    model = build_model(config, seed=hyper.seed if model_seed is None else model_seed)
    params = model.parameters()
    state = adam_init([p.data for p in params])
    crop = None if hyper.crop_seconds is None else int(round(hyper.crop_seconds * config.sample_rate))

    def validate():
        return evaluate_pairs(model, val_pairs or train_pairs, hyper.batch)

    initial = validate()
    best = initial
    best_ckpt = checkpoint_from_model(model, step=0, dataset_seed=hyper.dataset_seed)
    records = []
    step = 0
    for epoch in range(hyper.epochs):
        rng = np.random.default_rng([hyper.seed, epoch])
        order = rng.permutation(len(train_pairs))
        losses = []
        for start in range(0, len(order), hyper.batch):
            idx = order[start:start + hyper.batch]
            bx = np.stack([train_pairs[i][0] for i in idx])
            by = np.stack([train_pairs[i][1] for i in idx])
            bx, by = _crop(bx, by, rng, crop)
            model.zero_grad()
            est, _ = model.forward(bx, training=True)
            loss = neg_si_sdr(est, by)
            if not np.isfinite(loss.data):
                raise TrainingError(f"loss became {float(loss.data)} at step {step} (epoch {epoch})")
            loss.backward()
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            if hyper.clip_norm is not None:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
                if norm > hyper.clip_norm:
                    grads = [g * (hyper.clip_norm / norm) for g in grads]
            adam_step([p.data for p in params], grads, state, lr=hyper.lr)
            losses.append(float(loss.data))
            step += 1
        val = validate()
        rec = {"step": step, "epoch": epoch, "train_loss": float(np.mean(losses)), "val_si_sdr": val}
        records.append(rec)
        log.info("epoch %d step %d loss %.3f val %.2f dB", epoch, step, rec["train_loss"], val)
        if val > best:
            best = val
            best_ckpt = checkpoint_from_model(model, step=step, dataset_seed=hyper.dataset_seed, optimizer=state)

    best_ckpt.extra = {"hyper": hyper.to_dict(), "best_val_si_sdr": best, "initial_val_si_sdr": initial}
    model.load_arrays(best_ckpt.weights)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(best_ckpt, out / "best.ckpt")
        with open(out / "train_log.jsonl", "w") as fh:
            for rec in records:
                fh.write(json.dumps({k: rec[k] for k in ("step", "train_loss", "val_si_sdr")}) + "\n")
    return TrainResult(best_ckpt, records, model, best, initial)


# -- inference ---------------------------------------------------------------

DEFAULT_MEMORY_BUDGET_SECONDS = 600.0
CHUNK_SECONDS = 30.0


def _forward_whole(model: DelimiterNet, data: np.ndarray) -> np.ndarray:
    y, _ = model.forward(data, training=False)
    return y.data


def _edge_ramp(length: int, margin: int) -> np.ndarray:
    """0 for the first ``margin`` samples, then a linear rise reaching 1 ``margin`` before the end.

    ``ramp[i] + ramp[length - 1 - i] == 1``, so facing ramps crossfade exactly.
    """
    i = np.arange(length) + 0.5
    return np.clip((i - margin) / (length - 2 * margin), 0.0, 1.0)


def _forward_chunked(model: DelimiterNet, data: np.ndarray, chunk: int) -> np.ndarray:
    """Overlapping chunks (50%) joined by crossfades that skip each chunk's edge region.

    Chunk starts sit on the encoder stride grid and samples within one
    receptive field of an interior chunk edge get zero weight, so with a
    time-local norm the result equals the whole-signal forward pass.
    """
    cfg = model.config
    total = data.shape[-1]
    stride = cfg.stride
    chunk = max(stride, chunk // (2 * stride) * (2 * stride))
    if total <= chunk:
        return _forward_whole(model, data)
    hop = chunk // 2
    margin = receptive_field_samples(cfg) + cfg.L
    if hop <= 2 * margin:
        raise ConfigError(f"chunk of {chunk} samples is too short for a {margin}-sample receptive margin")
    ramp = _edge_ramp(hop, margin)
    starts = list(range(0, total - chunk, hop))
    starts.append(-(-(total - chunk) // stride) * stride)
    out = np.zeros_like(data)
    weight = np.zeros(total)
    for start in starts:
        stop = min(start + chunk, total)
        w = np.ones(stop - start)
        if start > 0:
            w[:hop] = ramp
        if stop < total:
            w[-hop:] = np.minimum(w[-hop:], ramp[::-1])
        out[:, start:stop] += _forward_whole(model, data[:, start:stop]) * w
        weight[start:stop] += w
    return out / weight


def infer(checkpoint, buffer: AudioBuffer, target_lufs: float = -14.0, parallel_ratio: float | None = None,
          memory_budget_seconds: float = DEFAULT_MEMORY_BUDGET_SECONDS, normalize_output: bool = True):
    """De-limit ``buffer``; returns the loudness-normalised output.

    With ``parallel_ratio`` the loudness-normalised input and output are
    blended at that ratio before the final normalisation.
    """
    model = checkpoint.model() if isinstance(checkpoint, Checkpoint) else checkpoint
    cfg = model.config
    if buffer.sample_rate != cfg.sample_rate:
        raise ConfigError(f"audio is {buffer.sample_rate} Hz, model expects {cfg.sample_rate} Hz")
    if buffer.channels != cfg.channels:
        raise ConfigError(f"audio has {buffer.channels} channels, model expects {cfg.channels}")

    if buffer.duration > memory_budget_seconds:
        log.warning(
            "input of %.1f s exceeds the %.1f s budget; using %.0f s overlapping chunks, "
            "so global normalisers no longer see the whole signal",
            buffer.duration, memory_budget_seconds, CHUNK_SECONDS,
        )
        raw = _forward_chunked(model, buffer.data, int(CHUNK_SECONDS * cfg.sample_rate))
    else:
        raw = _forward_whole(model, buffer.data)
    out = buffer.with_data(raw)
    if not normalize_output:
        return out
    out = loudness_normalize(out, target_lufs)
    if parallel_ratio is not None:
        mixed = parallel_mix(loudness_normalize(buffer, target_lufs), out, parallel_ratio)
        out = loudness_normalize(mixed, target_lufs)
    return out
