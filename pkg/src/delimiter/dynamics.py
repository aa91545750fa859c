"""Lookahead peak limiter with exact gain-envelope export, and its inverses.

The limiter is written so the per-sample gain it applies is returned along
with the audio. Dividing by that gain undoes the limiter exactly, which is
what makes ``oracle_inverse`` and ``sgi_target`` possible.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.ndimage import minimum_filter1d

from .audio_io import AudioBuffer, write_wav


class DimensionError(ValueError):
    """Operands disagree in shape, length or sample rate."""


@dataclass(frozen=True)
class LimiterParams:
    input_gain_db: float = 0.0
    ceiling: float = 1.0
    attack_ms: float = 2.0
    release_ms: float = 100.0
    lookahead_ms: float = 3.0

    def __post_init__(self):
        if not 0.0 < self.ceiling <= 1.0:
            raise ValueError(f"ceiling must be in (0, 1], got {self.ceiling}")
        if self.attack_ms <= 0 or self.release_ms <= 0:
            raise ValueError("attack_ms and release_ms must be positive")
        if self.lookahead_ms < self.attack_ms:
            raise ValueError("lookahead_ms must be >= attack_ms")
        if not np.isfinite(self.input_gain_db):
            raise ValueError("input_gain_db must be finite")

    @property
    def input_gain(self) -> float:
        return float(10.0 ** (self.input_gain_db / 20.0))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GainEnvelope:
    """Stereo-linked per-sample linear gains in (0, 1]."""

    gains: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=np.float64).reshape(-1)
        if g.size and not (np.all(np.isfinite(g)) and g.min() > 0 and g.max() <= 1):
            raise ValueError("gain envelope values must be finite and in (0, 1]")
        self.gains = g

    def __len__(self):
        return self.gains.size


def _ms_to_samples(ms: float, sample_rate: int) -> int:
    return max(1, int(round(ms * sample_rate / 1000.0)))


def _forward_min(x: np.ndarray, size: int) -> np.ndarray:
    """out[n] = min(x[n:n+size]), with samples past the end treated as 1."""
    if size == 1:
        return x.copy()
    padded = np.concatenate([x, np.ones(size - 1)])
    return minimum_filter1d(padded, size, mode="nearest", origin=-(size // 2))[: x.size]


def _release(m: np.ndarray, coeff: float) -> np.ndarray:
    """Follow ``m`` down instantly, recover towards it with a one-pole."""
    out = np.empty_like(m)
    prev = 1.0
    keep = 1.0 - coeff
    for i, target in enumerate(m.tolist()):
        rising = keep * prev + coeff * target
        prev = target if target < rising else rising
        out[i] = prev
    return out


def _trailing_mean(x: np.ndarray, size: int) -> np.ndarray:
    """Mean of x[n-size+1 .. n]; samples before the start repeat x[0]."""
    depth = 1.0 - np.concatenate([np.full(size, x[0]), x])
    csum = np.cumsum(depth)
    # window sum over depth[k+1 .. k+size] of the padded array
    total = csum[size:] - csum[: x.size]
    return 1.0 - total / size


def instantaneous_gain(boosted: np.ndarray, ceiling: float) -> np.ndarray:
    """Largest gain per sample position that keeps every channel within ceiling."""
    peak = np.max(np.abs(boosted), axis=0) if boosted.size else np.zeros(0)
    out = np.ones_like(peak)
    loud = peak > ceiling
    out[loud] = ceiling / peak[loud]
    return out


def apply_limiter(buffer: AudioBuffer, params: LimiterParams):
    """Limit ``buffer`` and return ``(output, GainEnvelope)``.

    Gain computer, all aligned to input indices (no output delay):

    1. boost by ``params.input_gain``;
    2. target gain from the channel-linked peak over the lookahead window
       ``[n, n + lookahead)``;
    3. release: instant fall, one-pole recovery with ``release_ms``;
    4. attack: trailing moving average over ``attack_ms``.

    Because the attack window never exceeds the lookahead window, every
    averaged value is at or below the instantaneous target gain, so the
    output never exceeds ``params.ceiling``.
    """
    sr = buffer.sample_rate
    boosted = buffer.data * params.input_gain
    if buffer.frames == 0:
        return buffer.with_data(boosted), GainEnvelope(np.ones(0))

    inst = instantaneous_gain(boosted, params.ceiling)
    lookahead = _ms_to_samples(params.lookahead_ms, sr)
    attack = min(_ms_to_samples(params.attack_ms, sr), lookahead)
    release_coeff = 1.0 - np.exp(-1.0 / (params.release_ms * sr / 1000.0))

    held = _forward_min(inst, lookahead)
    released = _release(held, release_coeff)
    gains = _trailing_mean(released, attack)
    gains = np.minimum(np.minimum(gains, inst), 1.0)

    # rounding guard: product must not exceed the ceiling by even one ulp
    peak = np.max(np.abs(boosted), axis=0)
    over = peak * gains > params.ceiling
    while np.any(over):
        gains[over] = np.nextafter(gains[over], 0.0)
        over = peak * gains > params.ceiling

    return buffer.with_data(boosted * gains), GainEnvelope(gains)


def oracle_inverse(limited: AudioBuffer, env: GainEnvelope, gain_floor: float = 1e-7) -> AudioBuffer:
    if len(env) != limited.frames:
        raise DimensionError(f"envelope length {len(env)} != buffer length {limited.frames}")
    if gain_floor <= 0:
        raise ValueError("gain_floor must be positive")
    return limited.with_data(limited.data / np.maximum(env.gains, gain_floor))


def sgi_target(env: GainEnvelope) -> GainEnvelope:
    """Ideal inversion gains: ``min(g) / g``, all in (0, 1]."""
    if len(env) == 0:
        return GainEnvelope(np.ones(0))
    out = env.gains.min() / env.gains
    return GainEnvelope(np.minimum(out, 1.0))


def _check_same(a: AudioBuffer, b: AudioBuffer):
    if a.sample_rate != b.sample_rate or a.data.shape != b.data.shape:
        raise DimensionError(
            f"shape/rate mismatch: {a.data.shape}@{a.sample_rate} vs {b.data.shape}@{b.sample_rate}"
        )


def parallel_mix(limited: AudioBuffer, delimited: AudioBuffer, ratio: float) -> AudioBuffer:
    _check_same(limited, delimited)
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    return limited.with_data(ratio * limited.data + (1.0 - ratio) * delimited.data)


class StemSumError(ValueError):
    """Stems do not add up to the mixture they claim to belong to."""


def transfer_gains(limited_mix, delimited_mix, stems, epsilon=1e-8, sum_tolerance=1e-6):
    """Carry the per-sample ratio delimited/limited over to each stem.

    ``stems`` are the stems of the limited mix. Where ``|limited| <= epsilon``
    the ratio is undefined and is taken as 1.
    """
    _check_same(limited_mix, delimited_mix)
    for s in stems:
        _check_same(limited_mix, s)
    if stems:
        total = np.sum([s.data for s in stems], axis=0)
        err = np.max(np.abs(total - limited_mix.data)) if total.size else 0.0
        if err > sum_tolerance:
            raise StemSumError(f"stems differ from mixture by up to {err:.3g}")

    lim = limited_mix.data
    guarded = np.abs(lim) > epsilon
    ratio = np.ones_like(lim)
    ratio[guarded] = delimited_mix.data[guarded] / lim[guarded]
    return [s.with_data(ratio * s.data) for s in stems]


def write_envelope(env: GainEnvelope, path, sample_rate: int = 44100, fmt: str = "wav"):
    """Export gains as mono float32 WAV (``fmt="wav"``) or raw little-endian float32."""
    path = Path(path)
    if fmt == "wav":
        write_wav(AudioBuffer(sample_rate, env.gains[np.newaxis, :]), path, "float32")
    elif fmt == "raw":
        path.write_bytes(env.gains.astype("<f4").tobytes())
    else:
        raise ValueError(f"unknown envelope format {fmt!r}")


def read_envelope(path, fmt: str | None = None) -> GainEnvelope:
    from .audio_io import read_wav

    path = Path(path)
    if fmt is None:
        fmt = "wav" if path.suffix.lower() == ".wav" else "raw"
    if fmt == "wav":
        buf = read_wav(path)
        return GainEnvelope(buf.data[0])
    raw = path.read_bytes()
    return GainEnvelope(np.frombuffer(raw, dtype="<f4").astype(np.float64))


__all__ = [
    "DimensionError", "LimiterParams", "GainEnvelope", "StemSumError",
    "apply_limiter", "oracle_inverse", "sgi_target", "parallel_mix",
    "transfer_gains", "write_envelope", "read_envelope", "instantaneous_gain",
]
