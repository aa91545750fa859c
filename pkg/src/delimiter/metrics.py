"""Objective evaluation metrics and model cost counters."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.signal import get_window

from .audio_io import AudioBuffer
from .loudness import loudness_range

SI_SDR_CAP_DB = 100.0


class UndefinedMetricError(ValueError):
    """The metric has no value for this input (silence, zero reference...)."""


class MetricError(ValueError):
    """Input does not satisfy the metric's preconditions."""


def _flat(x) -> np.ndarray:
    if isinstance(x, AudioBuffer):
        x = x.data
    return np.asarray(x, dtype=np.float64).reshape(-1)


def si_sdr_uncapped(estimate, reference) -> float:
    """SI-SDR in dB with stereo channels concatenated into one vector."""
    est, ref = _flat(estimate), _flat(reference)
    if est.shape != ref.shape:
        raise MetricError(f"shape mismatch {est.shape} vs {ref.shape}")
    ref_energy = ref @ ref
    if ref_energy == 0:
        raise UndefinedMetricError("reference is all zeros")
    alpha = (est @ ref) / ref_energy
    target = alpha * ref
    noise = target - est
    num, den = target @ target, noise @ noise
    if den == 0:
        return math.inf
    if num == 0:
        return -math.inf
    return 10.0 * math.log10(num / den)


def si_sdr(estimate, reference, cap: float = SI_SDR_CAP_DB) -> float:
    return min(si_sdr_uncapped(estimate, reference), cap)


@dataclass(frozen=True)
class SpecConfig:
    fft_sizes: tuple = (512, 1024, 2048)
    hop_ratio: float = 0.25
    window: str = "hann"

    def __post_init__(self):
        for n in self.fft_sizes:
            if n <= 0 or n & (n - 1):
                raise ValueError(f"fft size {n} is not a positive power of two")
        if not 0 < self.hop_ratio <= 1:
            raise ValueError("hop_ratio must lie in (0, 1]")


def magnitude_spectrogram(x: np.ndarray, n_fft: int, hop: int, window: str = "hann") -> np.ndarray:
    """|STFT| of each row of ``x`` using frames that lie fully inside the signal.

    Returns shape ``(channels, frames, n_fft // 2 + 1)``.
    """
    x = np.atleast_2d(x)
    if x.shape[1] < n_fft:
        raise MetricError(f"signal of {x.shape[1]} samples shorter than window {n_fft}")
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft, axis=1)[:, ::hop]
    win = get_window(window, n_fft)
    return np.abs(np.fft.rfft(frames * win, axis=-1))


def multires_spec_mse(estimate, reference, cfg: SpecConfig = SpecConfig()) -> float:
    est = estimate.data if isinstance(estimate, AudioBuffer) else np.atleast_2d(estimate)
    ref = reference.data if isinstance(reference, AudioBuffer) else np.atleast_2d(reference)
    if est.shape != ref.shape:
        raise MetricError(f"shape mismatch {est.shape} vs {ref.shape}")
    if ref.shape[1] < max(cfg.fft_sizes):
        raise MetricError("signal shorter than the largest analysis window")
    errors = []
    for n_fft in cfg.fft_sizes:
        hop = max(1, int(n_fft * cfg.hop_ratio))
        a = magnitude_spectrogram(est, n_fft, hop, cfg.window)
        b = magnitude_spectrogram(ref, n_fft, hop, cfg.window)
        errors.append(np.mean((a - b) ** 2))
    return float(np.mean(errors))


@dataclass
class DynamicsReport:
    rms: float
    crest_factor: float
    dynamic_complexity: float
    lra: float
    spectral_centroid: float

    def to_dict(self):
        return asdict(self)


def rms(buffer: AudioBuffer) -> float:
    return float(np.sqrt(np.mean(buffer.data**2)))


def crest_factor(buffer: AudioBuffer) -> float:
    level = rms(buffer)
    if level == 0:
        raise UndefinedMetricError("crest factor of silence")
    return float(np.max(np.abs(buffer.data)) / level)


def dynamic_complexity(buffer: AudioBuffer, frame_s=1.0, overlap=0.5, floor_db=-60.0) -> float:
    """Mean absolute deviation (dB) of frame RMS levels around their mean."""
    frame = int(round(frame_s * buffer.sample_rate))
    hop = max(1, int(round(frame * (1.0 - overlap))))
    power = np.mean(buffer.data**2, axis=0)
    if power.size < frame:
        return 0.0
    windows = np.lib.stride_tricks.sliding_window_view(power, frame)[::hop]
    ms = windows.mean(axis=1)
    with np.errstate(divide="ignore"):
        levels = 10.0 * np.log10(ms)
    levels = levels[levels > floor_db]
    if levels.size == 0:
        return 0.0
    return float(np.mean(np.abs(levels - levels.mean())))


def spectral_centroid(buffer: AudioBuffer, n_fft=2048, hop=512, floor_db=-80.0) -> float:
    """Average over frames of the magnitude-weighted mean frequency."""
    if buffer.frames < n_fft:
        raise MetricError("signal shorter than one analysis frame")
    mag = magnitude_spectrogram(buffer.data, n_fft, hop).mean(axis=0)
    frames = np.lib.stride_tricks.sliding_window_view(np.mean(buffer.data**2, axis=0), n_fft)[::hop]
    energetic = frames.mean(axis=1) > 10.0 ** (floor_db / 10.0)
    weight = mag.sum(axis=1)
    energetic &= weight > 0
    if not np.any(energetic):
        raise UndefinedMetricError("spectral centroid of silence")
    freqs = np.fft.rfftfreq(n_fft, 1.0 / buffer.sample_rate)
    centroids = (mag[energetic] @ freqs) / weight[energetic]
    return float(centroids.mean())


def dynamics_report(buffer: AudioBuffer) -> DynamicsReport:
    return DynamicsReport(
        rms=rms(buffer),
        crest_factor=crest_factor(buffer),
        dynamic_complexity=dynamic_complexity(buffer),
        lra=loudness_range(buffer),
        spectral_centroid=spectral_centroid(buffer),
    )


# -- cost counters ---------------------------------------------------------

def conv_params(c_in, c_out, kernel, groups=1, bias=True) -> int:
    return (c_in // groups) * c_out * kernel + (c_out if bias else 0)


def count_params(config) -> int:
    """Learnable scalars of the de-limiter network for ``config``.

    Normalisation running statistics are buffers, not parameters.
    """
    c, n, l, b, h, p = config.channels, config.N, config.L, config.B, config.H, config.P
    block = (
        conv_params(b, h, 1) + 1 + 2 * h          # pointwise in, PReLU, norm
        + conv_params(h, h, p, groups=h) + 1 + 2 * h  # depthwise, PReLU, norm
        + 2 * conv_params(h, b, 1)                # residual and skip
    )
    return (
        conv_params(c, n, l)
        + conv_params(n, b, 1)
        + config.X * config.R * block
        + 1 + conv_params(b, n, 1)
        + conv_params(n, c, l)
    )


def count_macs(config, input_seconds: float, sample_rate: int | None = None) -> int:
    """Multiply-accumulates for one forward pass over ``input_seconds`` of audio.

    Convolutions cost ``kernel * in/groups * out`` per output frame. Every
    elementwise multiplication costs one: PReLU, the normalisation scale and
    its affine gain (two), the masking head's mask product and the SGI
    head's gain product. Additions, rectifiers and sigmoids are free.
    """
    from .net import encoder_frames

    rate = config.sample_rate if sample_rate is None else sample_rate
    samples = int(round(input_seconds * rate))
    frames = encoder_frames(samples, config.L)
    c, n, l, b, h, p = config.channels, config.N, config.L, config.B, config.H, config.P

    block = (
        b * h                # pointwise in
        + h + 2 * h          # PReLU, norm
        + p * h              # depthwise
        + h + 2 * h          # PReLU, norm
        + 2 * h * b          # residual + skip
    )
    per_frame = (
        l * c * n            # encoder
        + n * b              # bottleneck
        + config.X * config.R * block
        + b + b * n          # head PReLU + projection
        + n * c * l          # transposed decoder
    )
    total = per_frame * frames
    if config.head == "masking":
        total += n * frames
    elif config.head == "sgi":
        total += c * samples
    return int(total)
