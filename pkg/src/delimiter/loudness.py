"""ITU-R BS.1770-4 loudness, loudness normalisation and EBU Tech 3342 LRA."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .audio_io import AudioBuffer

ABSOLUTE_GATE_LUFS = -70.0
RELATIVE_GATE_LU = -10.0
LRA_RELATIVE_GATE_LU = -20.0

# Analog prototype of the K-weighting pre-filter, fitted so that the bilinear
# transform at 48 kHz reproduces the coefficients tabulated in BS.1770.
_SHELF_F0 = 1681.974450955533
_SHELF_GAIN_DB = 3.999843853973347
_SHELF_Q = 0.7071752369554196
_HP_F0 = 38.13547087602444
_HP_Q = 0.5003270373238773


class NormalizationError(ValueError):
    """Input has no measurable loudness (silence or too short)."""


@dataclass
class LoudnessReading:
    integrated: float | None
    lra: float = 0.0
    short_term: np.ndarray = field(default_factory=lambda: np.zeros(0))
    measurable: bool = False

    def to_json(self) -> str:
        return json.dumps({
            "integrated_lufs": self.integrated,
            "lra_lu": self.lra,
            "measurable": self.measurable,
        })


def k_weighting_coefficients(sample_rate: int):
    """Return ((b_shelf, a_shelf), (b_hp, a_hp)) for ``sample_rate``."""
    k = np.tan(np.pi * _SHELF_F0 / sample_rate)
    vh = 10.0 ** (_SHELF_GAIN_DB / 20.0)
    vb = vh ** 0.4996667741545416
    a0 = 1.0 + k / _SHELF_Q + k * k
    b_shelf = np.array([
        (vh + vb * k / _SHELF_Q + k * k) / a0,
        2.0 * (k * k - vh) / a0,
        (vh - vb * k / _SHELF_Q + k * k) / a0,
    ])
    a_shelf = np.array([1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / _SHELF_Q + k * k) / a0])

    k = np.tan(np.pi * _HP_F0 / sample_rate)
    a0 = 1.0 + k / _HP_Q + k * k
    b_hp = np.array([1.0, -2.0, 1.0])
    a_hp = np.array([1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / _HP_Q + k * k) / a0])
    return (b_shelf, a_shelf), (b_hp, a_hp)


def k_weight(buffer: AudioBuffer) -> np.ndarray:
    (bs, as_), (bh, ah) = k_weighting_coefficients(buffer.sample_rate)
    return lfilter(bh, ah, lfilter(bs, as_, buffer.data, axis=1), axis=1)


def _block_powers(weighted: np.ndarray, sample_rate: int, block_s: float, step_s: float):
    """Channel-summed mean square per block (all channel weights are 1.0)."""
    block = int(round(block_s * sample_rate))
    step = int(round(step_s * sample_rate))
    n = weighted.shape[1]
    if n < block:
        return np.zeros(0)
    count = 1 + (n - block) // step
    csum = np.concatenate([np.zeros((weighted.shape[0], 1)), np.cumsum(weighted**2, axis=1)], axis=1)
    starts = np.arange(count) * step
    ms = (csum[:, starts + block] - csum[:, starts]) / block
    return np.maximum(ms.sum(axis=0), 0.0)


def _to_lufs(power):
    with np.errstate(divide="ignore"):
        return -0.691 + 10.0 * np.log10(power)


def short_term_loudness(buffer: AudioBuffer, stride_s: float = 0.1) -> np.ndarray:
    """3 s sliding-window loudness, one value per ``stride_s``."""
    return _to_lufs(_block_powers(k_weight(buffer), buffer.sample_rate, 3.0, stride_s))


def _gated_integrated(powers: np.ndarray):
    loud = _to_lufs(powers)
    kept = powers[loud > ABSOLUTE_GATE_LUFS]
    if kept.size == 0:
        return None
    threshold = _to_lufs(kept.mean()) + RELATIVE_GATE_LU
    kept = kept[_to_lufs(kept) > threshold]
    if kept.size == 0:
        return None
    return float(_to_lufs(kept.mean()))


def _lra_from_short_term(st: np.ndarray):
    st = st[st > ABSOLUTE_GATE_LUFS]
    if st.size == 0:
        return None
    mean_power = np.mean(10.0 ** ((st + 0.691) / 10.0))
    st = st[st > _to_lufs(mean_power) + LRA_RELATIVE_GATE_LU]
    if st.size == 0:
        return None
    lo, hi = np.percentile(st, [10, 95])
    return float(max(hi - lo, 0.0))


def integrated_loudness(buffer: AudioBuffer) -> LoudnessReading:
    weighted = k_weight(buffer)
    powers = _block_powers(weighted, buffer.sample_rate, 0.4, 0.1)
    integrated = _gated_integrated(powers) if powers.size else None
    st = _to_lufs(_block_powers(weighted, buffer.sample_rate, 3.0, 0.1))
    lra = _lra_from_short_term(st) if st.size else None
    return LoudnessReading(
        integrated=integrated,
        lra=lra if lra is not None else 0.0,
        short_term=st,
        measurable=integrated is not None,
    )


def loudness_range(buffer: AudioBuffer) -> float:
    """Loudness range in LU; 0.0 when the input is too short or fully gated."""
    st = short_term_loudness(buffer)
    lra = _lra_from_short_term(st) if st.size else None
    return 0.0 if lra is None else lra


def loudness_normalize(buffer: AudioBuffer, target: float = -14.0) -> AudioBuffer:
    reading = integrated_loudness(buffer)
    if not reading.measurable:
        raise NormalizationError("cannot normalise: loudness is not measurable")
    gain = 10.0 ** ((target - reading.integrated) / 20.0)
    return buffer.with_data(buffer.data * gain)
