"""RIFF/WAVE reading and writing, and the in-memory AudioBuffer.

Integer PCM (16/24 bit) and IEEE float32 are supported, mono or stereo.
Samples are held as float64 arrays shaped ``(channels, frames)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavFormatError(ValueError):
    """Unsupported codec, bit depth or channel layout."""


class CorruptWavError(ValueError):
    """File is truncated or its chunk structure is inconsistent."""


@dataclass
class AudioBuffer:
    sample_rate: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[np.newaxis, :]
        if data.ndim != 2 or data.shape[0] not in (1, 2):
            raise ValueError(f"expected 1 or 2 channels, got shape {data.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(data)):
            raise ValueError("audio contains NaN or Inf")
        self.sample_rate = int(self.sample_rate)
        self.data = data

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.frames / self.sample_rate

    def with_data(self, data: np.ndarray) -> "AudioBuffer":
        return AudioBuffer(self.sample_rate, data)

    def __eq__(self, other):
        if not isinstance(other, AudioBuffer):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


def read_wav(path) -> AudioBuffer:
    return read_wav_with_depth(path)[0]


def read_wav_with_depth(path):
    """Like :func:`read_wav` but also returns the stored bit depth (16, 24 or ``"float32"``)."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise CorruptWavError(f"{path}: file too short for a RIFF header")
    riff, _, wave = struct.unpack("<4sI4s", raw[:12])
    if riff != b"RIFF" or wave != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id, size = struct.unpack("<4sI", raw[pos:pos + 8])
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise CorruptWavError(f"{path}: chunk {chunk_id!r} truncated")
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise CorruptWavError(f"{path}: missing fmt or data chunk")
    if len(fmt) < 16:
        raise CorruptWavError(f"{path}: fmt chunk too short")

    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise CorruptWavError(f"{path}: extensible fmt chunk too short")
        tag = struct.unpack("<H", fmt[24:26])[0]
    if channels not in (1, 2):
        raise WavFormatError(f"{path}: {channels} channels not supported")
    if block_align != channels * bits // 8:
        raise CorruptWavError(f"{path}: inconsistent block alignment")
    if len(data) % block_align:
        raise CorruptWavError(f"{path}: data chunk ends mid-frame")

    if tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        depth = "float32"
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    elif tag == _WAVE_FORMAT_PCM and bits == 16:
        depth = 16
        samples = np.frombuffer(data, dtype="<i2") / 2.0**15
    elif tag == _WAVE_FORMAT_PCM and bits == 24:
        depth = 24
        b = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        samples = ints / 2.0**23
    else:
        raise WavFormatError(f"{path}: format tag {tag} with {bits} bits not supported")

    return AudioBuffer(rate, samples.reshape(-1, channels).T.copy()), depth


def write_wav(buffer: AudioBuffer, path, bit_depth="float32") -> int:
    """Write ``buffer`` to ``path`` and return the number of clipped samples.

    ``bit_depth`` is 16, 24 or ``"float32"``. Integer modes saturate at the
    largest representable code; float32 stores values unclipped.
    """
    interleaved = buffer.data.T.reshape(-1)
    clipped = 0
    if bit_depth in ("float32", "float", 32):
        tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
        payload = interleaved.astype("<f4").tobytes()
    elif bit_depth in (16, 24):
        tag, bits = _WAVE_FORMAT_PCM, int(bit_depth)
        full = 2 ** (bits - 1)
        codes = np.round(interleaved * full)
        over = (codes > full - 1) | (codes < -full)
        clipped = int(np.count_nonzero(over))
        codes = np.clip(codes, -full, full - 1).astype(np.int32)
        if bits == 16:
            payload = codes.astype("<i2").tobytes()
        else:
            u = codes.astype("<u4").view(np.uint8).reshape(-1, 4)[:, :3]
            payload = u.tobytes()
    else:
        raise WavFormatError(f"unsupported bit depth {bit_depth!r}")

    channels = buffer.channels
    block_align = channels * bits // 8
    fmt = struct.pack(
        "<HHIIHH", tag, channels, buffer.sample_rate,
        buffer.sample_rate * block_align, block_align, bits,
    )
    pad = b"\x00" if len(payload) & 1 else b""
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload + pad
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)
    return clipped
