"""Paired (limited, original) segment generation by random stem mixing.

Every segment's random state comes from ``(seed, segment_id)`` only, so a
segment can be rebuilt bit-exactly from its manifest record, in any order.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer, read_wav, write_wav
from .dynamics import LimiterParams, apply_limiter

log = logging.getLogger(__name__)

ROLES = ("vocals", "bass", "drums", "other")
MANIFEST_SCHEMA_VERSION = 1
PEAK_GUARD = 0.99
GAIN_RANGE_DB = (-6.0, 6.0)
SWAP_PROBABILITY = 0.5


class DatasetBuildError(RuntimeError):
    pass


@dataclass
class StemPool:
    """Tracks of four stems each; ``tracks[i][role]`` is an AudioBuffer."""

    tracks: list
    names: list = field(default_factory=list)

    def __post_init__(self):
        if not self.names:
            self.names = [f"track{i:03d}" for i in range(len(self.tracks))]
        for name, track in zip(self.names, self.tracks):
            missing = [r for r in ROLES if r not in track]
            if missing:
                raise DatasetBuildError(f"{name}: missing stems {missing}")
            shapes = {(track[r].sample_rate, track[r].data.shape) for r in ROLES}
            if len(shapes) != 1:
                raise DatasetBuildError(f"{name}: stems differ in rate or length")

    @property
    def sample_rate(self) -> int:
        return self.tracks[0]["vocals"].sample_rate

    def mixture(self, index: int) -> AudioBuffer:
        track = self.tracks[index]
        return track["vocals"].with_data(sum(track[r].data for r in ROLES))

    def save(self, directory):
        directory = Path(directory)
        for name, track in zip(self.names, self.tracks):
            (directory / name).mkdir(parents=True, exist_ok=True)
            for role in ROLES:
                write_wav(track[role], directory / name / f"{role}.wav", "float32")

    @classmethod
    def load(cls, directory) -> "StemPool":
        directory = Path(directory)
        if not directory.is_dir():
            raise FileNotFoundError(f"stem pool directory not found: {directory}")
        tracks, names = [], []
        for sub in sorted(p for p in directory.iterdir() if p.is_dir()):
            if all((sub / f"{r}.wav").exists() for r in ROLES):
                tracks.append({r: read_wav(sub / f"{r}.wav") for r in ROLES})
                names.append(sub.name)
        if not tracks:
            raise DatasetBuildError(f"no tracks with {'/'.join(ROLES)} stems under {directory}")
        return cls(tracks, names)


# -- synthetic stems ----------------------------------------------------------

def _decay(t, tau):
    return np.exp(-t / tau)


def _place(out, events, sound):
    for start in events:
        end = min(out.shape[-1], start + sound.shape[-1])
        if start < end:
            out[..., start:end] += sound[..., : end - start]


def _drums(rng, n, sr, beat):
    out = np.zeros((2, n))
    t = np.arange(int(0.4 * sr)) / sr
    sweep = 2 * np.pi * np.cumsum(50 + 90 * np.exp(-t / 0.03)) / sr
    kick = 0.9 * np.sin(sweep) * _decay(t, 0.12)
    snare_noise = rng.standard_normal(t.size)
    snare = (0.5 * snare_noise + 0.4 * np.sin(2 * np.pi * 185 * t)) * _decay(t, 0.07)
    hat = np.diff(rng.standard_normal(t.size + 1)) * 0.15 * _decay(t, 0.015)

    beats = np.arange(0, n, beat).astype(int)
    _place(out, beats[::2], np.stack([kick, kick]))
    _place(out, beats[1::2], np.stack([snare, 0.9 * snare]))
    eighths = np.arange(0, n, beat / 2).astype(int)
    accents = rng.uniform(0.5, 1.0, eighths.size)
    for pos, a in zip(eighths, accents):
        _place(out, [pos], np.stack([0.7 * a * hat, a * hat]))
    return out


def _tone(freqs, t, harmonics, rolloff):
    sig = np.zeros_like(t)
    for k in range(1, harmonics + 1):
        sig += np.sin(2 * np.pi * k * freqs * t) / k**rolloff
    return sig


def _bass(rng, n, sr, beat):
    notes = 55.0 * 2 ** (rng.choice([0, 3, 5, 7, 10, 12], size=n // int(beat) + 1) / 12)
    f = np.repeat(notes, int(beat))[:n]
    phase = 2 * np.pi * np.cumsum(f) / sr
    sig = np.sin(phase) + 0.35 * np.sin(2 * phase) + 0.15 * np.sin(3 * phase)
    env = _decay((np.arange(n) % int(beat)) / sr, 0.35)
    mono = 0.3 * sig * env
    return np.stack([mono, mono])


def _vocals(rng, n, sr, beat):
    t = np.arange(n) / sr
    phrase = int(4 * beat)
    notes = 220.0 * 2 ** (rng.choice([0, 2, 4, 5, 7, 9], size=n // phrase + 1) / 12)
    f = np.repeat(notes, phrase)[:n] * (1 + 0.01 * np.sin(2 * np.pi * 5.5 * t))
    phase = 2 * np.pi * np.cumsum(f) / sr
    sig = np.sin(phase) + 0.5 * np.sin(2 * phase) + 0.25 * np.sin(3 * phase) + 0.1 * np.sin(5 * phase)
    gate = np.repeat(rng.random(n // phrase + 1) < 0.75, phrase)[:n].astype(float)
    ramp = np.minimum(1.0, (np.arange(n) % phrase) / (0.05 * sr))
    mono = 0.22 * sig * gate * ramp
    return np.stack([mono, mono])


def _other(rng, n, sr, beat):
    t = np.arange(n) / sr
    bar = int(4 * beat)
    roots = 130.81 * 2 ** (rng.choice([0, 5, 7, 9], size=n // bar + 1) / 12)
    root = np.repeat(roots, bar)[:n]
    left = _tone(root, t, 4, 1.5) + _tone(root * 1.26, t, 3, 1.5)
    right = _tone(root * 1.5, t, 4, 1.5) + _tone(root * 1.26, t, 3, 1.5)
    swell = 0.6 + 0.4 * np.sin(2 * np.pi * t / (2 * bar / sr))
    return 0.08 * np.stack([left, right]) * swell


def make_synthetic_pool(n_tracks=4, seconds=20.0, sample_rate=44100, seed=0) -> StemPool:
    """Procedural drum/bass/vocal/pad stems, deterministic in ``seed``."""
    tracks = []
    n = int(round(seconds * sample_rate))
    for i in range(n_tracks):
        rng = np.random.default_rng([seed, i])
        bpm = rng.uniform(85, 140)
        beat = 60.0 / bpm * sample_rate
        gens = {"vocals": _vocals, "bass": _bass, "drums": _drums, "other": _other}
        tracks.append({r: AudioBuffer(sample_rate, gens[r](rng, n, sample_rate, beat)) for r in ROLES})
    return StemPool(tracks)


# -- mixing and limiter randomisation ------------------------------------------

def segment_rng(seed: int, segment_id: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(segment_id)])


def _eligible(pool: StemPool, segment: int):
    ok = []
    for i, (name, track) in enumerate(zip(pool.names, pool.tracks)):
        if track["vocals"].frames >= segment:
            ok.append(i)
        else:
            log.warning("skipping %s: shorter than one segment", name)
    if not ok:
        raise DatasetBuildError("no track is long enough for one segment")
    return ok


def draw_mix(pool: StemPool, rng: np.random.Generator, segment_seconds=4.0, augment=True) -> dict:
    """Draw the random choices of one mixture (no audio is rendered)."""
    segment = int(round(segment_seconds * pool.sample_rate))
    eligible = _eligible(pool, segment)
    stems = []
    if augment:
        for role in ROLES:
            track = int(eligible[rng.integers(len(eligible))])
            offset = int(rng.integers(pool.tracks[track][role].frames - segment + 1))
            gain_db = float(rng.uniform(*GAIN_RANGE_DB))
            swap = bool(rng.random() < SWAP_PROBABILITY)
            stems.append({"role": role, "track": track, "offset": offset, "gain_db": gain_db, "swap": swap})
    else:
        track = int(eligible[rng.integers(len(eligible))])
        offset = int(rng.integers(pool.tracks[track]["vocals"].frames - segment + 1))
        for role in ROLES:
            stems.append({"role": role, "track": track, "offset": offset, "gain_db": 0.0, "swap": False})
    return {"segment_samples": segment, "stems": stems}


def render_stems(pool: StemPool, provenance: dict):
    """Return ``(stems, peak_scale)`` with the peak guard already applied."""
    segment = provenance["segment_samples"]
    stems = []
    for s in provenance["stems"]:
        data = pool.tracks[s["track"]][s["role"]].data[:, s["offset"]:s["offset"] + segment]
        data = data * 10.0 ** (s["gain_db"] / 20.0)
        if s["swap"] and data.shape[0] == 2:
            data = data[::-1]
        stems.append(data)
    peak = float(np.max(np.abs(np.sum(stems, axis=0))))
    scale = PEAK_GUARD / peak if peak > PEAK_GUARD else 1.0
    return [st * scale for st in stems], scale


def random_mix(pool: StemPool, rng: np.random.Generator, segment_seconds=4.0, augment=True):
    """Random gain/offset/channel-swap mixture; returns ``(mixture, provenance)``."""
    prov = draw_mix(pool, rng, segment_seconds, augment)
    stems, scale = render_stems(pool, prov)
    prov["peak_scale"] = scale
    mixture = np.sum(stems, axis=0)
    return AudioBuffer(pool.sample_rate, mixture), prov


def sample_limiter_params(rng: np.random.Generator) -> LimiterParams:
    attack = float(rng.uniform(1.0, 5.0))
    return LimiterParams(
        input_gain_db=float(rng.uniform(2.0, 12.0)),
        ceiling=0.98,
        attack_ms=attack,
        release_ms=float(np.exp(rng.uniform(np.log(30.0), np.log(300.0)))),
        lookahead_ms=attack + 1.0,
    )


@dataclass
class SegmentRecord:
    segment_id: int
    seed: int
    stems: list
    peak_scale: float
    limiter: dict
    segment_samples: int
    sample_rate: int
    augment: bool = True
    input_path: str = ""
    target_path: str = ""
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "SegmentRecord":
        d = json.loads(line)
        if d.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise DatasetBuildError(f"unsupported manifest schema {d.get('schema_version')}")
        return cls(**d)


def make_pair(pool: StemPool, seed: int, segment_id: int, segment_seconds=4.0, augment=True):
    """Build one segment; returns ``(limited, target, envelope, record)``."""
    rng = segment_rng(seed, segment_id)
    mixture, prov = random_mix(pool, rng, segment_seconds, augment)
    params = sample_limiter_params(rng)
    limited, env = apply_limiter(mixture, params)
    record = SegmentRecord(
        segment_id=segment_id, seed=seed, stems=prov["stems"], peak_scale=prov["peak_scale"],
        limiter=params.to_dict(), segment_samples=prov["segment_samples"],
        sample_rate=pool.sample_rate, augment=augment,
    )
    return limited, mixture, env, record


def rebuild_segment(pool: StemPool, record: SegmentRecord):
    """Recreate ``(limited, target, envelope)`` from a manifest record alone."""
    prov = {"segment_samples": record.segment_samples, "stems": record.stems}
    stems, _ = render_stems(pool, prov)
    mixture = AudioBuffer(pool.sample_rate, np.sum(stems, axis=0))
    limited, env = apply_limiter(mixture, LimiterParams(**record.limiter))
    return limited, mixture, env


@dataclass
class DatasetManifest:
    root: Path
    records: list

    @property
    def path(self) -> Path:
        return self.root / "manifest.jsonl"

    def pairs(self):
        """Yield ``(limited, target)`` arrays read back from disk."""
        for rec in self.records:
            yield read_wav(self.root / rec.input_path).data, read_wav(self.root / rec.target_path).data

    @classmethod
    def load(cls, root) -> "DatasetManifest":
        root = Path(root)
        lines = (root / "manifest.jsonl").read_text().splitlines()
        return cls(root, [SegmentRecord.from_json(line) for line in lines if line.strip()])


def build_dataset(pool: StemPool, count: int, out_dir, segment_seconds=4.0, seed=0, augment=True) -> DatasetManifest:
    """Write ``count`` pairs as input/NNNNNN.wav (limited), target/NNNNNN.wav and manifest.jsonl."""
    if count < 1:
        raise ValueError("count must be at least 1")
    if not pool.tracks:
        raise DatasetBuildError("empty stem pool")
    root = Path(out_dir)
    created = []
    records = []
    try:
        for sub in ("input", "target"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        for i in range(count):
            limited, target, _, rec = make_pair(pool, seed, i, segment_seconds, augment)
            rec.input_path = f"input/{i:06d}.wav"
            rec.target_path = f"target/{i:06d}.wav"
            for rel, buf in ((rec.input_path, limited), (rec.target_path, target)):
                created.append(root / rel)
                write_wav(buf, root / rel, "float32")
            records.append(rec)
        manifest = root / "manifest.jsonl"
        created.append(manifest)
        manifest.write_text("".join(r.to_json() + "\n" for r in records))
    except OSError:
        for p in created:
            p.unlink(missing_ok=True)
        raise
    return DatasetManifest(root, records)


def generate_pairs(pool: StemPool, count: int, segment_seconds=4.0, seed=0, augment=True, first_id=0):
    """In-memory ``(limited, target)`` arrays for segment ids ``first_id .. first_id+count-1``."""
    out = []
    for i in range(first_id, first_id + count):
        limited, target, _, _ = make_pair(pool, seed, i, segment_seconds, augment)
        out.append((limited.data, target.data))
    return out


class OnTheFlySampler:
    """Endless deterministic batches; batch ``i`` depends only on ``(seed, i)``."""

    def __init__(self, pool: StemPool, seed=0, batch_size=4, segment_seconds=4.0, augment=True):
        self.pool = pool
        self.seed = seed
        self.batch_size = batch_size
        self.segment_seconds = segment_seconds
        self.augment = augment

    def items(self, index: int):
        """``(limited, target, envelope, record)`` tuples of batch ``index``."""
        first = index * self.batch_size
        return [
            make_pair(self.pool, self.seed, first + j, self.segment_seconds, self.augment)
            for j in range(self.batch_size)
        ]

    def batch(self, index: int):
        items = self.items(index)
        limited = np.stack([it[0].data for it in items])
        target = np.stack([it[1].data for it in items])
        return limited, target

    def __iter__(self):
        i = 0
        while True:
            yield self.batch(i)
            i += 1


def onthefly_sampler(pool, seed=0, batch_size=4, segment_seconds=4.0, augment=True) -> OnTheFlySampler:
    return OnTheFlySampler(pool, seed, batch_size, segment_seconds, augment)
