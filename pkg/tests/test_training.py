import numpy as np
import pytest

from delimiter.audio_io import AudioBuffer
from delimiter.checkpoint import checkpoint_to_bytes
from delimiter.dataset import generate_pairs, make_pair
from delimiter.loudness import integrated_loudness, loudness_normalize
from delimiter.net import ConfigError, NetConfig, build_model
from delimiter.training import TrainHyper, TrainingError, _forward_chunked, _forward_whole, infer, train

from oracles import music_like

TINY = NetConfig(N=8, L=8, B=4, H=6, X=2, R=1)


def test_overfits_a_single_half_second_pair(small_pool):
    limited, target, _, _ = make_pair(small_pool, 0, 0, 0.5)
    pair = (limited.data, target.data)
    result = train(NetConfig(), [pair], TrainHyper(lr=3e-3, batch=1, epochs=300, clip_norm=None),
                   validation=[pair])
    assert result.best_val_si_sdr >= 30.0


def test_training_is_deterministic(small_pool, tmp_path):
    pairs = generate_pairs(small_pool, 6, 0.25, seed=4)
    hyper = TrainHyper(batch=2, epochs=2, crop_seconds=0.1)
    a = train(TINY, pairs, hyper, out_dir=tmp_path / "a")
    b = train(TINY, pairs, hyper, out_dir=tmp_path / "b")
    assert checkpoint_to_bytes(a.checkpoint) == checkpoint_to_bytes(b.checkpoint)
    assert (tmp_path / "a" / "best.ckpt").read_bytes() == (tmp_path / "b" / "best.ckpt").read_bytes()
    assert (tmp_path / "a" / "train_log.jsonl").read_bytes() == (tmp_path / "b" / "train_log.jsonl").read_bytes()


def test_best_checkpoint_is_kept(small_pool):
    pairs = generate_pairs(small_pool, 6, 0.25, seed=4)
    result = train(TINY, pairs, TrainHyper(batch=2, epochs=3))
    vals = [r["val_si_sdr"] for r in result.log]
    assert result.best_val_si_sdr == max([result.initial_val_si_sdr] + vals)


def test_training_errors(small_pool):
    with pytest.raises(TrainingError):
        train(TINY, [], TrainHyper())
    mono = [(np.zeros((1, 100)), np.ones((1, 100)))] * 3
    with pytest.raises(ConfigError):
        train(TINY, mono, TrainHyper(epochs=1))


def test_divergence_aborts(small_pool):
    pairs = generate_pairs(small_pool, 4, 0.1, seed=1)
    pairs[0] = (pairs[0][0] * np.nan, pairs[0][1])
    with pytest.raises(TrainingError, match="step"):
        train(TINY, pairs, TrainHyper(batch=4, epochs=1, val_split=0.0), validation=pairs[1:])


def test_infer_hits_target_loudness(rng):
    model = build_model(TINY, seed=1)
    buf = AudioBuffer(44100, 0.4 * music_like(rng, 2, 44100 * 2))
    out = infer(model, buf)
    assert integrated_loudness(out).integrated == pytest.approx(-14.0, abs=0.1)
    raw = infer(model, buf, normalize_output=False)
    assert np.all(np.abs(raw.data) <= np.abs(buf.data))


def test_infer_parallel_ratio_one_is_normalized_input(rng):
    model = build_model(TINY, seed=1)
    buf = AudioBuffer(44100, 0.4 * music_like(rng, 2, 44100 * 2))
    out = infer(model, buf, parallel_ratio=1.0)
    np.testing.assert_allclose(out.data, loudness_normalize(buf, -14.0).data, atol=1e-9)


def test_infer_rejects_mismatched_audio():
    model = build_model(TINY)
    with pytest.raises(ConfigError):
        infer(model, AudioBuffer(48000, np.zeros((2, 4800))))
    with pytest.raises(ConfigError):
        infer(model, AudioBuffer(44100, np.zeros((1, 4410))))


def test_chunked_fallback_matches_whole_with_local_norm(rng):
    # with a time-local norm the edge-skipping crossfade reproduces the whole pass
    model = build_model(TINY.with_(norm="ln"), seed=2)
    x = 0.3 * music_like(rng, 2, 5000)
    whole = _forward_whole(model, x)
    chunked = _forward_chunked(model, x, 600)
    assert chunked.shape == whole.shape
    assert np.max(np.abs(chunked - whole)) < 1e-12


def test_chunked_fallback_used_over_budget(rng, caplog):
    model = build_model(TINY, seed=2)
    buf = AudioBuffer(44100, 0.3 * music_like(rng, 2, 44100 * 2))
    with caplog.at_level("WARNING"):
        out = infer(model, buf, memory_budget_seconds=1.0, normalize_output=False)
    assert "chunks" in caplog.text
    assert out.data.shape == buf.data.shape
    assert np.all(np.abs(out.data) <= np.abs(buf.data) + 1e-12)
