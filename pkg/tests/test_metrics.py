import math

import numpy as np
import pytest

from delimiter.audio_io import AudioBuffer
from delimiter.metrics import (
    MetricError,
    SpecConfig,
    UndefinedMetricError,
    conv_params,
    count_macs,
    count_params,
    crest_factor,
    dynamic_complexity,
    dynamics_report,
    multires_spec_mse,
    rms,
    si_sdr,
    si_sdr_uncapped,
    spectral_centroid,
)
from delimiter.net import NetConfig, build_model

from oracles import direct_multires_mse, tally_macs, tally_params

TOY_CONFIGS = [
    NetConfig(N=16, L=8, B=8, H=12, P=3, X=2, R=1),
    NetConfig(N=8, L=4, B=4, H=6, P=5, X=3, R=2, head="masking", channels=1),
    NetConfig(N=12, L=16, B=6, H=10, P=3, X=1, R=3, head="synthesis", norm="bn"),
]


def test_si_sdr_of_scaled_copy_is_capped(rng):
    s = rng.standard_normal((2, 500))
    assert si_sdr(3.0 * s, s) == 100.0
    assert si_sdr_uncapped(3.0 * s, s) > 200


def test_si_sdr_half_energy_error_is_zero_db():
    assert si_sdr(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == pytest.approx(0.0, abs=1e-12)


def test_si_sdr_matches_closed_form(rng):
    s = rng.standard_normal(1000)
    noise = rng.standard_normal(1000)
    noise -= s * (noise @ s) / (s @ s)
    noise *= 0.1 * np.linalg.norm(s) / np.linalg.norm(noise)
    assert si_sdr(s + noise, s) == pytest.approx(20.0, abs=1e-9)


def test_si_sdr_is_scale_invariant(rng):
    s, e = rng.standard_normal((2, 300))
    assert si_sdr(5 * e, s) == pytest.approx(si_sdr(e, s), abs=1e-9)


def test_si_sdr_undefined_for_silent_reference():
    with pytest.raises(UndefinedMetricError):
        si_sdr(np.ones(10), np.zeros(10))


def test_spec_mse_matches_direct_dft(rng):
    est, ref = rng.standard_normal((2, 1, 64))
    cfg = SpecConfig(fft_sizes=(16, 32), hop_ratio=0.25)
    expected = direct_multires_mse(est.tolist(), ref.tolist(), (16, 32), 0.25)
    assert multires_spec_mse(est, ref, cfg) == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_spec_mse_zero_for_identical_and_rejects_short(rng):
    x = rng.standard_normal((2, 4096))
    assert multires_spec_mse(x, x) == 0.0
    with pytest.raises(MetricError):
        multires_spec_mse(x[:, :100], x[:, :100])


def test_rms_and_crest_of_sine_and_square():
    t = np.arange(44100) / 44100
    sine = AudioBuffer(44100, 0.5 * np.sin(2 * np.pi * 441 * t)[None])
    square = AudioBuffer(44100, 0.5 * np.sign(np.sin(2 * np.pi * 441 * t + 0.1))[None])
    assert rms(sine) == pytest.approx(0.5 / math.sqrt(2), rel=1e-9)
    assert crest_factor(sine) == pytest.approx(math.sqrt(2), rel=1e-6)
    assert crest_factor(square) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(UndefinedMetricError):
        crest_factor(AudioBuffer(44100, np.zeros((1, 10))))


def _frame_levels_by_hand(x, frame, hop):
    levels = []
    start = 0
    while start + frame <= len(x):
        seg = x[start:start + frame]
        levels.append(10 * math.log10(sum(v * v for v in seg) / frame))
        start += hop
    mean = sum(levels) / len(levels)
    return sum(abs(v - mean) for v in levels) / len(levels)


def test_dynamic_complexity_alternating_levels():
    sr = 400
    t = np.arange(8 * sr) / sr
    carrier = np.sin(2 * np.pi * 50 * t)
    level = np.where((np.arange(t.size) // sr) % 2 == 0, 1.0, 10 ** (-10 / 20))
    x = carrier * level
    expected = _frame_levels_by_hand(x.tolist(), sr, sr // 2)
    assert dynamic_complexity(AudioBuffer(sr, x[None])) == pytest.approx(expected, abs=1e-9)
    assert dynamic_complexity(AudioBuffer(sr, carrier[None])) == pytest.approx(0.0, abs=1e-9)


def test_spectral_centroid_of_pure_tone():
    sr = 44100
    freq = 100 * sr / 2048  # exactly on a bin
    t = np.arange(sr) / sr
    buf = AudioBuffer(sr, np.sin(2 * np.pi * freq * t)[None])
    assert spectral_centroid(buf) == pytest.approx(freq, rel=0.02)
    with pytest.raises(UndefinedMetricError):
        spectral_centroid(AudioBuffer(sr, np.zeros((1, 4096))))


def test_dynamics_report_fields(rng):
    buf = AudioBuffer(44100, 0.2 * rng.standard_normal((2, 44100 * 4)))
    rep = dynamics_report(buf).to_dict()
    assert set(rep) == {"rms", "crest_factor", "dynamic_complexity", "lra", "spectral_centroid"}
    assert rep["rms"] == pytest.approx(0.2, rel=0.01)


def test_conv_params_small_cases():
    assert conv_params(4, 8, 1, bias=False) + 8 == 40
    assert conv_params(2, 2, 3, bias=False) * 100 == 1200


@pytest.mark.parametrize("cfg", TOY_CONFIGS)
def test_count_params_matches_tally_and_model(cfg):
    assert count_params(cfg) == tally_params(cfg)
    model = build_model(cfg)
    assert count_params(cfg) == sum(p.data.size for p in model.parameters())


@pytest.mark.parametrize("cfg", TOY_CONFIGS)
@pytest.mark.parametrize("seconds", [0.01, 0.5, 1.0])
def test_count_macs_matches_tally(cfg, seconds):
    samples = int(round(seconds * cfg.sample_rate))
    assert count_macs(cfg, seconds) == tally_macs(cfg, samples)


@pytest.mark.parametrize("cfg", TOY_CONFIGS)
def test_count_macs_linear_in_duration(cfg):
    one = count_macs(cfg, 1.0, sample_rate=32000)
    assert count_macs(cfg, 2.0, sample_rate=32000) == 2 * one
    assert count_macs(cfg, 5.0, sample_rate=32000) == 5 * one
