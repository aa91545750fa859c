import numpy as np
import pytest

from delimiter.autodiff import ShapeError, neg_si_sdr
from delimiter.net import (
    ConfigError,
    NetConfig,
    build_model,
    encoder_frames,
    encoder_padding,
    parameter_shapes,
    receptive_field,
    receptive_field_samples,
)

from oracles import music_like

TINY = NetConfig(N=16, L=8, B=8, H=12, P=3, X=2, R=1, sample_rate=8000)


@pytest.mark.parametrize("head", ["sgi", "masking", "synthesis"])
@pytest.mark.parametrize("norm", ["gln", "ln", "bn", "fgln"])
def test_output_shape_matches_input(rng, head, norm):
    model = build_model(TINY.with_(head=head, norm=norm), seed=1)
    for n in (8, 37, 200):
        y, _ = model.forward(rng.standard_normal((2, n)))
        assert y.shape == (2, n)
    y, _ = model.forward(rng.standard_normal((3, 2, 50)), training=True)
    assert y.shape == (3, 2, 50)


@pytest.mark.parametrize("seed", range(5))
def test_sgi_output_bounded_and_in_phase(seed):
    r = np.random.default_rng(seed)
    cfg = TINY.with_(norm=["gln", "ln", "bn", "fgln", "gln"][seed])
    model = build_model(cfg, seed=seed)
    for p in model.parameters():
        p.data = p.data * r.uniform(0.5, 4.0)
    x = 3 * r.standard_normal((2, 2, 300))
    y, aux = model.forward(x)
    assert np.all(np.abs(y.data) <= np.abs(x))
    assert np.all(y.data * x >= 0)
    g = aux["gains"].data
    assert np.all((g > 0) & (g < 1))


def test_sgi_zero_input_gives_zero_output():
    y, _ = build_model(TINY).forward(np.zeros((2, 64)))
    np.testing.assert_array_equal(y.data, 0.0)


def test_forward_is_deterministic_for_a_seed(rng):
    x = rng.standard_normal((2, 100))
    a = build_model(TINY, seed=4).forward(x)[0].data
    b = build_model(TINY, seed=4).forward(x)[0].data
    c = build_model(TINY, seed=5).forward(x)[0].data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_shape_errors(rng):
    model = build_model(TINY)
    with pytest.raises(ShapeError):
        model.forward(rng.standard_normal((1, 100)))
    with pytest.raises(ShapeError):
        model.forward(rng.standard_normal((2, 4)))


@pytest.mark.parametrize("bad", [dict(X=0), dict(R=0), dict(L=7), dict(norm="group"), dict(head="dual"), dict(N=2.5)])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        NetConfig(**bad)


def test_config_round_trip():
    cfg = NetConfig(head="masking", norm="bn")
    assert NetConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        NetConfig.from_dict({"M": 3})


@pytest.mark.parametrize("samples", [1, 15, 16, 17, 100, 4410])
def test_encoder_padding_frame_count(samples):
    left, right = encoder_padding(samples, 32)
    assert (samples + left + right - 32) // 16 + 1 == encoder_frames(samples, 32) == -(-samples // 16)


def test_receptive_field_published_configs():
    # 5 and 8 blocks, 2 and 3 repeats, 128-sample encoder at 44.1 kHz
    assert receptive_field(NetConfig(L=128, X=5, R=2)) == pytest.approx(183, abs=0.5)
    assert receptive_field(NetConfig(L=128, X=8, R=3)) == pytest.approx(2223, abs=0.5)


def test_receptive_field_degenerate_is_encoder_kernel():
    cfg = NetConfig(L=64, X=1, R=1, P=1)
    assert receptive_field(cfg) == pytest.approx(1000 * 64 / 44100)


def test_deeper_config_has_larger_field():
    assert receptive_field(NetConfig(X=8, R=3)) > receptive_field(NetConfig(X=5, R=2))


def test_receptive_field_perturbation_probe(rng):
    # layer norm keeps statistics local in time; global norms would leak everywhere
    cfg = NetConfig(N=8, L=8, B=6, H=6, P=3, X=3, R=1, norm="ln", channels=1, sample_rate=8000)
    model = build_model(cfg, seed=2)
    rf = receptive_field_samples(cfg)
    n, probe = 1000, 500
    x = rng.standard_normal((1, n))
    base = model.forward(x)[1]["gains"].data[0, probe]

    def change_at_probe(offset):
        moved = x.copy()
        moved[0, probe + offset] += 1.0
        return abs(model.forward(moved)[1]["gains"].data[0, probe] - base)

    assert change_at_probe(0) > 0
    assert change_at_probe(rf // 4) > 0
    for offset in (rf, -rf, rf + 7, -rf - 13):
        assert change_at_probe(offset) == 0.0


def test_parameter_names_are_unique_and_ordered():
    names = list(parameter_shapes(NetConfig(X=2, R=2)))
    assert len(names) == len(set(names))
    assert names[0] == "encoder.weight" and names[-1] == "decoder.bias"


def test_sgi_loss_matches_forward_output(rng):
    model = build_model(TINY, seed=3)
    x = rng.standard_normal((2, 2, 64))
    tgt = rng.standard_normal((2, 2, 64))
    y, _ = model.forward(x)
    from delimiter.metrics import si_sdr
    assert float(neg_si_sdr(y, tgt).data) == pytest.approx(-np.mean([si_sdr(a, b) for a, b in zip(y.data, tgt)]))


def test_sgi_oracle_learnability(rng):
    """Feeding the ideal inversion gains through the head's sigmoid recovers the original."""
    from delimiter.audio_io import AudioBuffer
    from delimiter.autodiff import Tensor, sigmoid
    from delimiter.dynamics import LimiterParams, apply_limiter, sgi_target
    from delimiter.metrics import si_sdr

    x = AudioBuffer(44100, music_like(rng, 2, 44100))
    limited, env = apply_limiter(x, LimiterParams(10.0, 0.98, 2.0, 100.0, 3.0))
    g = np.clip(sgi_target(env).gains, 1e-12, 1 - 2**-52)
    logits = Tensor(np.log(g) - np.log1p(-g))
    y = sigmoid(logits) * Tensor(limited.data)
    assert si_sdr(y.data, x) >= 60.0
