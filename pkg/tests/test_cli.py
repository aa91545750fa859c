import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from delimiter.audio_io import AudioBuffer, read_wav, write_wav
from delimiter.cli import main
from delimiter.dataset import ROLES, make_synthetic_pool
from delimiter.dynamics import LimiterParams, apply_limiter
from delimiter.loudness import integrated_loudness, loudness_normalize
from delimiter.metrics import si_sdr

from oracles import music_like

TINY_NET = ["--N", "8", "--L", "8", "--B", "4", "--H", "6"]


def _hash_tree(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode() + p.read_bytes())
    return h.hexdigest()


def _rows(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


@pytest.fixture
def pool_dir(tmp_path, small_pool):
    small_pool.save(tmp_path / "stems")
    return tmp_path / "stems"


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    code = main(["train", "--count", "6", "--segment-seconds", "0.25", "--epochs", "1", "--batch", "2",
                 "--out", str(out / "run"), *TINY_NET])
    assert code == 0
    return out / "run"


def test_build_data_twice_identical(tmp_path, pool_dir):
    for name in ("a", "b"):
        args = ["build-data", "--pool", str(pool_dir), "--count", "3", "--seed", "7", "--segment-seconds", "0.5"]
        assert main(args + ["--out", str(tmp_path / name)]) == 0
    assert _hash_tree(tmp_path / "a") == _hash_tree(tmp_path / "b")
    header, summary = _rows(tmp_path / "a" / "run.jsonl")
    assert header["provenance"]["seed"] == 7 and header["provenance"]["version"]
    assert summary["count"] == 3


def test_build_data_errors(tmp_path, capsys):
    assert main(["build-data", "--pool", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2
    assert "missing" in capsys.readouterr().err
    assert main(["build-data", "--count", "0", "--out", str(tmp_path / "o")]) == 1


def test_train_writes_checkpoint_log_and_report(trained):
    assert (trained / "best.ckpt").exists()
    log = _rows(trained / "train_log.jsonl")
    assert set(log[0]) == {"step", "train_loss", "val_si_sdr"}
    report = _rows(trained / "report.jsonl")
    assert "provenance" in report[0] and report[-1]["params"] > 0


def test_train_param_count_grows_with_depth(tmp_path):
    counts = []
    for xr in ("2,1", "3,2"):
        out = tmp_path / xr.replace(",", "_")
        assert main(["train", "--count", "3", "--segment-seconds", "0.1", "--epochs", "0", "--xr", xr,
                     "--out", str(out), *TINY_NET]) == 0
        counts.append(_rows(out / "report.jsonl")[-1]["params"])
    assert counts[0] < counts[1]


def test_train_usage_errors(tmp_path, capsys):
    assert main(["train", "--norm", "group", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert all(k in err for k in ("gln", "ln", "bn", "fgln"))
    assert main(["train", "--xr", "2", "--out", str(tmp_path)]) == 1
    assert main(["train", "--xr", "0,1", "--count", "2", "--segment-seconds", "0.1", "--out", str(tmp_path)]) == 1


def test_infer_normalizes_and_parallel_mix(tmp_path, trained, rng):
    src = tmp_path / "in.wav"
    write_wav(AudioBuffer(44100, 0.3 * music_like(rng, 2, 44100)), src, "float32")
    out = tmp_path / "out.wav"
    assert main(["infer", "--checkpoint", str(trained / "best.ckpt"), "--input", str(src), "--out", str(out)]) == 0
    assert integrated_loudness(read_wav(out)).integrated == pytest.approx(-14.0, abs=0.1)
    dry = tmp_path / "dry.wav"
    assert main(["infer", "--checkpoint", str(trained / "best.ckpt"), "--input", str(src), "--out", str(dry),
                 "--parallel-mix", "1.0"]) == 0
    expected = loudness_normalize(read_wav(src), -14.0).data
    np.testing.assert_allclose(read_wav(dry).data, expected, atol=1e-6)


def test_infer_rate_mismatch(tmp_path, trained, capsys):
    src = tmp_path / "in.wav"
    write_wav(AudioBuffer(22050, np.full((2, 22050), 0.1)), src)
    assert main(["infer", "--checkpoint", str(trained / "best.ckpt"), "--input", str(src),
                 "--out", str(tmp_path / "o.wav")]) == 2
    assert "22050" in capsys.readouterr().err


def test_infer_is_deterministic(tmp_path, trained, rng):
    src = tmp_path / "in.wav"
    write_wav(AudioBuffer(44100, 0.3 * music_like(rng, 2, 22050)), src, "float32")
    outs = []
    for name in ("a.wav", "b.wav"):
        assert main(["infer", "--checkpoint", str(trained / "best.ckpt"), "--input", str(src),
                     "--out", str(tmp_path / name)]) == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]


def _oracle_dirs(tmp_path, n=2):
    rng = np.random.default_rng(0)
    dirs = {k: tmp_path / k for k in ("ref", "lim", "est")}
    for d in dirs.values():
        d.mkdir()
    for i in range(n):
        x = AudioBuffer(44100, 0.5 * music_like(rng, 2, 44100 * 3))
        lim, env = apply_limiter(x, LimiterParams(8.0, 0.98, 2.0, 100.0, 3.0))
        write_wav(x, dirs["ref"] / f"t{i}.wav", "float32")
        write_wav(lim, dirs["lim"] / f"t{i}.wav", "float32")
        write_wav(lim.with_data(lim.data / env.gains), dirs["est"] / f"t{i}.wav", "float32")
    return dirs


def test_evaluate_identity_and_oracle(tmp_path, capsys):
    d = _oracle_dirs(tmp_path)
    assert main(["evaluate", "--estimates", str(d["ref"]), "--references", str(d["ref"]),
                 "--report", str(tmp_path / "same.jsonl")]) == 0
    agg = [r for r in _rows(tmp_path / "same.jsonl") if r.get("aggregate") == "estimate"][0]
    assert agg["si_sdr"] == 100.0 and agg["multi_spec_mse"] == 0.0
    assert main(["evaluate", "--estimates", str(d["est"]), "--references", str(d["ref"]), "--inputs", str(d["lim"]),
                 "--report", str(tmp_path / "oracle.jsonl")]) == 0
    rows = _rows(tmp_path / "oracle.jsonl")
    est = [r for r in rows if r.get("aggregate") == "estimate"][0]
    base = [r for r in rows if r.get("aggregate") == "baseline"][0]
    assert est["si_sdr"] >= 60.0 and base["si_sdr"] < est["si_sdr"]
    assert [r["track"] for r in rows if r.get("row") == "estimate"] == ["t0.wav", "t1.wav"]
    assert "SI-SDR [dB]" in capsys.readouterr().out


def test_evaluate_mismatched_sets(tmp_path, capsys):
    d = _oracle_dirs(tmp_path)
    (d["est"] / "t1.wav").rename(d["est"] / "extra.wav")
    assert main(["evaluate", "--estimates", str(d["est"]), "--references", str(d["ref"])]) == 2
    err = capsys.readouterr().err
    assert "extra.wav" in err and "t1.wav" in err


def test_analyze_sine_and_limited(tmp_path):
    audio = tmp_path / "audio"
    audio.mkdir()
    t = np.arange(44100 * 4) / 44100
    write_wav(AudioBuffer(44100, 0.5 * np.sin(2 * np.pi * 1000 * t)[None]), audio / "sine.wav", "float32")
    assert main(["analyze", "--audio", str(audio), "--lufs", "none", "--report", str(tmp_path / "r.jsonl")]) == 0
    row = _rows(tmp_path / "r.jsonl")[1]
    assert row["file"] == "sine.wav"
    assert row["rms"] == pytest.approx(0.5 / np.sqrt(2), rel=1e-6)
    assert row["crest_factor"] == pytest.approx(np.sqrt(2), rel=1e-4)
    assert row["dynamic_complexity"] == pytest.approx(0.0, abs=1e-6)
    assert row["spectral_centroid"] == pytest.approx(1000, rel=0.02)


def test_analyze_limited_has_lower_crest(tmp_path, rng):
    audio = tmp_path / "a"
    audio.mkdir()
    x = AudioBuffer(44100, 0.5 * music_like(rng, 2, 44100 * 4))
    write_wav(x, audio / "original.wav", "float32")
    write_wav(apply_limiter(x, LimiterParams(10.0, 0.98, 2.0, 100.0, 3.0))[0], audio / "limited.wav", "float32")
    assert main(["analyze", "--audio", str(audio), "--report", str(tmp_path / "r.jsonl")]) == 0
    rows = {r["file"]: r for r in _rows(tmp_path / "r.jsonl")[1:]}
    assert rows["limited.wav"]["crest_factor"] < rows["original.wav"]["crest_factor"]
    assert rows["mean"]["rms"] == pytest.approx((rows["limited.wav"]["rms"] + rows["original.wav"]["rms"]) / 2)


def test_analyze_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["analyze", "--audio", str(tmp_path / "empty")]) == 2


def _stem_fixture(tmp_path):
    pool = make_synthetic_pool(n_tracks=1, seconds=3, seed=5)
    stems = {r: pool.tracks[0][r].with_data(pool.tracks[0][r].data * 0.5) for r in ROLES}
    mix = AudioBuffer(44100, sum(s.data for s in stems.values()))
    params = LimiterParams(9.0, 0.98, 2.0, 80.0, 3.0)
    lim, env = apply_limiter(mix, params)
    for sub in ("orig", "lim"):
        (tmp_path / sub).mkdir()
    for role, s in stems.items():
        write_wav(s, tmp_path / "orig" / f"{role}.wav", "float32")
        write_wav(s.with_data(s.data * params.input_gain * env.gains), tmp_path / "lim" / f"{role}.wav", "float32")
    # stems are re-read as float32, so sum them for the mixture the same way
    lim_stems = sum(read_wav(tmp_path / "lim" / f"{r}.wav").data for r in ROLES)
    write_wav(lim.with_data(lim_stems), tmp_path / "limited.wav", "float32")
    write_wav(lim.with_data(lim_stems / env.gains), tmp_path / "delimited.wav", "float32")
    return tmp_path


def test_stems_transfer_oracle_improves_every_stem(tmp_path):
    d = _stem_fixture(tmp_path)
    assert main(["stems-transfer", "--limited", str(d / "limited.wav"), "--delimited", str(d / "delimited.wav"),
                 "--stems", str(d / "lim"), "--references", str(d / "orig"), "--out", str(d / "out"),
                 "--report", str(d / "r.jsonl")]) == 0
    rows = _rows(d / "r.jsonl")[1:]
    assert sorted(r["stem"] for r in rows) == sorted(ROLES)
    for r in rows:
        assert r["si_sdr_transferred"] > r["si_sdr_limited"]


def test_stems_transfer_passthrough_and_bad_sum(tmp_path):
    d = _stem_fixture(tmp_path)
    assert main(["stems-transfer", "--limited", str(d / "limited.wav"), "--delimited", str(d / "limited.wav"),
                 "--stems", str(d / "lim"), "--out", str(d / "same")]) == 0
    for role in ROLES:
        np.testing.assert_array_equal(read_wav(d / "same" / f"{role}.wav").data, read_wav(d / "lim" / f"{role}.wav").data)
    assert main(["stems-transfer", "--limited", str(d / "limited.wav"), "--delimited", str(d / "limited.wav"),
                 "--stems", str(d / "orig"), "--out", str(d / "bad")]) == 2


def test_limit_and_oracle_invert_round_trip(tmp_path, rng):
    src = tmp_path / "x.wav"
    x = AudioBuffer(44100, 0.5 * music_like(rng, 2, 44100))
    write_wav(x, src, "float32")
    assert main(["limit", "--input", str(src), "--out", str(tmp_path / "lim.wav"), "--input-gain-db", "9",
                 "--ceiling", "0.98", "--envelope", str(tmp_path / "env.raw"), "--bit-depth", "float32"]) == 0
    assert main(["oracle-invert", "--input", str(tmp_path / "lim.wav"), "--envelope", str(tmp_path / "env.raw"),
                 "--out", str(tmp_path / "inv.wav")]) == 0
    boosted = read_wav(src).data * 10 ** (9 / 20)
    assert si_sdr(read_wav(tmp_path / "inv.wav"), boosted) >= 60.0
    assert (tmp_path / "env.raw").stat().st_size == 4 * 44100


def test_limit_quiet_passthrough_is_byte_identical(tmp_path, rng):
    src = tmp_path / "quiet.wav"
    write_wav(AudioBuffer(44100, 0.1 * rng.uniform(-1, 1, (2, 4410))), src, 16)
    assert main(["limit", "--input", str(src), "--out", str(tmp_path / "o.wav"),
                 "--envelope", str(tmp_path / "e.wav")]) == 0
    assert (tmp_path / "o.wav").read_bytes() == src.read_bytes()
    assert read_wav(tmp_path / "e.wav").frames == 4410


def test_limit_invalid_params_is_usage_error(tmp_path):
    assert main(["limit", "--input", "x.wav", "--out", "y.wav", "--attack-ms", "5", "--lookahead-ms", "1"]) == 1


def test_config_file_and_flag_precedence(tmp_path, monkeypatch, rng):
    src = tmp_path / "x.wav"
    write_wav(AudioBuffer(44100, 0.5 * music_like(rng, 1, 4410)), src, "float32")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bit_depth": "float32", "limit": {"input-gain-db": 12.0, "ceiling": 0.5,
                                                                  "input": str(src), "out": str(tmp_path / "a.wav")}}))
    assert main(["limit", "--config", str(cfg)]) == 0
    assert np.max(np.abs(read_wav(tmp_path / "a.wav").data)) <= 0.5
    monkeypatch.setenv("DELIMITER_CONFIG", str(cfg))
    assert main(["limit", "--ceiling", "0.25", "--out", str(tmp_path / "b.wav")]) == 0
    peak = np.max(np.abs(read_wav(tmp_path / "b.wav").data))
    assert 0.2 < peak <= 0.25
    cfg.write_text(json.dumps({"limit": {"bogus": 1}}))
    assert main(["limit", "--input", "x", "--out", "y"]) == 1


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "delimiter.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "delimiter" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "delimiter.cli", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 1
