"""``delimiter`` command-line workbench.

Every subcommand accepts ``--config FILE`` (JSON object; the default path
comes from ``$DELIMITER_CONFIG``). Top-level keys apply to any command that
has that option, a section named after the command overrides them, and
command-line flags override both.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .audio_io import CorruptWavError, WavFormatError, read_wav, read_wav_with_depth, write_wav
from .checkpoint import CheckpointError, load_checkpoint
from .dataset import DatasetBuildError, DatasetManifest, StemPool, build_dataset, generate_pairs, make_synthetic_pool
from .dynamics import DimensionError, LimiterParams, StemSumError, apply_limiter, oracle_inverse, read_envelope
from .dynamics import transfer_gains, write_envelope
from .loudness import NormalizationError, integrated_loudness, loudness_normalize
from .metrics import MetricError, UndefinedMetricError, count_macs, count_params, dynamic_complexity
from .metrics import dynamics_report, multires_spec_mse, si_sdr
from .net import HEADS, NORMS, ConfigError, NetConfig, receptive_field
from .training import TrainHyper, TrainingError, baseline_si_sdr, infer, train

CONFIG_ENV = "DELIMITER_CONFIG"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

DATA_ERRORS = (
    FileNotFoundError, NotADirectoryError, WavFormatError, CorruptWavError, DatasetBuildError, StemSumError,
    DimensionError, NormalizationError, CheckpointError, ConfigError, UndefinedMetricError, MetricError,
)

# destinations that only say where results go; left out of provenance so
# identical runs into different directories still produce identical bytes
_OUTPUT_KEYS = {"out", "report", "config", "command", "func", "workers", "verbose"}

log = logging.getLogger("delimiter")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- small helpers ------------------------------------------------------------

def _xr(text):
    parts = text if isinstance(text, (list, tuple)) else str(text).split(",")
    try:
        x, r = (int(v) for v in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,R such as 2,1; got {text!r}") from None
    return x, r


def _lufs_or_none(text):
    if text is None or str(text).lower() == "none":
        return None
    return float(text)


def _bit_depth(text):
    if str(text) in ("float32", "same"):
        return str(text)
    if str(text) in ("16", "24"):
        return int(text)
    raise argparse.ArgumentTypeError("bit depth must be 16, 24, float32 or same")


def provenance(args) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _OUTPUT_KEYS}
    config = json.loads(json.dumps(config, default=str))
    return {"provenance": {"command": args.command, "config": config, "seed": getattr(args, "seed", None),
                           "version": __version__}}


def write_jsonl(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def wav_files(directory) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".wav")


def _fmt(value, spec="{:.3f}"):
    if value is None:
        return "-"
    if isinstance(value, (int, np.integer)):
        return f"{value:,d}"
    return spec.format(value)


def render_table(headers, rows) -> str:
    cells = [[str(h) for h in headers]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for n, row in enumerate(cells):
        first = row[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join([first] + rest))
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _write_audio(buffer, path, depth):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    clipped = write_wav(buffer, path, depth)
    if clipped:
        log.warning("%s: %d samples clipped", path, clipped)


# -- commands -----------------------------------------------------------------

def cmd_build_data(args):
    if args.count < 1:
        raise UsageError("build-data: --count must be at least 1")
    if args.pool is None:
        pool = make_synthetic_pool(args.pool_tracks, args.pool_seconds, seed=args.pool_seed)
    else:
        pool = StemPool.load(args.pool)
    manifest = build_dataset(pool, args.count, args.out, args.segment_seconds, args.seed, augment=not args.no_augment)
    base = baseline_si_sdr(list(manifest.pairs()))
    summary = {"count": len(manifest.records), "baseline_si_sdr": base}
    write_jsonl(Path(args.out) / "run.jsonl", [provenance(args), summary])
    print(f"wrote {summary['count']} pairs to {args.out}; mean SI-SDR(limited, original) = {base:.2f} dB")


def _net_config(args, sample_rate, channels) -> NetConfig:
    x, r = args.xr
    try:
        return NetConfig(N=args.N, L=args.L, B=args.B, H=args.H, P=args.P, X=x, R=r, norm=args.norm,
                         head=args.head, sample_rate=sample_rate, channels=channels)
    except ConfigError as exc:
        raise UsageError(f"train: {exc}") from None


def cmd_train(args):
    if args.data is not None:
        manifest = DatasetManifest.load(args.data)
        if not manifest.records:
            raise DataError(f"{args.data}: manifest has no records")
        pairs = list(manifest.pairs())
        rate = manifest.records[0].sample_rate
        data_seed = manifest.records[0].seed
    else:
        pool = make_synthetic_pool(seed=args.pool_seed)
        pairs = generate_pairs(pool, args.count, args.segment_seconds, seed=args.data_seed)
        rate, data_seed = pool.sample_rate, args.data_seed
    config = _net_config(args, rate, pairs[0][0].shape[0])
    hyper = TrainHyper(lr=args.lr, batch=args.batch, epochs=args.epochs, seed=args.seed, val_split=args.val_split,
                       clip_norm=args.clip_norm, crop_seconds=args.crop_seconds, dataset_seed=data_seed)
    params = count_params(config)
    print(f"training {config.head} head, norm {config.norm}, (X, R) = ({config.X}, {config.R}): {params:,d} parameters")
    result = train(config, pairs, hyper, out_dir=args.out)
    summary = {
        "params": params,
        "macs_per_second": count_macs(config, 1.0),
        "receptive_field_ms": receptive_field(config),
        "initial_val_si_sdr": result.initial_val_si_sdr,
        "best_val_si_sdr": result.best_val_si_sdr,
        "best_step": result.checkpoint.step,
    }
    write_jsonl(Path(args.out) / "report.jsonl", [provenance(args)] + result.log + [summary])
    print(f"best validation SI-SDR {result.best_val_si_sdr:.2f} dB (untrained {result.initial_val_si_sdr:.2f} dB); "
          f"checkpoint {Path(args.out) / 'best.ckpt'}")


def cmd_infer(args):
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model()
    src = Path(args.input)
    if src.is_dir():
        jobs = [(p, Path(args.out) / p.name) for p in wav_files(src)]
        if not jobs:
            raise DataError(f"no .wav files in {src}")
    elif src.exists():
        jobs = [(src, Path(args.out))]
    else:
        raise FileNotFoundError(f"input not found: {src}")
    rows = [provenance(args)]
    for inp, out in jobs:
        buf, depth = read_wav_with_depth(inp)
        result = infer(model, buf, args.target_lufs, args.parallel_mix, args.memory_budget_seconds)
        _write_audio(result, out, depth if args.bit_depth == "same" else args.bit_depth)
        rows.append({"file": inp.name, "output": str(out), "integrated_lufs": integrated_loudness(result).integrated})
        print(f"{inp.name} -> {out}")
    if args.report:
        write_jsonl(args.report, rows)


def _match(left_dir, right_dir, left_name, right_name):
    left = {p.name: p for p in wav_files(left_dir)}
    right = {p.name: p for p in wav_files(right_dir)}
    if set(left) != set(right):
        only_l = sorted(set(left) - set(right))
        only_r = sorted(set(right) - set(left))
        raise DataError(f"unmatched files; only in {left_name}: {only_l}; only in {right_name}: {only_r}")
    if not left:
        raise DataError(f"no .wav files in {left_dir}")
    return [(name, left[name], right[name]) for name in sorted(left)]


def _score(est_path, ref_path, lufs):
    est, ref = read_wav(est_path), read_wav(ref_path)
    if est.data.shape != ref.data.shape or est.sample_rate != ref.sample_rate:
        raise DimensionError(f"{est_path.name}: shape/rate differs from reference")
    if lufs is not None:
        est, ref = loudness_normalize(est, lufs), loudness_normalize(ref, lufs)
    return si_sdr(est, ref), multires_spec_mse(est.data, ref.data)


def cmd_evaluate(args):
    triples = _match(args.estimates, args.references, "estimates", "references")
    if args.inputs is not None:
        _match(args.inputs, args.references, "inputs", "references")
    rows = [provenance(args)]

    def score_all(src_dir, label):
        scores = _map(lambda t: _score(Path(src_dir) / t[0], t[2], args.lufs), triples, args.workers)
        for (name, _, _), (sdr, mse) in zip(triples, scores):
            rows.append({"row": label, "track": name, "si_sdr": sdr, "multi_spec_mse": mse})
        return float(np.mean([s for s, _ in scores])), float(np.mean([m for _, m in scores]))

    table = []
    if args.inputs is not None:
        sdr, mse = score_all(args.inputs, "baseline")
        rows.append({"aggregate": "baseline", "si_sdr": sdr, "multi_spec_mse": mse, "params": None, "macs": None})
        table.append(["input vs reference", _fmt(sdr, "{:.2f}"), _fmt(mse, "{:.5f}"), "-", "-"])
    sdr, mse = score_all(args.estimates, "estimate")
    params = macs = None
    label = "estimate vs reference"
    if args.checkpoint is not None:
        cfg = load_checkpoint(args.checkpoint).config
        params, macs = count_params(cfg), count_macs(cfg, args.macs_seconds)
        label = f"{cfg.head} ({cfg.X},{cfg.R})"
    rows.append({"aggregate": "estimate", "si_sdr": sdr, "multi_spec_mse": mse, "params": params, "macs": macs})
    table.append([label, _fmt(sdr, "{:.2f}"), _fmt(mse, "{:.5f}"), _fmt(params), _fmt(macs)])
    print(render_table(["Method", "SI-SDR [dB]", "Multi-spec MSE", "# params", f"MACs / {args.macs_seconds:g} s"], table))
    if args.report:
        write_jsonl(args.report, rows)


def _analyze_one(path, lufs):
    buf = read_wav(path)
    if lufs is not None:
        buf = loudness_normalize(buf, lufs)
    return dynamics_report(buf).to_dict()


def cmd_analyze(args):
    files = wav_files(args.audio)
    if not files:
        raise DataError(f"no .wav files in {args.audio}")
    reports = _map(lambda p: _analyze_one(p, args.lufs), files, args.workers)
    keys = ["rms", "crest_factor", "dynamic_complexity", "lra", "spectral_centroid"]
    rows = [provenance(args)]
    table = []
    for path, rep in zip(files, reports):
        rows.append({"file": path.name, **rep})
        table.append([path.name] + [_fmt(rep[k]) for k in keys])
    mean = {k: float(np.mean([r[k] for r in reports])) for k in keys}
    rows.append({"file": "mean", **mean})
    table.append(["mean"] + [_fmt(mean[k]) for k in keys])
    print(render_table(["File", "RMS", "Crest factor", "Dyn. complexity", "LRA [LU]", "Centroid [Hz]"], table))
    if args.report:
        write_jsonl(args.report, rows)


def cmd_stems_transfer(args):
    limited, delimited = read_wav(args.limited), read_wav(args.delimited)
    stem_files = wav_files(args.stems)
    if not stem_files:
        raise DataError(f"no stem .wav files in {args.stems}")
    stems = [read_wav(p) for p in stem_files]
    out = transfer_gains(limited, delimited, stems, epsilon=args.epsilon)
    refs = None
    if args.references is not None:
        ref_files = {p.name: p for p in wav_files(args.references)}
        missing = [p.name for p in stem_files if p.name not in ref_files]
        if missing:
            raise DataError(f"references missing for stems: {missing}")
        refs = [read_wav(ref_files[p.name]) for p in stem_files]
    rows = [provenance(args)]
    table = []
    for i, (path, stem, new) in enumerate(zip(stem_files, stems, out)):
        _write_audio(new, Path(args.out) / path.name, "float32")
        row = {"stem": path.stem, "delta_dynamic_complexity": dynamic_complexity(new) - dynamic_complexity(stem),
               "si_sdr_limited": None, "si_sdr_transferred": None}
        if refs is not None:
            row["si_sdr_limited"] = si_sdr(stem, refs[i])
            row["si_sdr_transferred"] = si_sdr(new, refs[i])
        rows.append(row)
        table.append([path.stem, _fmt(row["si_sdr_limited"], "{:.2f}"), _fmt(row["si_sdr_transferred"], "{:.2f}"),
                      _fmt(row["delta_dynamic_complexity"], "{:+.3f}")])
    print(render_table(["Stem", "SI-SDR limited [dB]", "SI-SDR transferred [dB]", "ΔDC [dB]"], table))
    if args.report:
        write_jsonl(args.report, rows)


def _envelope_format(args):
    if args.envelope_format:
        return args.envelope_format
    return "wav" if str(args.envelope).lower().endswith(".wav") else "raw"


def cmd_limit(args):
    try:
        params = LimiterParams(args.input_gain_db, args.ceiling, args.attack_ms, args.release_ms, args.lookahead_ms)
    except ValueError as exc:
        raise UsageError(f"limit: {exc}") from None
    buf, depth = read_wav_with_depth(args.input)
    out, env = apply_limiter(buf, params)
    _write_audio(out, args.out, depth if args.bit_depth == "same" else args.bit_depth)
    if args.envelope:
        write_envelope(env, args.envelope, buf.sample_rate, _envelope_format(args))
    print(f"limited {args.input} -> {args.out}; min gain {env.gains.min() if len(env) else 1.0:.4f}")


def cmd_oracle_invert(args):
    buf, depth = read_wav_with_depth(args.input)
    env = read_envelope(args.envelope, _envelope_format(args))
    out = oracle_inverse(buf, env, args.gain_floor)
    _write_audio(out, args.out, depth if args.bit_depth == "same" else args.bit_depth)
    print(f"inverted {args.input} -> {args.out}")


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1, help="threads for per-file work")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="delimiter", description="De-limiter workbench")
    parser.add_argument("--version", action="version", version=f"delimiter {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("build-data", parents=[common], help="render (limited, original) training pairs")
    p.add_argument("--pool", help="stem pool directory (<track>/{vocals,bass,drums,other}.wav); "
                                  "omit for the built-in synthetic pool")
    p.add_argument("--pool-tracks", type=int, default=4)
    p.add_argument("--pool-seconds", type=float, default=20.0)
    p.add_argument("--pool-seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--segment-seconds", type=float, default=4.0)
    p.add_argument("--no-augment", action="store_true", help="whole-track mixes without random gains or swaps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_data)

    p = sub.add_parser("train", parents=[common], help="train a de-limiter network")
    p.add_argument("--data", help="dataset directory from build-data; omit to generate synthetic pairs")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--segment-seconds", type=float, default=4.0)
    p.add_argument("--data-seed", type=int, default=1)
    p.add_argument("--pool-seed", type=int, default=0)
    p.add_argument("--head", choices=HEADS, default="sgi")
    p.add_argument("--norm", choices=NORMS, default="gln")
    p.add_argument("--xr", type=_xr, default=(2, 1), metavar="X,R")
    for name, default in (("N", 128), ("L", 32), ("B", 32), ("H", 64), ("P", 3)):
        p.add_argument(f"--{name}", type=int, default=default)
    defaults = TrainHyper()
    p.add_argument("--lr", type=float, default=defaults.lr)
    p.add_argument("--batch", type=int, default=defaults.batch)
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--val-split", type=float, default=defaults.val_split)
    p.add_argument("--clip-norm", type=float, default=defaults.clip_norm)
    p.add_argument("--crop-seconds", type=float, default=defaults.crop_seconds)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="de-limit a file or directory of files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target-lufs", type=float, default=-14.0)
    p.add_argument("--parallel-mix", type=float, default=None, metavar="RATIO")
    p.add_argument("--memory-budget-seconds", type=float, default=600.0)
    p.add_argument("--bit-depth", type=_bit_depth, default="float32")
    p.add_argument("--report")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", parents=[common], help="SI-SDR / multi-spec MSE report")
    p.add_argument("--estimates", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--inputs", help="limited inputs, for the baseline row")
    p.add_argument("--checkpoint", help="adds parameter and MAC counts")
    p.add_argument("--macs-seconds", type=float, default=1.0)
    p.add_argument("--lufs", type=_lufs_or_none, default=-14.0, help="normalise before scoring ('none' to skip)")
    p.add_argument("--report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", parents=[common], help="dynamics report for a directory of audio")
    p.add_argument("--audio", required=True)
    p.add_argument("--lufs", type=_lufs_or_none, default=-14.0, help="normalise before analysis ('none' to skip)")
    p.add_argument("--report")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("stems-transfer", parents=[common], help="carry mix-level de-limiting gains to stems")
    p.add_argument("--limited", required=True)
    p.add_argument("--delimited", required=True)
    p.add_argument("--stems", required=True, help="directory of stems of the limited mix")
    p.add_argument("--references", help="directory of original stems with the same names")
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_stems_transfer)

    p = sub.add_parser("limit", parents=[common], help="apply the lookahead limiter")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    lim = LimiterParams()
    p.add_argument("--input-gain-db", type=float, default=lim.input_gain_db)
    p.add_argument("--ceiling", type=float, default=lim.ceiling)
    p.add_argument("--attack-ms", type=float, default=lim.attack_ms)
    p.add_argument("--release-ms", type=float, default=lim.release_ms)
    p.add_argument("--lookahead-ms", type=float, default=lim.lookahead_ms)
    p.add_argument("--envelope", help="where to write the gain envelope")
    p.add_argument("--envelope-format", choices=("wav", "raw"))
    p.add_argument("--bit-depth", type=_bit_depth, default="same")
    p.set_defaults(func=cmd_limit)

    p = sub.add_parser("oracle-invert", parents=[common], help="undo a limiter given its gain envelope")
    p.add_argument("--input", required=True)
    p.add_argument("--envelope", required=True)
    p.add_argument("--envelope-format", choices=("wav", "raw"))
    p.add_argument("--gain-floor", type=float, default=1e-7)
    p.add_argument("--out", required=True)
    p.add_argument("--bit-depth", type=_bit_depth, default="same")
    p.set_defaults(func=cmd_oracle_invert)
    return parser


def _find_config(argv):
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if arg.startswith("--config="):
            return arg.split("=", 1)[1]
    return os.environ.get(CONFIG_ENV) or None


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices.get(name)
    return None


def _apply_config_file(parser, argv):
    path = _find_config(argv)
    if path is None:
        return
    try:
        values = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path}: {exc}") from None
    if not isinstance(values, dict):
        raise UsageError(f"config file {path}: expected a JSON object")
    command = next((a for a in argv if not a.startswith("-") and _subparser(parser, a) is not None), None)
    if command is None:
        return
    sp = _subparser(parser, command)
    known = {a.dest for a in sp._actions}
    merged = {k: v for k, v in values.items() if not isinstance(v, dict)}
    merged.update(values.get(command, {}))
    defaults = {}
    for key, value in merged.items():
        dest = key.replace("-", "_")
        if dest not in known:
            if key in values and key not in values.get(command, {}):
                continue  # top-level key meant for another command
            raise UsageError(f"config file {path}: unknown option {key!r} for {command}")
        defaults[dest] = value
    sp.set_defaults(**defaults)
    for action in sp._actions:
        if action.dest in defaults and action.required:
            action.required = False


def _check_choices(parser, args):
    sp = _subparser(parser, args.command)
    for action in sp._actions:
        value = getattr(args, action.dest, None)
        if action.choices is not None and value is not None and value not in action.choices:
            raise UsageError(f"{action.dest}: invalid choice {value!r} (choose from {', '.join(action.choices)})")
        if action.dest == "xr" and isinstance(value, list):
            setattr(args, "xr", _xr(value))
    for required in ("out",):
        if hasattr(args, required) and getattr(args, required) is None:
            raise UsageError(f"{args.command}: --{required} is required")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        _check_choices(parser, args)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, *DATA_ERRORS) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, ArithmeticError, OSError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
