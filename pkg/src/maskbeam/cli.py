"""Command-line entry point: simulate | train | enhance | bench | report | evaluate.

Every command reads an optional flat ``key = value`` config, lets a few flags
override it, writes its artifacts into ``out`` and records a manifest with the
config hash, seed and library versions. Exit status: 0 success, 1 runtime
failure, 2 invalid configuration.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

from . import __version__
from .beamforming import BEAMFORMERS, DEFAULT_BLOCK, PSD_MODES, beamform
from .fileio import ConfigError, read_config, read_masks, read_wav, write_config, write_masks, \
    write_wav
from .metrics import EvalReport, delta_snr, mask_scores, write_eval_csv
from .network import PrecisionMismatchError, complexity_report, extract_features, mask_net_forward
from .quant import PRECISIONS, precision
from .stft import StftConfig, istft, stft

log = logging.getLogger("maskbeam")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

DEFAULTS = {
    "simulate": {"scenario": "2", "seed": "0", "duration": "4.0", "num_mics": "6",
                 "fft_size": "1024", "hop": "256", "noise_gain": "1.0", "interferer_gain": "1.0",
                 "out": "sim"},
    "train": {"seed": "0", "precision": "f32", "epochs": "200", "batch_size": "4",
              "learn_rate": "0.001", "validation_period": "20", "patience": "3",
              "num_train": "16", "num_val": "4", "frames": "64", "num_mics": "2",
              "fft_size": "64", "hop": "16", "noise_gain": "0.1", "scenario": "2", "out": "train"},
    "enhance": {"data": "sim", "weights": "", "oracle": "true", "precision": "f32",
                "beamformer": "gev-ban", "psd": "block", "L": str(DEFAULT_BLOCK), "seed": "0",
                "out": "enhance"},
    "bench": {"sizes": "64,128,256,512,1024", "reps": "3", "seed": "0", "out": "bench"},
    "report": {"M": "6", "K": "513", "T": "500", "out": ""},
    "evaluate": {"data": "sim", "enhanced": "enhance/enhanced.wav", "seed": "0",
                 "out": "evaluate"},
}


# ---------------------------------------------------------------------------
# Config helpers
# ---------------------------------------------------------------------------

def _get(cfg, key, kind=str):
    try:
        raw = cfg[key]
    except KeyError:
        raise ConfigError(f"missing config key {key!r}") from None
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None


def _choice(cfg, key, options):
    v = cfg[key]
    if v not in options:
        raise ConfigError(f"invalid {key} {v!r}; expected one of {', '.join(options)}")
    return v


def _existing(path, what):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _content_keys(cfg: dict) -> dict:
    # where results are written does not change what they are
    return {k: v for k, v in cfg.items() if k != "out"}


def config_hash(cfg: dict) -> str:
    cfg = _content_keys(cfg)
    canon = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(canon.encode()).hexdigest()


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions() -> dict:
    out = {"maskbeam": __version__, "python": platform.python_version()}
    for pkg in ("numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


def write_manifest(out: Path, command: str, cfg: dict, outputs) -> dict:
    """Manifest with config hash, seed, versions and output file hashes.

    ``manifest_hash`` covers the config and outputs only, so identical runs
    produce identical hashes across machines with the same outputs.
    """
    files = {Path(p).name: _file_hash(p) for p in outputs}
    body = {"command": command, "config_hash": config_hash(cfg), "seed": cfg.get("seed"),
            "outputs": files}
    body["manifest_hash"] = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
    body["versions"] = _versions()
    body["config"] = cfg
    (out / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return body


def _outdir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: dict) -> int:
    from .roomsim import SCENARIOS, ScenarioConfig, build_scenario

    scenario = _get(cfg, "scenario", int)
    if scenario not in SCENARIOS:
        raise ConfigError(f"invalid scenario id {scenario}; expected 1..{len(SCENARIOS)}")
    stft_cfg = _stft_config(cfg)
    try:
        sc_cfg = ScenarioConfig(scenario=scenario, seed=_get(cfg, "seed", int),
                                duration=_get(cfg, "duration", float),
                                num_mics=_get(cfg, "num_mics", int), stft=stft_cfg,
                                noise_gain=_get(cfg, "noise_gain", float),
                                interferer_gain=_get(cfg, "interferer_gain", float))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    sc = build_scenario(sc_cfg)
    out = _outdir(cfg)
    fs = stft_cfg.sample_rate
    paths = [out / "mixture.wav", out / "speech.wav", out / "interference.wav",
             out / "masks.mbmk", out / "config.txt"]
    write_wav(paths[0], sc.signals["mixture"], fs)
    write_wav(paths[1], sc.signals["clean"], fs)
    write_wav(paths[2], sc.signals["interference"], fs)
    write_masks(paths[3], sc.masks)
    write_config(paths[4], _content_keys(cfg))
    man = write_manifest(out, "simulate", cfg, paths)
    print(f"simulated scenario {scenario} -> {out} ({man['manifest_hash'][:12]})")
    return EXIT_OK


def _stft_config(cfg) -> StftConfig:
    try:
        return StftConfig(fft_size=_get(cfg, "fft_size", int), hop=_get(cfg, "hop", int))
    except ValueError as e:
        raise ConfigError(str(e)) from None


def cmd_train(cfg: dict) -> int:
    from .training import TrainConfig, toy_dataset, train

    prec = _choice(cfg, "precision", list(PRECISIONS))
    _stft_config(cfg)
    tc = TrainConfig(precision=prec, epochs=_get(cfg, "epochs", int),
                     batch_size=_get(cfg, "batch_size", int),
                     learn_rate=_get(cfg, "learn_rate", float),
                     validation_period=_get(cfg, "validation_period", int),
                     patience=_get(cfg, "patience", int), seed=_get(cfg, "seed", int))
    if tc.epochs < 1 or tc.batch_size < 1 or tc.validation_period < 1:
        raise ConfigError("epochs, batch_size and validation_period must be positive")
    num_train, num_val = _get(cfg, "num_train", int), _get(cfg, "num_val", int)
    if num_train < 1 or num_val < 1:
        raise ConfigError("empty dataset: num_train and num_val must be positive")
    data = toy_dataset(num_train, num_val, frames=_get(cfg, "frames", int), seed=tc.seed,
                       num_mics=_get(cfg, "num_mics", int), fft_size=_get(cfg, "fft_size", int),
                       hop=_get(cfg, "hop", int), noise_gain=_get(cfg, "noise_gain", float),
                       scenario=_get(cfg, "scenario", int))
    out = _outdir(cfg)
    wpath, cpath = out / "weights.mbnw", out / "curves.csv"
    res = train(tc, data, curves_path=cpath, weights_path=wpath)
    write_manifest(out, "train", cfg, [wpath, cpath])
    print(f"best validation loss {res.best_val:.4f} at epoch {res.best_epoch} -> {wpath}")
    return EXIT_OK


def cmd_enhance(cfg: dict) -> int:
    data = _existing(cfg["data"], "dataset directory")
    beamformer = _choice(cfg, "beamformer", BEAMFORMERS)
    psd = _choice(cfg, "psd", PSD_MODES)
    prec = precision(_choice(cfg, "precision", list(PRECISIONS)))
    L = _get(cfg, "L", int)
    if L < 1:
        raise ConfigError("L must be positive")
    oracle = _get(cfg, "oracle", bool)
    sim = read_config(_existing(data / "config.txt", "dataset config"))
    stft_cfg = _stft_config(sim)
    x, fs = read_wav(_existing(data / "mixture.wav", "mixture"))
    stft_cfg = StftConfig(stft_cfg.fft_size, stft_cfg.hop, fs)
    Z = stft(x, stft_cfg)
    p_opt = read_masks(_existing(data / "masks.mbmk", "mask file"))
    if p_opt.shape[:2] != Z.data.shape[1:]:
        raise ConfigError("mask file does not match the mixture STFT")
    scores = {}
    if oracle:
        masks = p_opt
    else:
        from .weightfile import load_weights

        if not cfg.get("weights"):
            raise ConfigError("weights path required when oracle = false")
        params = load_weights(_existing(cfg["weights"], "weight file"))
        masks = mask_net_forward(params, extract_features(Z), prec=prec)
        scores = mask_scores(masks, p_opt)
    Y, _ = beamform(Z, masks, beamformer=beamformer, psd=psd, L=L)
    out = _outdir(cfg)
    wav = out / "enhanced.wav"
    write_wav(wav, istft(Y)[0], fs)
    dsnr, capped = delta_snr(Y, Z, p_opt, with_flag=True)
    rep = EvalReport(dsnr, scores.get("cross_entropy", float("nan")),
                     scores.get("accuracy", float("nan")), capped)
    csv_path = out / "eval.csv"
    write_eval_csv(csv_path, [{"scenario": sim.get("scenario", ""), "beamformer": beamformer,
                               "precision": "oracle" if oracle else str(prec), "report": rep}])
    write_manifest(out, "enhance", cfg, [wav, csv_path])
    print(f"delta SNR {dsnr:.2f} dB{' (capped)' if capped else ''} -> {wav}")
    return EXIT_OK


def cmd_evaluate(cfg: dict) -> int:
    data = _existing(cfg["data"], "dataset directory")
    sim = read_config(_existing(data / "config.txt", "dataset config"))
    x, fs = read_wav(_existing(data / "mixture.wav", "mixture"))
    y, fs_y = read_wav(_existing(cfg["enhanced"], "enhanced WAV"))
    if fs != fs_y:
        raise ConfigError("sample rates of mixture and enhanced signal differ")
    base = _stft_config(sim)
    stft_cfg = StftConfig(base.fft_size, base.hop, fs)
    Z, Y = stft(x, stft_cfg), stft(y[:1], stft_cfg)
    p_opt = read_masks(_existing(data / "masks.mbmk", "mask file"))
    T = min(Z.num_frames, Y.num_frames)
    dsnr, capped = delta_snr(Y.data[..., :T], Z.data[..., :T], p_opt[:, :T], with_flag=True)
    out = _outdir(cfg)
    csv_path = out / "eval.csv"
    write_eval_csv(csv_path, [{"scenario": sim.get("scenario", ""), "beamformer": "",
                               "precision": "", "report": EvalReport(dsnr, capped=capped)}])
    write_manifest(out, "evaluate", cfg, [csv_path])
    print(f"delta SNR {dsnr:.2f} dB{' (capped)' if capped else ''}")
    return EXIT_OK


def cmd_bench(cfg: dict) -> int:
    from .binkernel import bench_matmul, write_bench_csv

    try:
        sizes = sorted({int(s) for s in cfg["sizes"].split(",") if s.strip()})
    except ValueError:
        raise ConfigError(f"invalid sizes {cfg['sizes']!r}") from None
    reps = _get(cfg, "reps", int)
    if not sizes or sizes[0] < 64 or reps < 1:
        raise ConfigError("sizes must be >= 64 and reps >= 1")
    rows = bench_matmul(sizes, reps=reps, seed=_get(cfg, "seed", int))
    out = _outdir(cfg)
    path = out / "bench.csv"
    write_bench_csv(path, rows)
    write_manifest(out, "bench", cfg, [path])
    for r in rows:
        print(f"{r['size']:>6}  float {r['time_float_ms']:9.3f} ms  binary "
              f"{r['time_binary_ms']:9.3f} ms  speedup {r['speedup']:6.2f}x")
    return EXIT_OK


def cmd_report(cfg: dict) -> int:
    M, K, T = (_get(cfg, k, int) for k in ("M", "K", "T"))
    if min(M, K, T) < 1:
        raise ConfigError("M, K and T must be positive")
    text = complexity_report(M, K, T).format()
    print(text)
    if cfg.get("out"):
        out = _outdir(cfg)
        path = out / "report.txt"
        path.write_text(text + "\n")
        write_manifest(out, "report", cfg, [path])
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "enhance": cmd_enhance,
            "bench": cmd_bench, "report": cmd_report, "evaluate": cmd_evaluate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="maskbeam", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="key = value config file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--precision", choices=["f32", "q2.6", "q2.2", "bin1"])
    ap.add_argument("--beamformer", choices=list(BEAMFORMERS))
    ap.add_argument("--psd", choices=list(PSD_MODES))
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key (repeatable)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS[args.command])
    if args.config:
        cfg.update(read_config(_existing(args.config, "config file")))
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = v.strip()
    for key in ("seed", "precision", "beamformer", "psd", "out"):
        v = getattr(args, key)
        if v is not None:
            cfg[key] = str(v)
    unknown = set(cfg) - set(DEFAULTS[args.command])
    if unknown:
        raise ConfigError(f"unknown config keys for {args.command}: {', '.join(sorted(unknown))}")
    return cfg


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, PrecisionMismatchError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
