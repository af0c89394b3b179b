"""Command-line entry point: ``mfmvdr-aes {synth,train,enhance,eval}``.

Settings resolve as built-in defaults < ``--config`` JSON file < flags, and
the resolved settings are written next to the outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics, scene, training
from .estimator import ModelSource, load_model
from .mvdr import OracleSource, enhance
from .signal_io import SAMPLE_RATE, Waveform, read_wav, require_rate, write_wav
from .stft import StftConfig, analyze

log = logging.getLogger("mfmvdr_aes")

DEFAULTS = {
    "synth": {"out": None, "n": 100, "seed": 0, "ser_min": -20.0, "ser_max": 10.0,
              "snr_min": 10.0, "snr_max": 40.0, "conditions": None, "snr": 30.0,
              "far_len": 4.0, "near_len": 2.0, "nonlinearity": True, "source": "synthetic"},
    "train": {"manifest": None, "out": None, "model": "mfmvdr", "L": 5, "epochs": 50,
              "lr": 3e-4, "lr_decay": 0.015, "clip_norm": 5.0, "batch_size": 1, "seed": 0,
              "val_fraction": 0.2, "hidden": None, "cgru_hidden": None,
              "full_scale": False, "resume": None},
    "enhance": {"mic": None, "far_end": None, "out": None, "checkpoint": None,
                "oracle": False, "near": None, "echo": None, "noise": None, "L": 5},
    "eval": {"manifest": None, "out": None, "methods": "passthrough", "checkpoint": [],
             "conditions": "-10,-5,0", "snr": 30.0, "L": 5},
}


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfmvdr-aes", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def cmd(name, help_):
        sp = sub.add_parser(name, help=help_, argument_default=S)
        sp.add_argument("--config", help="JSON file with settings for this command")
        return sp

    sp = cmd("synth", "generate a synthetic scene dataset")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--n", type=int, help="number of scenes (per condition with --conditions)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--ser-min", dest="ser_min", type=float)
    sp.add_argument("--ser-max", dest="ser_max", type=float)
    sp.add_argument("--snr-min", dest="snr_min", type=float)
    sp.add_argument("--snr-max", dest="snr_max", type=float)
    sp.add_argument("--conditions", help="comma-separated fixed SER values, e.g. -10,-5,0")
    sp.add_argument("--snr", type=float, help="SNR used with --conditions")
    sp.add_argument("--far-len", dest="far_len", type=float)
    sp.add_argument("--near-len", dest="near_len", type=float)
    sp.add_argument("--no-nonlinearity", dest="nonlinearity", action="store_false")
    sp.add_argument("--source", help="'synthetic' or 'wavdir:PATH'")

    sp = cmd("train", "train an estimator or the mask baseline")
    sp.add_argument("--manifest")
    sp.add_argument("--out")
    sp.add_argument("--model", choices=["mfmvdr", "baseline"])
    sp.add_argument("--L", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--lr-decay", dest="lr_decay", type=float)
    sp.add_argument("--clip-norm", dest="clip_norm", type=float)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--val-fraction", dest="val_fraction", type=float)
    sp.add_argument("--hidden", type=int)
    sp.add_argument("--cgru-hidden", dest="cgru_hidden", type=int)
    sp.add_argument("--full-scale", dest="full_scale", action="store_true")
    sp.add_argument("--resume", help="checkpoint to continue from")

    sp = cmd("enhance", "enhance a microphone recording")
    sp.add_argument("--mic")
    sp.add_argument("--far-end", dest="far_end")
    sp.add_argument("--out")
    sp.add_argument("--checkpoint")
    sp.add_argument("--oracle", action="store_true",
                    help="use true statistics from --near/--echo/--noise")
    sp.add_argument("--near")
    sp.add_argument("--echo")
    sp.add_argument("--noise")
    sp.add_argument("--L", type=int)

    sp = cmd("eval", "evaluate methods over an SER grid")
    sp.add_argument("--manifest")
    sp.add_argument("--out")
    sp.add_argument("--methods", help="comma-separated: passthrough, oracle[-L<n>], or a "
                    "name bound with --checkpoint")
    sp.add_argument("--checkpoint", action="append", help="NAME=PATH (repeatable)")
    sp.add_argument("--conditions", help="comma-separated SER values in dB")
    sp.add_argument("--snr", type=float)
    sp.add_argument("--L", type=int)
    return p


def resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "config")}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            from_file = json.load(fh)
        unknown = set(from_file) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(from_file)
    cfg.update(flags)
    return cfg


def _need(cfg: dict, *keys: str) -> None:
    for key in keys:
        if cfg.get(key) in (None, ""):
            raise UsageError(f"--{key.replace('_', '-')} is required")


def _echo_config(out_dir: Path, command: str, cfg: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{command}_config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)


def cmd_synth(cfg: dict) -> int:
    _need(cfg, "out")
    if cfg["n"] < 1:
        raise UsageError("--n must be >= 1")
    if cfg["ser_min"] > cfg["ser_max"] or cfg["snr_min"] > cfg["snr_max"]:
        raise UsageError("invalid SER/SNR range")
    out = Path(cfg["out"])
    _echo_config(out, "synth", cfg)
    conditions = None
    if cfg["conditions"]:
        conditions = [(s, cfg["snr"]) for s in _floats(cfg["conditions"])]
    records = scene.make_dataset(
        cfg["n"], out, ser_range=(cfg["ser_min"], cfg["ser_max"]),
        snr_range=(cfg["snr_min"], cfg["snr_max"]), conditions=conditions,
        provider=scene.provider_from_name(cfg["source"]), seed=cfg["seed"],
        far_len_s=cfg["far_len"], near_len_s=cfg["near_len"],
        nonlinearity=scene.Nonlinearity(enabled=cfg["nonlinearity"]))
    print(f"wrote {len(records)} scenes to {out / 'manifest.jsonl'}")
    return 0


def cmd_train(cfg: dict) -> int:
    _need(cfg, "manifest", "out")
    if not Path(cfg["manifest"]).exists():
        raise UsageError(f"manifest not found: {cfg['manifest']}")
    try:
        tcfg = training.TrainConfig(
            epochs=cfg["epochs"], lr0=cfg["lr"], lr_decay_per_epoch=cfg["lr_decay"],
            clip_norm=cfg["clip_norm"], batch_size=cfg["batch_size"], seed=cfg["seed"],
            L=cfg["L"], val_fraction=cfg["val_fraction"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    model_cfg = {}
    if cfg["full_scale"]:
        model_cfg = ({"hidden": 256, "cgru_hidden": 96} if cfg["model"] == "mfmvdr"
                     else {"hidden": 512})
    if cfg["hidden"] is not None:
        model_cfg["hidden"] = cfg["hidden"]
    if cfg["cgru_hidden"] is not None and cfg["model"] == "mfmvdr":
        model_cfg["cgru_hidden"] = cfg["cgru_hidden"]
    out = Path(cfg["out"])
    _echo_config(out, "train", cfg)
    result = training.train(cfg["model"], cfg["manifest"], tcfg, out, model_cfg,
                            resume=cfg["resume"])
    last = result["log"][-1]
    print(f"epoch {last['epoch']}: loss {last['mean_loss_db']:.3f} dB; "
          f"checkpoint {result['checkpoint']}")
    return 0


def _read16k(path) -> Waveform:
    w = read_wav(path)
    try:
        require_rate(w, SAMPLE_RATE)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    return w


def cmd_enhance(cfg: dict) -> int:
    _need(cfg, "mic", "out")
    if not cfg["far_end"]:
        raise UsageError("--far-end is required (the loudspeaker reference)")
    mic, far = _read16k(cfg["mic"]), _read16k(cfg["far_end"])
    stft_cfg = StftConfig()
    if cfg["oracle"]:
        _need(cfg, "near", "echo", "noise")
        source = OracleSource(*(analyze(_read16k(cfg[k]), stft_cfg)
                                for k in ("near", "echo", "noise")))
        L = cfg["L"]
    else:
        _need(cfg, "checkpoint")
        model = load_model(cfg["checkpoint"])[0]
        if model.kind != "mfmvdr":
            return _write_clipped(cfg["out"], metrics.model_enhancer(model)(mic, far))
        source, L = ModelSource(model), model.cfg.L
    est = enhance(analyze(mic, stft_cfg), analyze(far, stft_cfg), source, L)
    return _write_clipped(cfg["out"], est.samples)


def _write_clipped(path, samples) -> int:
    peak = np.max(np.abs(samples)) if len(samples) else 0.0
    if peak > 1.0:
        log.warning("output peak %.3f exceeds full scale; rescaling", peak)
        samples = samples / peak
    write_wav(path, Waveform(samples, SAMPLE_RATE))
    print(f"wrote {path}")
    return 0


def _methods(cfg: dict) -> list:
    bound = {}
    for item in cfg["checkpoint"] or []:
        name, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"--checkpoint expects NAME=PATH, got {item!r}")
        bound[name] = path
    names = [m.strip() for m in cfg["methods"].split(",") if m.strip()]
    if not names:
        raise UsageError("no methods given")
    out = []
    for name in names:
        if name == "passthrough":
            out.append(metrics.passthrough_method())
        elif name == "oracle":
            out.append(metrics.oracle_method(cfg["L"], name="oracle"))
        elif name.startswith("oracle-L"):
            out.append(metrics.oracle_method(int(name[len("oracle-L"):]), name=name))
        elif name in bound:
            if not Path(bound[name]).exists():
                raise UsageError(f"checkpoint not found: {bound[name]}")
            out.append(metrics.model_method(bound[name], name=name))
        else:
            raise UsageError(f"method {name!r} needs --checkpoint {name}=PATH")
    return out


def cmd_eval(cfg: dict) -> int:
    _need(cfg, "manifest", "out")
    methods = _methods(cfg)
    sers = _floats(cfg["conditions"])
    out = Path(cfg["out"])
    _echo_config(out, "eval", cfg)
    report = metrics.evaluate(methods, cfg["manifest"], sers, cfg["snr"])
    report.write_csv(out / "report.csv")
    report.write_scene_csv(out / "report_scenes.csv")
    table = report.table()
    (out / "report.txt").write_text(table + "\n")
    print(table)
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "enhance": cmd_enhance, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        parser.error(str(exc))
    except (ValueError, OSError, training.TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
