"""Command-line entry point: ``sgdlab run | verify | inspect-model``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..instances import BUILTIN
from ..models import ModelError, check_cocoercivity, load_model
from .acceptance import Settings, verify_all
from .config import ConfigError, load_config
from .experiments import run_experiment

EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 1, 2, 3


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgdlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required):
        sp.add_argument("--config", required=config_required, help="TOML config file")
        sp.add_argument("--seed", type=_u64, help="override the config seed")
        sp.add_argument("--workers", type=_positive, help="worker processes for independent tasks")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--no-plots", action="store_true", help="skip SVG plots")

    common(sub.add_parser("run", help="run one experiment"), True)
    common(sub.add_parser("verify", help="run the acceptance suite"), False)
    ins = sub.add_parser("inspect-model", help="validate a model file and print its constants")
    ins.add_argument("model", nargs="?", help="model TOML file or built-in name")
    ins.add_argument("--config", help="take the model from a run config")
    ins.add_argument("--seed", type=_u64, default=0)
    return p


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    cfg = cfg.with_overrides(seed=args.seed, workers=args.workers, out=args.out)
    if args.no_plots:
        cfg.plots = False
    code, summary, out_dir = run_experiment(cfg)
    print(json.dumps({"status": "ok" if code == 0 else "diverged", "out": str(out_dir)}, indent=None))
    return code


def _verify_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None
    allowed = {"horizon", "seed", "criteria", "model", "models", "workers", "out"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown verify keys: {', '.join(sorted(unknown))}")
    base = Path(path).parent
    models = list(raw.get("models", [])) + ([raw["model"]] if "model" in raw else [])
    for m in models:
        if m in BUILTIN:
            continue
        mp = Path(m) if Path(m).is_absolute() else base / m
        load_model(mp)  # fail before any run
    return raw


def cmd_verify(args) -> int:
    raw = _verify_config(args.config)
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    workers = args.workers or int(raw.get("workers", 1))
    settings = Settings.from_horizon(raw.get("horizon"), seed=seed, workers=workers)
    only = set(int(c) for c in raw["criteria"]) if "criteria" in raw else None
    results = verify_all(settings, only=only, log=lambda line: print(line, flush=True))
    out = args.out or raw.get("out")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        with open(Path(out) / "acceptance_report.json", "w") as fh:
            json.dump({"seed": seed, "truncated": settings.truncated,
                       "results": [r.as_dict() for r in results]}, fh, indent=2, default=_plain)
            fh.write("\n")
    n_fail = sum(r.status == "FAIL" for r in results)
    print(f"summary: {sum(r.status == 'PASS' for r in results)} PASS, {n_fail} FAIL, "
          f"{sum(r.status == 'SKIP' for r in results)} SKIP")
    return EXIT_FAIL if n_fail else 0


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return str(obj)


def cmd_inspect(args) -> int:
    if args.config:
        model = load_config(args.config).load_model()
    elif args.model in BUILTIN:
        model = BUILTIN[args.model]()
    elif args.model:
        model = load_model(args.model)
    else:
        raise ConfigError("give a model file, a built-in name or --config")
    info = model.constants()
    info["cocoercivity_violation"] = check_cocoercivity(model, np.random.default_rng(args.seed))
    info["cocoercivity_ok"] = info["cocoercivity_violation"] <= 0
    info["noise_moment_conditions"] = "satisfied (finite discrete distribution)"
    info["max_step"] = 2 / model.L
    print(json.dumps(info, indent=2, default=_plain))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "verify":
            return cmd_verify(args)
        return cmd_inspect(args)
    except (ConfigError, ModelError) as err:
        print(f"sgdlab: error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
