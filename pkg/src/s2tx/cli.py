"""Command-line entry point: ``s2tx <command> [--config FILE] [--key value ...]``.

Every ExperimentConfig field has a matching flag (``--patch_len_global`` or
``--patch-len-global``). Settings resolve as flag > config file > dataset
block > built-in default, and every run writes the resolved config as
``config.txt`` next to its outputs so ``--config`` on that file repeats it.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from . import profiler
from .config import DATA_DIR_ENV, HORIZONS, VARIANTS, ExperimentConfig, field_types, parse_value, resolve_config
from .data import SYNTH_DEFAULTS, prepare_dataset, synth_global_local
from .errors import S2TXError
from .model import load_checkpoint, model_from_checkpoint
from .train_eval import (
    ROBUSTNESS_RATIOS,
    evaluate,
    run_ablation,
    run_robustness,
    splits_for,
    train_and_evaluate,
    write_records,
)

log = logging.getLogger("s2tx")


def _csv_list(kind):
    def parse(raw: str):
        return [kind(item) for item in raw.split(",") if item.strip()]

    return parse


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("configuration (one flag per config key)")
    group.add_argument("--config", help="flat key = value config file")
    for key in field_types():
        flags = [f"--{key}"]
        if "_" in key:
            flags.append(f"--{key.replace('_', '-')}")
        group.add_argument(*flags, dest=key, default=None, metavar="VALUE")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")


def _config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {
        key: parse_value(key, getattr(args, key))
        for key in field_types()
        if getattr(args, key, None) is not None
    }
    return resolve_config(args.config, overrides)


def _run_dir(cfg: ExperimentConfig, command: str, label: str | None = None) -> Path:
    name = label or f"{Path(cfg.dataset).stem}_{cfg.variant}_H{cfg.horizon}_seed{cfg.seed}"
    path = Path(cfg.out) / command / name
    path.mkdir(parents=True, exist_ok=True)
    cfg.write(path / "config.txt")
    return path


def _metrics_record(run_id: str, cfg: ExperimentConfig, report) -> dict[str, Any]:
    return {
        "run_id": run_id,
        "dataset": cfg.dataset,
        "horizon": cfg.horizon,
        "variant": cfg.variant,
        "mse": report.mse,
        "mae": report.mae,
        "wall_clock": report.wall_clock,
        "n_windows": report.n_windows,
    }


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config(args)
    data = prepare_dataset(cfg)
    run_dir = _run_dir(cfg, "train")
    started = time.perf_counter()
    _, state, report = train_and_evaluate(cfg, data, checkpoint_dir=run_dir)
    record = _metrics_record(run_dir.name, cfg, report)
    record["train_seconds"] = time.perf_counter() - started
    record["best_epoch"] = state.best_epoch
    write_records(run_dir / "metrics.jsonl", [record])
    write_records(run_dir / "history.jsonl", state.history)
    print(f"{run_dir.name}: test mse {report.mse:.4f} mae {report.mae:.4f}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    payload = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(payload)
    overrides = {
        key: parse_value(key, getattr(args, key))
        for key in ("dataset", "data_path", "out")
        if getattr(args, key, None) is not None
    }
    cfg = model.cfg.replace(**overrides)
    data = prepare_dataset(cfg)
    run_dir = _run_dir(cfg, "evaluate")
    report = evaluate(model, splits_for(cfg, data)["test"])
    write_records(run_dir / "metrics.jsonl", [_metrics_record(run_dir.name, cfg, report)])
    print(f"{run_dir.name}: test mse {report.mse:.4f} mae {report.mae:.4f}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    data = prepare_dataset(cfg)
    run_dir = _run_dir(cfg, "ablate", f"{Path(cfg.dataset).stem}_seed{cfg.seed}")
    table = run_ablation(cfg, data, tuple(args.horizons), tuple(args.variants))
    write_records(run_dir / "ablation.jsonl", table.rows())
    (run_dir / "ablation.txt").write_text(table.format() + "\n")
    print(table.format())
    return 0


def cmd_robust(args: argparse.Namespace) -> int:
    cfg = _config(args)
    data = prepare_dataset(cfg)
    run_dir = _run_dir(cfg, "robust", f"{Path(cfg.dataset).stem}_{cfg.variant}_seed{cfg.seed}")
    models = {}
    if args.checkpoint:
        for path in args.checkpoint:
            model = model_from_checkpoint(load_checkpoint(path))
            models[model.cfg.horizon] = model
    else:
        for horizon in args.horizons:
            model, _, _ = train_and_evaluate(cfg.replace(horizon=horizon), data)
            models[horizon] = model
    ratios = [r / 100.0 for r in args.ratios]
    rows = run_robustness(models, data, ratios, seed=cfg.seed, burst_len=args.burst_len)
    write_records(run_dir / "robustness.jsonl", [vars(row) for row in rows])
    text = "\n".join(row.format() for row in rows)
    (run_dir / "robustness.txt").write_text(text + "\n")
    print(text)
    return 0


def cmd_profile(args: argparse.Namespace) -> int:
    cfg = _config(args)
    run_dir = _run_dir(cfg, "profile", args.regime)
    points = profiler.sweep(args.kinds, args.lengths, args.regime, cfg, args.repetitions)
    profiler.write_outputs(points, run_dir)
    print(profiler.format_table(points))
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    params = dict(SYNTH_DEFAULTS)
    for key in ("n_vars", "n_steps", "cross_variate", "regime_gain", "lag", "leader_ar"):
        if getattr(args, key) is not None:
            params[key] = getattr(args, key)
    frame = synth_global_local(seed=args.seed, **params)
    path = Path(args.out)
    if path.suffix != ".csv":
        path = path / "synth.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path)
    print(f"wrote {frame.n_steps} x {frame.n_vars} series to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="s2tx",
        description="Train, evaluate and profile S2TX forecasters.",
        epilog=f"Known datasets are read from ${DATA_DIR_ENV} (default ./data).",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="train one model and test it")
    _add_config_flags(train)
    train.set_defaults(handler=cmd_train)

    evaluate_ = commands.add_parser("evaluate", help="test a saved checkpoint")
    evaluate_.add_argument("--checkpoint", required=True)
    _add_config_flags(evaluate_)
    evaluate_.set_defaults(handler=cmd_evaluate)

    ablate = commands.add_parser("ablate", help="train the four variants at each horizon")
    _add_config_flags(ablate)
    ablate.add_argument("--horizons", type=_csv_list(int), default=list(HORIZONS))
    ablate.add_argument("--variants", type=_csv_list(str), default=list(VARIANTS))
    ablate.set_defaults(handler=cmd_ablate)

    robust = commands.add_parser("robust", help="test under missing-value bursts")
    _add_config_flags(robust)
    robust.add_argument("--horizons", type=_csv_list(int), default=list(HORIZONS))
    robust.add_argument(
        "--ratios", type=_csv_list(float),
        default=[round(r * 100) for r in ROBUSTNESS_RATIOS], help="percentages",
    )
    robust.add_argument("--burst_len", "--burst-len", type=int, default=4)
    robust.add_argument("--checkpoint", action="append", help="reuse trained models (repeatable)")
    robust.set_defaults(handler=cmd_robust)

    profile = commands.add_parser("profile", help="forward runtime and memory against look-back")
    _add_config_flags(profile)
    profile.add_argument("--kinds", type=_csv_list(str), default=list(profiler.KINDS))
    profile.add_argument("--lengths", type=_csv_list(int), default=list(profiler.DEFAULT_LENGTHS))
    profile.add_argument("--regime", choices=profiler.REGIMES, default="fixed_patch_number")
    profile.add_argument("--repetitions", type=int, default=5)
    profile.set_defaults(handler=cmd_profile)

    synth = commands.add_parser("synth", help="write the synthetic global-local series as CSV")
    synth.add_argument("--out", default="data/synth.csv", help="CSV path or directory")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--n_vars", "--n-vars", type=int)
    synth.add_argument("--n_steps", "--n-steps", type=int)
    synth.add_argument("--cross_variate", "--cross-variate", type=float)
    synth.add_argument("--regime_gain", "--regime-gain", type=float)
    synth.add_argument("--lag", type=int)
    synth.add_argument("--leader_ar", "--leader-ar", type=float)
    synth.add_argument("-v", "--verbose", action="store_true")
    synth.set_defaults(handler=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    try:
        return args.handler(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (S2TXError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
