"""Forward-pass runtime and peak-memory scaling sweeps over the look-back length."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import resource
import statistics
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import torch
import torch.nn as nn

from .config import ExperimentConfig
from .errors import ConfigError
from .model import make_baseline, make_variant

log = logging.getLogger(__name__)

KINDS = ("s2tx", "sst_like", "plain_mamba", "vanilla_transformer")
REGIMES = ("fixed_patch_number", "fixed_stride")
DEFAULT_LENGTHS = (336, 672, 1344, 2688)
PROFILE_VARIATES = 7


@dataclass
class ScalingPoint:
    """One (kind, L) measurement; ``censored`` marks a point that ran out of memory."""

    kind: str
    lookback: int
    regime: str
    forward_ms: float
    peak_mem_bytes: int
    repetitions: int
    memory_source: str = "profiler"
    censored: bool = False


def scaled_config(cfg: ExperimentConfig, lookback: int, regime: str) -> ExperimentConfig:
    """Config for look-back ``lookback`` under a scaling regime.

    ``cfg.lookback`` is the reference length. The local window stays at
    ``cfg.local_window`` in both regimes. Under ``fixed_patch_number`` the
    global patch length and stride grow by ``lookback / cfg.lookback`` so the
    global patch count is unchanged; under ``fixed_stride`` they stay put and
    the patch count grows with ``lookback``.
    """
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    changes = {"lookback": lookback, "local_window": cfg.local_window, "dropout": 0.0}
    if regime == "fixed_patch_number":
        if lookback % cfg.lookback:
            raise ConfigError(
                f"fixed_patch_number needs lookback {lookback} to be a multiple of {cfg.lookback}"
            )
        factor = lookback // cfg.lookback
        changes["patch_len_global"] = cfg.patch_len_global * factor
        changes["stride_global"] = cfg.stride_global * factor
    return cfg.replace(**changes)


def build(kind: str, cfg: ExperimentConfig, n_vars: int = PROFILE_VARIATES) -> nn.Module:
    if kind == "s2tx":
        return make_variant(cfg, "full")
    if kind == "sst_like":
        return make_variant(cfg, "no_cross_attention")
    if kind in ("plain_mamba", "vanilla_transformer"):
        return make_baseline(kind, n_vars, cfg)
    raise ConfigError(f"unknown model kind {kind!r}; expected one of {KINDS}")


def _profiler_peak(fn: Callable[[], object]) -> int:
    """Peak of the running sum of CPU allocations and frees seen by the profiler."""
    from torch.profiler import ProfilerActivity, profile

    with profile(activities=[ProfilerActivity.CPU], profile_memory=True) as prof:
        fn()
    events = [e for e in prof.events() if e.cpu_memory_usage or e.self_cpu_memory_usage]
    deltas = sorted(
        ((e.time_range.start, e.self_cpu_memory_usage) for e in events), key=lambda item: item[0]
    )
    running = peak = 0
    for _, delta in deltas:
        running += delta
        peak = max(peak, running)
    return int(peak)


def _rss_delta(fn: Callable[[], object]) -> int:
    before = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    fn()
    after = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return int(after - before) * 1024


def peak_memory(fn: Callable[[], object]) -> tuple[int, str]:
    """Peak transient bytes of ``fn``; falls back to a resident-set delta."""
    try:
        return _profiler_peak(fn), "profiler"
    except Exception as exc:  # profiler unavailable on this build
        log.warning("memory profiler failed (%s); using resident-set delta", exc)
        return _rss_delta(fn), "rss_delta"


def _is_oom(exc: BaseException) -> bool:
    return isinstance(exc, MemoryError) or "out of memory" in str(exc).lower()


def measure(model: nn.Module, window: torch.Tensor, repetitions: int = 5, warmup: int = 1) -> tuple[float, int, str]:
    """Median forward milliseconds and peak memory for one model and input."""
    if repetitions < 5:
        raise ConfigError("timing needs at least 5 repetitions")
    model.eval()

    def run():
        with torch.no_grad():
            model(window)

    for _ in range(warmup):
        run()
    times = []
    for _ in range(repetitions):
        started = time.perf_counter()
        run()
        times.append((time.perf_counter() - started) * 1e3)
    bytes_, source = peak_memory(run)
    return statistics.median(times), bytes_, source


def sweep(
    kinds: Iterable[str],
    lengths: Sequence[int] = DEFAULT_LENGTHS,
    regime: str = "fixed_patch_number",
    cfg: ExperimentConfig | None = None,
    repetitions: int = 5,
    n_vars: int = PROFILE_VARIATES,
    threads: int = 1,
) -> list[ScalingPoint]:
    """Time the forward pass of each model kind at each look-back length.

    Batch size 1 and ``n_vars`` variates; runs with ``threads`` intra-op
    threads and restores the previous setting afterwards. ``cfg.lookback``
    is the reference length for the regime scaling and must divide every
    entry of ``lengths`` under ``fixed_patch_number``.
    """
    cfg = cfg or ExperimentConfig()
    lengths = list(lengths)
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ConfigError("lengths must be strictly increasing")
    if lengths and lengths[0] < cfg.patch_len_global:
        raise ConfigError(f"lengths must be at least patch_len_global={cfg.patch_len_global}")
    previous = torch.get_num_threads()
    torch.set_num_threads(threads)
    points = []
    try:
        for kind in kinds:
            for lookback in lengths:
                run_cfg = scaled_config(cfg, lookback, regime)
                torch.manual_seed(run_cfg.seed)
                try:
                    model = build(kind, run_cfg, n_vars)
                    window = torch.randn(1, n_vars, lookback)
                    ms, bytes_, source = measure(model, window, repetitions)
                    point = ScalingPoint(kind, lookback, regime, ms, bytes_, repetitions, source)
                except (RuntimeError, MemoryError) as exc:
                    if not _is_oom(exc):
                        raise
                    point = ScalingPoint(kind, lookback, regime, math.nan, -1, repetitions, "none", True)
                log.info("%s L=%d %.1f ms %d bytes", kind, lookback, point.forward_ms, point.peak_mem_bytes)
                points.append(point)
    finally:
        torch.set_num_threads(previous)
    return points


def time_ratio(points: Sequence[ScalingPoint], kind: str) -> float:
    """forward_ms at the largest L over forward_ms at the smallest L."""
    mine = sorted((p for p in points if p.kind == kind), key=lambda p: p.lookback)
    if len(mine) < 2:
        raise ValueError(f"need two points for kind {kind!r}")
    return mine[-1].forward_ms / mine[0].forward_ms


def format_table(points: Sequence[ScalingPoint]) -> str:
    lines = [f"{'kind':>20} {'regime':>18} {'L':>6} {'ms':>10} {'peak bytes':>14}"]
    for p in points:
        ms = "censored" if p.censored else f"{p.forward_ms:.2f}"
        lines.append(f"{p.kind:>20} {p.regime:>18} {p.lookback:>6} {ms:>10} {p.peak_mem_bytes:>14}")
    return "\n".join(lines)


def write_outputs(points: Sequence[ScalingPoint], out_dir: str | os.PathLike) -> dict[str, Path]:
    """Write ``scaling.jsonl``, ``scaling.txt`` and the plot-data ``scaling.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "records": out / "scaling.jsonl",
        "table": out / "scaling.txt",
        "csv": out / "scaling.csv",
    }
    with paths["records"].open("w") as handle:
        for p in points:
            handle.write(json.dumps(asdict(p)) + "\n")
    paths["table"].write_text(format_table(points) + "\n")
    with paths["csv"].open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["L", "kind", "regime", "ms", "bytes"])
        for p in points:
            writer.writerow([p.lookback, p.kind, p.regime, p.forward_ms, p.peak_mem_bytes])
    return paths
