"""Training loop, metrics, and the ablation / robustness drivers."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import os
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import torch
import torch.nn as nn
from torch.utils.data import DataLoader, Dataset, Subset

from .config import HORIZONS, VARIANTS, ExperimentConfig
from .data import PreparedData, WindowDataset, corrupt_missing
from .errors import NumericError
from .model import S2TX, load_checkpoint, make_variant, save_checkpoint

log = logging.getLogger(__name__)

ROBUSTNESS_RATIOS = (0.0, 0.04, 0.08, 0.16, 0.24, 0.32, 0.40)


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


@dataclass
class TrainState:
    """Progress of one training run; serialisable to plain values."""

    seed: int
    epoch: int = 0
    best_val: float = math.inf
    best_epoch: int = -1
    bad_epochs: int = 0
    history: list[dict[str, float]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> TrainState:
        return cls(**values)


@dataclass
class MetricReport:
    mse: float
    mae: float
    per_horizon_mse: list[float]
    per_horizon_mae: list[float]
    wall_clock: float
    n_windows: int


class RepeatLast(nn.Module):
    """Random-walk forecaster: repeats the last observed value."""

    def __init__(self, horizon: int):
        super().__init__()
        self.horizon = horizon

    def forward(self, window: torch.Tensor) -> torch.Tensor:
        return window[..., -1:].expand(*window.shape[:-1], self.horizon)


def parameter_digest(model: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def _loader(dataset: Dataset, batch_size: int, generator: torch.Generator | None = None) -> DataLoader:
    return DataLoader(
        dataset, batch_size=batch_size, shuffle=generator is not None, generator=generator
    )


@torch.no_grad()
def evaluate(model: nn.Module, data: Dataset | Iterable, batch_size: int = 256) -> MetricReport:
    """MSE and MAE over every window, variate and horizon step.

    ``data`` is a Dataset of (input, target) pairs or any iterable of
    batches. The model is put in eval mode and its training flag restored.
    """
    was_training = model.training
    model.eval()
    started = time.perf_counter()
    batches = _loader(data, batch_size) if isinstance(data, Dataset) else data
    sq_sum = abs_sum = None
    count = windows = 0
    try:
        for batch in batches:
            x, y = (batch.inputs, batch.targets) if hasattr(batch, "inputs") else batch
            pred = model(x).to(torch.float64)
            err = pred - y.to(torch.float64)
            sq = (err**2).sum(dim=(0, 1))
            ab = err.abs().sum(dim=(0, 1))
            sq_sum = sq if sq_sum is None else sq_sum + sq
            abs_sum = ab if abs_sum is None else abs_sum + ab
            count += x.shape[0] * x.shape[1]
            windows += x.shape[0]
    finally:
        model.train(was_training)
    if count == 0:
        raise ValueError("evaluate received no windows")
    per_mse = (sq_sum / count).tolist()
    per_mae = (abs_sum / count).tolist()
    return MetricReport(
        mse=float(np.mean(per_mse)),
        mae=float(np.mean(per_mae)),
        per_horizon_mse=per_mse,
        per_horizon_mae=per_mae,
        wall_clock=time.perf_counter() - started,
        n_windows=windows,
    )


def _subsample(dataset: Dataset, limit: int) -> Dataset:
    if not limit or len(dataset) <= limit:
        return dataset
    index = np.linspace(0, len(dataset) - 1, limit).round().astype(int)
    return Subset(dataset, index.tolist())


def train(
    model: S2TX,
    train_set: Dataset,
    val_set: Dataset,
    cfg: ExperimentConfig,
    checkpoint_dir: str | os.PathLike | None = None,
    resume: str | os.PathLike | None = None,
) -> tuple[S2TX, TrainState]:
    """Minibatch Adam on the MSE loss with early stopping on validation MSE.

    Each epoch reseeds shuffling and dropout from ``(cfg.seed, epoch)``, so a
    run resumed from an end-of-epoch checkpoint continues exactly as an
    uninterrupted one. At exit the best-validation weights are restored.

    Args:
        checkpoint_dir: when given, ``last.pt`` is written after every epoch
            and ``best.pt`` whenever validation improves.
        resume: checkpoint written by a previous call to continue from.

    Raises:
        NumericError: the training loss became non-finite; the last finite
            weights are saved to ``diverged.pt`` first when checkpointing.
    """
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    state = TrainState(seed=cfg.seed)
    best_weights = copy.deepcopy(model.state_dict())
    if resume is not None:
        payload = load_checkpoint(resume)
        model.load_state_dict(payload["state_dict"])
        optimizer.load_state_dict(payload["optimizer"])
        state = TrainState.from_dict(payload["train_state"])
        best_path = Path(resume).with_name("best.pt")
        if best_path.is_file():
            best_weights = load_checkpoint(best_path)["state_dict"]
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    train_set = _subsample(train_set, cfg.max_train_windows)

    while state.epoch < cfg.epochs and (state.epoch == 0 or state.bad_epochs < cfg.patience):
        epoch_seed = cfg.seed * 1000 + state.epoch
        torch.manual_seed(epoch_seed)
        generator = torch.Generator().manual_seed(epoch_seed)
        model.train()
        started = time.perf_counter()
        total, batches = 0.0, 0
        for x, y in _loader(train_set, cfg.batch_size, generator):
            try:
                loss = torch.mean((model(x) - y) ** 2)
                if not torch.isfinite(loss):
                    raise NumericError("loss is not finite")
            except NumericError as exc:
                if ckpt is not None:
                    save_checkpoint(ckpt / "diverged.pt", model, optimizer, state.to_dict())
                raise NumericError(
                    f"training diverged in epoch {state.epoch}, batch {batches}: {exc}", batches
                ) from exc
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item()
            batches += 1
        val = evaluate(model, val_set).mse
        record = {
            "epoch": state.epoch,
            "train_loss": total / max(batches, 1),
            "val_mse": val,
            "seconds": time.perf_counter() - started,
        }
        state.history.append(record)
        log.info("epoch %(epoch)d train %(train_loss).5f val %(val_mse).5f", record)
        if val < state.best_val:
            state.best_val, state.best_epoch, state.bad_epochs = val, state.epoch, 0
            best_weights = copy.deepcopy(model.state_dict())
            if ckpt is not None:
                save_checkpoint(ckpt / "best.pt", model, None, state.to_dict())
        else:
            state.bad_epochs += 1
        state.epoch += 1
        if ckpt is not None:
            save_checkpoint(ckpt / "last.pt", model, optimizer, state.to_dict())
    model.load_state_dict(best_weights)
    return model, state


def build_model(cfg: ExperimentConfig, variant: str | None = None) -> S2TX:
    seed_everything(cfg.seed)
    return make_variant(cfg, variant or cfg.variant).to(cfg.torch_dtype)


def splits_for(cfg: ExperimentConfig, data: PreparedData) -> dict[str, WindowDataset]:
    return {
        name: data.windows(
            name, cfg.lookback, cfg.horizon,
            stride=cfg.train_stride if name == "train" else 1,
            dtype=cfg.torch_dtype,
        )
        for name in ("train", "val", "test")
    }


def train_and_evaluate(
    cfg: ExperimentConfig,
    data: PreparedData,
    variant: str | None = None,
    checkpoint_dir: str | os.PathLike | None = None,
) -> tuple[S2TX, TrainState, MetricReport]:
    """Build, train and test one model."""
    sets = splits_for(cfg, data)
    model = build_model(cfg, variant)
    model, state = train(model, sets["train"], sets["val"], cfg, checkpoint_dir)
    return model, state, evaluate(model, sets["test"])


# -- experiment drivers ---------------------------------------------------

@dataclass
class AblationTable:
    horizons: tuple[int, ...]
    mse: dict[str, dict[int, float]]

    def average(self, variant: str) -> float:
        return float(np.mean([self.mse[variant][h] for h in self.horizons]))

    def rows(self) -> list[dict[str, Any]]:
        return [
            {"variant": v, **{str(h): self.mse[v][h] for h in self.horizons}, "avg": self.average(v)}
            for v in self.mse
        ]

    def format(self) -> str:
        header = ["variant", *map(str, self.horizons), "avg"]
        lines = ["  ".join(f"{h:>18}" for h in header)]
        for row in self.rows():
            cells = [row["variant"]] + [f"{row[c]:.4f}" for c in header[1:]]
            lines.append("  ".join(f"{c:>18}" for c in cells))
        return "\n".join(lines)


def run_ablation(
    cfg: ExperimentConfig,
    data: PreparedData,
    horizons: Sequence[int] = HORIZONS,
    variants: Sequence[str] = VARIANTS,
) -> AblationTable:
    """Train every variant at every horizon with shared seeds; test MSE per cell."""
    table: dict[str, dict[int, float]] = {}
    for variant in variants:
        table[variant] = {}
        for horizon in horizons:
            run_cfg = cfg.replace(horizon=horizon, variant=variant)
            _, _, report = train_and_evaluate(run_cfg, data)
            table[variant][horizon] = report.mse
            log.info("ablation %s H=%d mse=%.4f", variant, horizon, report.mse)
    return AblationTable(tuple(horizons), table)


@dataclass
class RobustnessRow:
    miss_ratio: float
    mse: float
    degradation_pct: float

    def format(self) -> str:
        return f"{self.miss_ratio:>6.0%}  {self.mse:.4f}(-{self.degradation_pct:.1f}%)"


def run_robustness(
    models: Mapping[int, nn.Module],
    data: PreparedData,
    ratios: Sequence[float] = ROBUSTNESS_RATIOS,
    seed: int = 0,
    burst_len: int = 4,
) -> list[RobustnessRow]:
    """Evaluate trained models on test inputs corrupted with missing bursts.

    ``models`` maps horizon to a model trained for it; MSE is averaged over
    horizons. Corruption touches model inputs only, never targets.
    Degradation is the relative MSE increase over the clean run, in percent.
    """
    clean_segment = data.segment("test")

    def score(inputs: np.ndarray) -> float:
        values = []
        for horizon, model in models.items():
            dtype = next(model.parameters()).dtype
            windows = WindowDataset(
                clean_segment, model.cfg.lookback, horizon, inputs=inputs, dtype=dtype
            )
            values.append(evaluate(model, windows).mse)
        return float(np.mean(values))

    clean = score(clean_segment)
    rows = []
    for ratio in ratios:
        mse = clean if ratio == 0 else score(corrupt_missing(clean_segment, ratio, burst_len, seed))
        rows.append(RobustnessRow(ratio, mse, 100.0 * (mse - clean) / clean))
    return rows


def write_records(path: str | os.PathLike, records: Iterable[Mapping[str, Any]]) -> Path:
    """Append line-delimited JSON records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as handle:
        for record in records:
            handle.write(json.dumps(dict(record), sort_keys=True) + "\n")
    return path
