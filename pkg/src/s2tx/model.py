"""End-to-end S2TX forecaster, its ablation variants and two scaling baselines."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch
import torch.nn as nn

from .attention import ForecastHead, LocalLayer, LocalModel
from .config import VARIANTS, ExperimentConfig
from .errors import ConfigError, InvalidSpecError, NumericError
from .patching import make_multiscale, patch_count
from .ssm import GlobalContextEncoder, MambaBlock

NORM_EPS = 1e-5
CHECKPOINT_FORMAT = 1


@dataclass
class Forecast:
    values: torch.Tensor
    denormalized: bool


def instance_normalize(window: torch.Tensor, eps: float = NORM_EPS):
    """Z-score each variate over its window; returns (normalized, mean, std)."""
    mean = window.mean(dim=-1, keepdim=True)
    std = torch.sqrt(window.var(dim=-1, keepdim=True, unbiased=False) + eps)
    return (window - mean) / std, mean, std


def instance_denormalize(values: torch.Tensor, mean: torch.Tensor, std: torch.Tensor):
    return values * std + mean


class S2TX(nn.Module):
    """Multi-scale forecaster: a bidirectional Mamba global model feeds a
    local transformer through cross-attention.

    The model is independent of the number of variates D; inputs are
    (B, D, L) or (D, L) windows and outputs (B, D, H) or (D, H).

    Args:
        cfg: experiment configuration supplying every size.
        variant: one of ``full``, ``no_cross_variate``, ``no_cross_attention``,
            ``neither``; defaults to ``cfg.variant``.
    """

    def __init__(self, cfg: ExperimentConfig, variant: str | None = None):
        super().__init__()
        variant = variant or cfg.variant
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.cfg = cfg
        self._variant = variant
        self.cross_variate = variant in ("full", "no_cross_attention")
        self.cross_attention = variant in ("full", "no_cross_variate")
        self.num_global_patches = patch_count(cfg.lookback, cfg.global_patch_spec())
        self.num_local_patches = patch_count(cfg.local_window, cfg.local_patch_spec())

        self.global_model = GlobalContextEncoder(
            cfg.patch_len_global,
            cfg.d_model,
            cfg.global_layers,
            cfg.state_dim,
            cfg.expand,
            cfg.conv_kernel,
            cross_variate=self.cross_variate,
        )
        self.local_model = LocalModel(
            cfg.patch_len_local,
            self.num_local_patches,
            cfg.d_model,
            cfg.local_layers,
            cfg.n_heads,
            cfg.ffn_width,
            cfg.dropout,
            cross=self.cross_attention,
        )
        head_in = self.num_local_patches * cfg.d_model
        if not self.cross_attention:
            head_in += cfg.d_model
        self.head = ForecastHead(head_in, cfg.horizon)

    @property
    def variant(self) -> str:
        return self._variant

    def _prepare(self, window: torch.Tensor):
        if window.shape[-1] != self.cfg.lookback:
            raise InvalidSpecError(
                f"window length {window.shape[-1]} does not match lookback {self.cfg.lookback}"
            )
        if self.cfg.instance_norm:
            return instance_normalize(window)
        return window, None, None

    def global_context(self, window: torch.Tensor) -> torch.Tensor:
        """Context (B, D, PN_g, d_model) for a batch of raw windows."""
        x, _, _ = self._prepare(window)
        global_patches, _ = make_multiscale(x, self.cfg)
        return self.global_model(global_patches.values)

    def forward(self, window: torch.Tensor, context: torch.Tensor | None = None) -> torch.Tensor:
        """Forecast H steps per variate.

        Passing ``context`` skips the global model and uses the given
        (B, D, PN_g, d_model) tensor instead.
        """
        unbatched = window.dim() == 2
        if unbatched:
            window = window.unsqueeze(0)
            if context is not None and context.dim() == 3:
                context = context.unsqueeze(0)
        x, mean, std = self._prepare(window)
        global_patches, local_patches = make_multiscale(x, self.cfg)
        if context is None:
            context = self.global_model(global_patches.values)
        batch, n_vars = x.shape[:2]
        ctx = context.reshape(batch * n_vars, *context.shape[-2:])
        local = local_patches.values.reshape(batch * n_vars, *local_patches.values.shape[-2:])
        features = self.local_model(local, ctx if self.cross_attention else None).flatten(1)
        if not self.cross_attention:
            features = torch.cat([features, ctx.mean(dim=1)], dim=-1)
        y = self.head(features).reshape(batch, n_vars, self.cfg.horizon)
        if mean is not None:
            y = instance_denormalize(y, mean, std)
        if not torch.isfinite(y).all():
            bad = (~torch.isfinite(y)).nonzero()[0].tolist()
            raise NumericError(f"non-finite forecast at (batch, variate, step) = {tuple(bad)}")
        return y[0] if unbatched else y

    @torch.no_grad()
    def predict(self, window: torch.Tensor) -> Forecast:
        was_training = self.training
        self.eval()
        try:
            return Forecast(self(window), denormalized=self.cfg.instance_norm)
        finally:
            self.train(was_training)


def make_variant(cfg: ExperimentConfig, variant: str) -> S2TX:
    """Build the full model or one of its ablations from ``cfg``.

    Seeding the global RNG before two calls with variants that share a
    parameter layout (``full`` and ``no_cross_variate``) yields identical
    weights.
    """
    return S2TX(cfg, variant)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# -- scaling baselines ----------------------------------------------------

def sinusoidal_positions(length: int, d_model: int) -> torch.Tensor:
    position = torch.arange(length, dtype=torch.float32).unsqueeze(1)
    freq = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float32) * (-math.log(10000.0) / d_model))
    table = torch.zeros(length, d_model)
    table[:, 0::2] = torch.sin(position * freq)
    table[:, 1::2] = torch.cos(position * freq[: d_model // 2])
    return table


class _PointwiseForecaster(nn.Module):
    """One token per time step (all variates embedded jointly), encoder, linear head."""

    def __init__(self, n_vars: int, lookback: int, horizon: int, d_model: int, layers: nn.ModuleList):
        super().__init__()
        self.embed = nn.Linear(n_vars, d_model)
        self.register_buffer("positions", sinusoidal_positions(lookback, d_model), persistent=False)
        self.layers = layers
        self.norm = nn.LayerNorm(d_model)
        self.readout = nn.Linear(d_model, n_vars)
        self.time_head = nn.Linear(lookback, horizon)

    def forward(self, window: torch.Tensor) -> torch.Tensor:
        unbatched = window.dim() == 2
        if unbatched:
            window = window.unsqueeze(0)
        x, mean, std = instance_normalize(window)
        tokens = self.embed(x.transpose(1, 2)) + self.positions
        for layer in self.layers:
            tokens = layer(tokens)
        y = self.time_head(self.readout(self.norm(tokens)).transpose(1, 2))
        y = instance_denormalize(y, mean, std)
        return y[0] if unbatched else y


class VanillaTransformerForecaster(_PointwiseForecaster):
    def __init__(self, n_vars, lookback, horizon, d_model=64, n_heads=4, n_layers=2, ffn_width=128):
        layers = nn.ModuleList(
            LocalLayer(d_model, n_heads, ffn_width, cross=False) for _ in range(n_layers)
        )
        super().__init__(n_vars, lookback, horizon, d_model, layers)

    def attention_maps(self, window: torch.Tensor) -> list[torch.Tensor]:
        """Self-attention weights of every layer, each (B, heads, L, L)."""
        for layer in self.layers:
            layer.self_attn.keep_weights = True
        try:
            with torch.no_grad():
                self(window)
            return [layer.self_attn.last_weights for layer in self.layers]
        finally:
            for layer in self.layers:
                layer.self_attn.keep_weights = False
                layer.self_attn.last_weights = None


class PlainMambaForecaster(_PointwiseForecaster):
    def __init__(self, n_vars, lookback, horizon, d_model=64, n_layers=2, state_dim=16, expand=2, conv_kernel=4):
        layers = nn.ModuleList(
            MambaBlock(d_model, state_dim, expand, conv_kernel) for _ in range(n_layers)
        )
        super().__init__(n_vars, lookback, horizon, d_model, layers)


BASELINES = {
    "vanilla_transformer": VanillaTransformerForecaster,
    "plain_mamba": PlainMambaForecaster,
}


def make_baseline(kind: str, n_vars: int, cfg: ExperimentConfig) -> nn.Module:
    if kind == "vanilla_transformer":
        return VanillaTransformerForecaster(
            n_vars, cfg.lookback, cfg.horizon, cfg.d_model, cfg.n_heads,
            max(cfg.local_layers, 1), cfg.ffn_width,
        )
    if kind == "plain_mamba":
        return PlainMambaForecaster(
            n_vars, cfg.lookback, cfg.horizon, cfg.d_model, cfg.global_layers,
            cfg.state_dim, cfg.expand, cfg.conv_kernel,
        )
    raise ConfigError(f"unknown baseline kind {kind!r}; expected one of {sorted(BASELINES)}")


@torch.no_grad()
def baseline_forward(kind: str, window: torch.Tensor, cfg: ExperimentConfig, model: nn.Module | None = None) -> Forecast:
    """Forecast with a freshly built (or supplied) baseline of the named kind."""
    model = model or make_baseline(kind, window.shape[-2], cfg)
    model.eval()
    return Forecast(model(window), denormalized=True)


# -- checkpoints ----------------------------------------------------------

def save_checkpoint(
    path: str | os.PathLike,
    model: S2TX,
    optimizer: torch.optim.Optimizer | None = None,
    train_state: dict[str, Any] | None = None,
) -> Path:
    """Write one checkpoint file.

    Layout (a ``torch.save`` dictionary)::

        format_version  int, currently 1
        config          dict of ExperimentConfig fields
        variant         str
        state_dict      {parameter name: tensor}
        optimizer       optimizer state dict or None
        train_state     dict of plain values or None
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT,
        "config": model.cfg.to_dict(),
        "variant": model.variant,
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "train_state": train_state,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike) -> dict[str, Any]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT:
        raise ConfigError(f"unsupported checkpoint format {version!r}")
    return payload


def model_from_checkpoint(payload: dict[str, Any]) -> S2TX:
    cfg = ExperimentConfig.from_dict(payload["config"])
    model = S2TX(cfg, payload["variant"])
    dtype = next(iter(payload["state_dict"].values())).dtype
    model.to(dtype)
    model.load_state_dict(payload["state_dict"])
    return model
