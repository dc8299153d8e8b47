"""Experiment configuration: one validated record for every hyperparameter.

Config files are flat ``key = value`` text (``#`` comments allowed). Every key
is also a command-line flag of the same name.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError

VARIANTS = ("full", "no_cross_variate", "no_cross_attention", "neither")
HORIZONS = (96, 192, 336, 720)
DATA_DIR_ENV = "S2TX_DATA_DIR"

# Hyperparameter block used for the exchange-rate dataset.
EXCHANGE_BLOCK = {
    "lookback": 192,
    "local_window": 96,
    "patch_len_global": 16,
    "stride_global": 8,
    "patch_len_local": 4,
    "stride_local": 2,
}
DATASET_BLOCKS: dict[str, dict[str, Any]] = {"exchange": EXCHANGE_BLOCK}


@dataclass
class ExperimentConfig:
    """All settings of one experiment run.

    ``local_window`` defaults to half of ``lookback`` when left unset.
    """

    dataset: str = "etth1"
    data_path: str | None = None
    horizon: int = 96
    lookback: int = 336
    local_window: int | None = None
    patch_len_global: int = 48
    stride_global: int = 16
    patch_len_local: int = 16
    stride_local: int = 8
    d_model: int = 64
    n_heads: int = 4
    ffn_width: int = 128
    local_layers: int = 2
    global_layers: int = 2
    state_dim: int = 16
    expand: int = 2
    conv_kernel: int = 4
    dropout: float = 0.1
    instance_norm: bool = True
    variant: str = "full"
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 30
    patience: int = 5
    train_stride: int = 1
    max_train_windows: int = 0
    precision: str = "float32"
    seed: int = 2025
    out: str = "runs"

    def __post_init__(self) -> None:
        if self.local_window is None:
            self.local_window = self.lookback // 2
        self.validate()

    def validate(self) -> None:
        positive = (
            "horizon", "lookback", "local_window", "patch_len_global",
            "stride_global", "patch_len_local", "stride_local", "d_model",
            "n_heads", "ffn_width", "global_layers", "state_dim", "expand",
            "conv_kernel", "batch_size", "train_stride",
        )
        for name in positive:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        for name in ("local_layers", "epochs", "patience", "max_train_windows"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.local_window > self.lookback:
            raise ConfigError(
                f"local_window ({self.local_window}) exceeds lookback ({self.lookback})"
            )
        if self.patch_len_global > self.lookback:
            raise ConfigError("patch_len_global longer than the look-back window")
        if self.patch_len_local > self.local_window:
            raise ConfigError("patch_len_local longer than the local window")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision must be float32 or float64")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")

    # -- derived specs -------------------------------------------------
    def window_spec(self):
        from .patching import WindowSpec

        return WindowSpec(self.lookback, self.local_window, self.horizon)

    def global_patch_spec(self):
        from .patching import PatchSpec

        return PatchSpec(self.patch_len_global, self.stride_global, "global", align="end")

    def local_patch_spec(self):
        from .patching import PatchSpec

        return PatchSpec(self.patch_len_local, self.stride_local, "local", align="end")

    @property
    def torch_dtype(self):
        import torch

        return torch.float64 if self.precision == "float64" else torch.float32

    def replace(self, **changes: Any) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> ExperimentConfig:
        unknown = set(values) - set(field_types())
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(values))

    def write(self, path: str | os.PathLike) -> Path:
        """Write the fully resolved config as a flat key-value file."""
        path = Path(path)
        lines = ["# resolved experiment configuration"]
        for key, value in self.to_dict().items():
            lines.append(f"{key} = {format_value(value)}")
        path.write_text("\n".join(lines) + "\n")
        return path


def field_types() -> dict[str, Any]:
    hints = typing.get_type_hints(ExperimentConfig)
    return {f.name: hints[f.name] for f in dataclasses.fields(ExperimentConfig)}


def format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_value(key: str, raw: str) -> Any:
    """Convert a textual value to the declared type of ``key``."""
    types = field_types()
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    kind = types[key]
    text = raw.strip()
    optional = type(None) in typing.get_args(kind)
    if optional:
        if text.lower() in ("none", "auto", ""):
            return None
        kind = next(a for a in typing.get_args(kind) if a is not type(None))
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key} = {raw!r} as {kind.__name__}") from exc


def read_config_file(path: str | os.PathLike) -> dict[str, Any]:
    """Parse a flat key-value file into typed values (unknown keys rejected)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",)
    )
    parser.optionxform = str  # keys are case-sensitive
    try:
        parser.read_string("[config]\n" + path.read_text())
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    return {k: parse_value(k, v) for k, v in parser["config"].items()}


def resolve_config(
    config_file: str | os.PathLike | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> ExperimentConfig:
    """Merge settings with precedence: overrides > file > dataset block > defaults."""
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    from_file = read_config_file(config_file) if config_file else {}
    unknown = set(overrides) - set(field_types())
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    dataset = overrides.get("dataset", from_file.get("dataset", ExperimentConfig.dataset))
    merged: dict[str, Any] = {}
    merged.update(DATASET_BLOCKS.get(str(dataset).lower(), {}))
    merged.update(from_file)
    merged.update(overrides)
    return ExperimentConfig.from_dict(merged)


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "data"))
