"""S2TX: cross-attention multi-scale state-space transformer for multivariate forecasting."""

from .attention import (
    ForecastHead,
    LocalLayer,
    LocalModel,
    MultiHeadAttention,
    cross_attention,
    forecast_head,
    local_layer,
    self_attention,
)
from .config import ExperimentConfig, resolve_config
from .data import (
    ForecastBatch,
    PreparedData,
    SeriesFrame,
    SplitSpec,
    corrupt_missing,
    load_csv,
    make_windows,
    prepare_dataset,
    synth_global_local,
)
from .errors import ConfigError, DataError, InvalidSpecError, NumericError, S2TXError
from .model import (
    S2TX,
    Forecast,
    baseline_forward,
    load_checkpoint,
    make_variant,
    model_from_checkpoint,
    save_checkpoint,
)
from .patching import PatchSpec, PatchTensor, WindowSpec, make_multiscale, patch_count, patchify
from .ssm import GlobalContextEncoder, MambaBlock, SelectiveSSM, discretize, global_context, selective_scan
from .train_eval import MetricReport, TrainState, evaluate, run_ablation, run_robustness, train

__version__ = "0.1.0"
