"""Dual-prototype adaptive disentanglement for time series forecasting.

A linear forecasting backbone augmented with a learnable dual bank of
temporal prototypes (GP-initialized common patterns, noise-initialized
rare patterns), context-aware dual-path routing, and disentanglement
losses, trained end-to-end on a from-scratch reverse-mode autodiff
core.
"""

from .backbone import InstanceNormState, LinearBackbone, denormalize, instance_normalize
from .bank import BankConfig, PrototypeBank, export_bank, import_bank, init_bank
from .config import ConfigError, RunConfig
from .data import (
    SeriesFrame,
    SplitSpec,
    SynthConfig,
    WindowDataset,
    load_csv,
    make_windows,
    synth_generate,
)
from .gp_priors import (
    KernelMixtureConfig,
    RareInitConfig,
    build_gram,
    kernel_value,
    sample_gp,
    sample_rare,
)
from .losses import (
    DGLossConfig,
    FrequencyTracker,
    diversity_loss,
    mae,
    mse,
    rarity_loss,
    separation_loss,
    total_loss,
)
from .model import ForecastModel
from .numerics import Tape, Tensor, finite_diff_check, tensor
from .routing import (
    FusionHead,
    RoutingConfig,
    RoutingTrace,
    forward_dpad,
    fuse,
    pearson,
    route_common,
    route_rare,
    similarity_profile,
)
from .trainer import Adam, TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
