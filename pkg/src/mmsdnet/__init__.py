"""Multi-modal stuttering detection network built on a small float64 autodiff core."""

from .attention import AttentionHeads, causal_mask, multi_head_attention, positional_encoding, scaled_dot_attention
from .data import SynthSpec, generate, read_dataset, split, write_dataset
from .gradcheck import finite_diff_check
from .model import ModalityFeatures, ModelConfig, ParameterStore, forward, init_params
from .tensor import GradientTape, Tensor, backward
from .training import MetricsReport, TrainConfig, evaluate, lr_at, optimizer_step, train

__version__ = "0.1.0"

__all__ = [
    "AttentionHeads",
    "GradientTape",
    "MetricsReport",
    "ModalityFeatures",
    "ModelConfig",
    "ParameterStore",
    "SynthSpec",
    "Tensor",
    "TrainConfig",
    "backward",
    "causal_mask",
    "evaluate",
    "finite_diff_check",
    "forward",
    "generate",
    "init_params",
    "lr_at",
    "multi_head_attention",
    "optimizer_step",
    "positional_encoding",
    "read_dataset",
    "scaled_dot_attention",
    "split",
    "train",
    "write_dataset",
]
