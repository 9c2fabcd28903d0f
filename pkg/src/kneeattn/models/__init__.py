"""Recurrent encoders with temporal and cyclic attention for knee-onset regression."""

from .layers import (TA_MODES, CnnConfig, ConfigError, GruParams, MhaParams, cnn_head, gru_batch,
                     gru_composed, gru_forward, multi_head_attention, self_attention, temporal_attention)
from .model import (ARCHITECTURES, ForwardResult, KneeModel, ModelConfig, has_ca, has_ta, init_params)

__all__ = [
    "ARCHITECTURES", "CnnConfig", "ConfigError", "ForwardResult", "GruParams", "KneeModel", "MhaParams",
    "ModelConfig", "TA_MODES", "cnn_head", "gru_batch", "gru_composed", "gru_forward", "has_ca", "has_ta",
    "init_params", "multi_head_attention", "self_attention", "temporal_attention",
]
