"""Polarity-consistent attention head for visual valence/arousal/dominance regression."""

from .backbone import backbone_forward, init_backbone, load_feature_map, save_feature_map
from .engine import Tensor, backward, grad_check, no_grad
from .evaluation import MetricReport, export_attention, mse_metric, r2_metric
from .head import (
    AttentionOutputs,
    FeatureMap,
    PdanetParams,
    channel_attention,
    coupled_spatial_attention,
    head_forward,
    init_params,
    spatial_attention,
)
from .losses import PcrConfig, mismatch, mse_loss, pcr_loss, polarity
from .model import Model, build_model

__version__ = "0.1.0"

__all__ = [
    "AttentionOutputs",
    "FeatureMap",
    "MetricReport",
    "Model",
    "PcrConfig",
    "PdanetParams",
    "Tensor",
    "backbone_forward",
    "backward",
    "build_model",
    "channel_attention",
    "coupled_spatial_attention",
    "export_attention",
    "grad_check",
    "head_forward",
    "init_backbone",
    "init_params",
    "load_feature_map",
    "mismatch",
    "mse_loss",
    "mse_metric",
    "no_grad",
    "pcr_loss",
    "polarity",
    "r2_metric",
    "save_feature_map",
    "spatial_attention",
]
