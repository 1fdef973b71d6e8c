"""
Masked spectrogram reconstruction pre-training
"""
from .masking import MaskAction, MaskPolicy, MaskSpec, apply_mask, downsample
from .batch import PretrainBatch, build_pretrain_batch, model_inputs, model_targets, pad_sequences
from .trainer import (
    OptimizerSettings,
    PretrainResult,
    PretrainSettings,
    Pretrainer,
    pretrain,
    reconstruction_loss,
)

__all__ = [
    "MaskAction", "MaskPolicy", "MaskSpec", "OptimizerSettings", "PretrainBatch", "PretrainResult",
    "PretrainSettings", "Pretrainer", "apply_mask", "build_pretrain_batch", "downsample",
    "model_inputs", "model_targets", "pad_sequences", "pretrain", "reconstruction_loss",
]
