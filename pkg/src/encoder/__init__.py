"""
Transformer encoder (shared or unshared layer blocks), parameter counting and weight files
"""
from .config import EncoderConfig
from .model import (
    AttentionRecord,
    EncoderOutput,
    EncoderWeights,
    LayerBlock,
    LayerRepresentations,
    ParameterCount,
    count_parameters,
    forward,
    init_encoder,
    parameter_breakdown,
    untie_weights,
)
from .checkpoint import load_weights, save_weights, weights_checksum

__all__ = [
    "AttentionRecord", "EncoderConfig", "EncoderOutput", "EncoderWeights", "LayerBlock",
    "LayerRepresentations", "ParameterCount", "count_parameters", "forward", "init_encoder",
    "load_weights", "parameter_breakdown", "save_weights", "untie_weights", "weights_checksum",
]
