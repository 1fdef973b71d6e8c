"""
Attention-distribution analysis
"""
from .attention_divergence import (
    JSMatrix,
    build_js_matrices,
    divergence_matrices,
    js_divergence,
    layer_pair_divergence,
    sample_utterances,
    write_js_matrices,
)

__all__ = [
    "JSMatrix", "build_js_matrices", "divergence_matrices", "js_divergence",
    "layer_pair_divergence", "sample_utterances", "write_js_matrices",
]
