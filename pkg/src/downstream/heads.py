"""
Classification heads and layer fusion for downstream tasks
"""
import enum
from typing import List, Optional, Sequence, Union

import numpy as np

from ..encoder.model import LayerRepresentations, truncated_normal
from ..numerics import (
    Tensor,
    concatenate,
    gelu,
    get_default_dtype,
    linear,
    matmul,
    mul,
    reshape,
    softmax,
)
from ..numerics import sum_ as tensor_sum
from ..utils.constants import INIT_STD, NUM_PHONE_CLASSES
from ..utils.exceptions import ConfigError, ShapeError


class FusionMode(str, enum.Enum):
    LAST_LAYER = "last"
    WEIGHTED_SUM = "weighted_sum"


class TrainMode(str, enum.Enum):
    FEATURE_EXTRACTION = "feature_extraction"
    FINE_TUNE = "fine_tune"


def _parameter(rng: np.random.Generator, shape) -> Tensor:
    return Tensor(truncated_normal(rng, shape, INIT_STD), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class _Head:
    """Shared parameter bookkeeping for the trainable heads."""

    def parameters(self) -> List[Tensor]:
        raise NotImplementedError

    def snapshot(self) -> List[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def restore(self, arrays: Sequence[np.ndarray]) -> None:
        for param, values in zip(self.parameters(), arrays):
            param.data[...] = values


class FusionHead(_Head):
    """
    Combines the L layer outputs into one representation.

    ``WEIGHTED_SUM`` learns raw weights whose softmax mixes the layers;
    ``LAST_LAYER`` returns layer L unchanged and has no parameters.
    """

    def __init__(self, mode: Union[FusionMode, str], num_layers: int,
                 raw_weights: Optional[np.ndarray] = None):
        try:
            self.mode = FusionMode(mode)
        except ValueError:
            raise ConfigError(f"Unknown fusion mode {mode!r}. Known: last, weighted_sum") from None
        self.num_layers = num_layers
        if raw_weights is None:
            raw_weights = np.zeros(num_layers)
        self.raw_weights = Tensor(raw_weights, requires_grad=self.mode == FusionMode.WEIGHTED_SUM)
        if self.raw_weights.shape != (num_layers,):
            raise ShapeError("FusionHead", self.raw_weights.shape, (num_layers,))

    def parameters(self) -> List[Tensor]:
        return [self.raw_weights] if self.mode == FusionMode.WEIGHTED_SUM else []

    def layer_weights(self) -> np.ndarray:
        """Softmax mixing weights (sum to one)."""
        if self.mode == FusionMode.LAST_LAYER:
            weights = np.zeros(self.num_layers)
            weights[-1] = 1.0
            return weights
        return softmax(Tensor(self.raw_weights.data)).data


def fuse(reps: Union[LayerRepresentations, Sequence[Tensor]], head: FusionHead) -> Tensor:
    """
    Mix layer representations.

    Args:
        reps: Hidden states of layers 1..L
        head (FusionHead): Fusion mode and weights

    Returns:
        Tensor: Same shape as one layer's hidden state
    """
    states = list(reps.hidden_states if isinstance(reps, LayerRepresentations) else reps)
    states = [s if isinstance(s, Tensor) else Tensor(s) for s in states]
    if head.mode == FusionMode.LAST_LAYER:
        return states[-1]
    if len(states) != head.raw_weights.shape[0]:
        raise ShapeError("fuse", (len(states),), head.raw_weights.shape,
                         detail="one fusion weight per layer required")
    shape = states[0].shape
    stacked = concatenate([reshape(s, (1,) + shape) for s in states], axis=0)
    weights = reshape(softmax(head.raw_weights), (len(states),) + (1,) * len(shape))
    return tensor_sum(mul(stacked, weights), axis=0)


class PhonemeHead(_Head):
    """Two fully-connected layers with GELU between, one logit vector per frame."""

    def __init__(self, input_dim: int, hidden_dim: int = 768,
                 num_classes: int = NUM_PHONE_CLASSES, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.hidden_weight = _parameter(rng, (input_dim, hidden_dim))
        self.hidden_bias = _zeros((hidden_dim,))
        self.output_weight = _parameter(rng, (hidden_dim, num_classes))
        self.output_bias = _zeros((num_classes,))
        self.num_classes = num_classes

    def parameters(self) -> List[Tensor]:
        return [self.hidden_weight, self.hidden_bias, self.output_weight, self.output_bias]

    def __call__(self, features, lengths=None) -> Tensor:
        hidden = gelu(linear(features, self.hidden_weight, self.hidden_bias))
        return linear(hidden, self.output_weight, self.output_bias)


class SpeakerHead(_Head):
    """
    Per-frame linear layer followed by mean pooling over the valid frames.

    Pooling is a matrix product with a (B, 1, T) averaging matrix, so the
    logits do not depend on frame order.
    """

    def __init__(self, input_dim: int, num_speakers: int, seed: int = 0):
        if num_speakers < 1:
            raise ConfigError("SpeakerHead needs at least one speaker")
        rng = np.random.default_rng(seed)
        self.weight = _parameter(rng, (input_dim, num_speakers))
        self.bias = _zeros((num_speakers,))
        self.num_classes = num_speakers

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def __call__(self, features, lengths=None) -> Tensor:
        features = features if isinstance(features, Tensor) else Tensor(features)
        single = features.ndim == 2
        if single:
            features = reshape(features, (1,) + features.shape)
        batch, frames, _ = features.shape
        lengths = np.full(batch, frames) if lengths is None else np.asarray(lengths)
        pool = (np.arange(frames)[None, :] < lengths[:, None]) / np.maximum(lengths, 1)[:, None]
        frame_logits = linear(features, self.weight, self.bias)
        pooled = matmul(Tensor(pool[:, None, :].astype(get_default_dtype())), frame_logits)
        pooled = reshape(pooled, (batch, self.num_classes))
        return reshape(pooled, (self.num_classes,)) if single else pooled
