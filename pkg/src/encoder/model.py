"""
Transformer encoder with a cross-layer weight-sharing switch
"""
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .config import EncoderConfig
from ..numerics import (
    Tensor,
    add,
    dropout,
    gelu,
    get_default_dtype,
    layer_norm,
    linear,
    matmul,
    mul,
    reshape,
    softmax,
    transpose,
)
from ..utils.constants import INIT_STD
from ..utils.exceptions import ConfigError, DataError, ShapeError

# Fixed order of one layer block's parameters (also the checkpoint order)
BLOCK_PARAMETER_NAMES = (
    "query_weight", "query_bias",
    "key_weight", "key_bias",
    "value_weight", "value_bias",
    "output_weight", "output_bias",
    "ff_in_weight", "ff_in_bias",
    "ff_out_weight", "ff_out_bias",
    "attn_norm_scale", "attn_norm_shift",
    "ff_norm_scale", "ff_norm_shift",
)

MASKED_SCORE = -1e9


def block_shapes(config: EncoderConfig) -> Dict[str, Tuple[int, ...]]:
    d, ff = config.hidden_dim, config.ff_dim
    shapes = {}
    for proj in ("query", "key", "value", "output"):
        shapes[f"{proj}_weight"] = (d, d)
        shapes[f"{proj}_bias"] = (d,)
    shapes["ff_in_weight"] = (d, ff)
    shapes["ff_in_bias"] = (ff,)
    shapes["ff_out_weight"] = (ff, d)
    shapes["ff_out_bias"] = (d,)
    for norm in ("attn_norm", "ff_norm"):
        shapes[f"{norm}_scale"] = (d,)
        shapes[f"{norm}_shift"] = (d,)
    return shapes


def parameter_shapes(config: EncoderConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Every distinct parameter array, in checkpoint order."""
    shapes = [
        ("input.weight", (config.input_dim, config.hidden_dim)),
        ("input.bias", (config.hidden_dim,)),
    ]
    per_block = block_shapes(config)
    for b in range(config.num_blocks):
        shapes.extend((f"block{b}.{name}", per_block[name]) for name in BLOCK_PARAMETER_NAMES)
    shapes.append(("head.weight", (config.hidden_dim, config.target_dim)))
    shapes.append(("head.bias", (config.target_dim,)))
    return shapes


def sinusoidal_table(length: int, dim: int) -> np.ndarray:
    """Non-learned positional encoding, ``length x dim``."""
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2, dtype=np.float64) / dim))
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: dim // 2])
    return table.astype(get_default_dtype())


class LayerBlock:
    """Parameters of one transformer layer."""

    def __init__(self, tensors: Dict[str, Tensor]):
        missing = [name for name in BLOCK_PARAMETER_NAMES if name not in tensors]
        if missing:
            raise ConfigError(f"Layer block is missing parameters: {', '.join(missing)}")
        for name in BLOCK_PARAMETER_NAMES:
            setattr(self, name, tensors[name])

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return [(name, getattr(self, name)) for name in BLOCK_PARAMETER_NAMES]

    def copy(self) -> "LayerBlock":
        return LayerBlock({
            name: Tensor(t.data.copy(), requires_grad=t.requires_grad, name=t.name)
            for name, t in self.named_parameters()
        })


class EncoderWeights:
    """
    Parameter set of one encoder.

    In shared mode exactly one ``LayerBlock`` exists and ``layers`` returns
    that same object L times, so an in-place update is seen by every layer.
    """

    def __init__(
        self,
        config: EncoderConfig,
        input_weight: Tensor,
        input_bias: Tensor,
        blocks: Sequence[LayerBlock],
        head_weight: Tensor,
        head_bias: Tensor,
    ):
        if len(blocks) != config.num_blocks:
            raise ConfigError(
                f"Expected {config.num_blocks} layer block(s) for "
                f"share_weights={config.share_weights}, got {len(blocks)}"
            )
        self.config = config
        self.input_weight = input_weight
        self.input_bias = input_bias
        self.blocks = list(blocks)
        self.head_weight = head_weight
        self.head_bias = head_bias
        self.positional_table = sinusoidal_table(config.max_sequence_length, config.hidden_dim)

    @property
    def layers(self) -> List[LayerBlock]:
        if self.config.share_weights:
            return [self.blocks[0]] * self.config.num_layers
        return list(self.blocks)

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        named = [("input.weight", self.input_weight), ("input.bias", self.input_bias)]
        for b, block in enumerate(self.blocks):
            named.extend((f"block{b}.{name}", t) for name, t in block.named_parameters())
        named.append(("head.weight", self.head_weight))
        named.append(("head.bias", self.head_bias))
        return named

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.parameters())

    def requires_grad_(self, flag: bool = True) -> "EncoderWeights":
        for tensor in self.parameters():
            tensor.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.grad = None

    def copy(self) -> "EncoderWeights":
        def clone(t: Tensor) -> Tensor:
            return Tensor(t.data.copy(), requires_grad=t.requires_grad, name=t.name)

        return EncoderWeights(
            self.config,
            clone(self.input_weight),
            clone(self.input_bias),
            [block.copy() for block in self.blocks],
            clone(self.head_weight),
            clone(self.head_bias),
        )

    @classmethod
    def from_arrays(cls, config: EncoderConfig, arrays: Dict[str, np.ndarray]) -> "EncoderWeights":
        """Assemble weights from named arrays (names as in ``parameter_shapes``)."""

        def take(name: str) -> Tensor:
            return Tensor(arrays[name], requires_grad=True, name=name, dtype=arrays[name].dtype)

        blocks = [
            LayerBlock({name: take(f"block{b}.{name}") for name in BLOCK_PARAMETER_NAMES})
            for b in range(config.num_blocks)
        ]
        return cls(
            config,
            take("input.weight"),
            take("input.bias"),
            blocks,
            take("head.weight"),
            take("head.bias"),
        )


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    values = rng.normal(0.0, std, size=shape)
    outside = np.abs(values) > 2 * std
    while outside.any():
        values[outside] = rng.normal(0.0, std, size=int(outside.sum()))
        outside = np.abs(values) > 2 * std
    return values


def init_encoder(config: EncoderConfig, seed: int) -> EncoderWeights:
    """
    Deterministically initialize encoder weights.

    Projection matrices draw from a truncated normal (std 0.02), biases and
    layer-norm shifts start at zero and layer-norm scales at one. Shared mode
    allocates a single block.

    Args:
        config (EncoderConfig): Architecture
        seed (int): Initialization seed

    Returns:
        EncoderWeights: Fresh parameters with ``requires_grad=True``
    """
    rng = np.random.default_rng(seed)
    dtype = get_default_dtype()
    arrays = {}
    for name, shape in parameter_shapes(config):
        if name.endswith("_scale"):
            values = np.ones(shape)
        elif name.endswith("weight"):
            values = truncated_normal(rng, shape, INIT_STD)
        else:
            values = np.zeros(shape)
        arrays[name] = values.astype(dtype)
    return EncoderWeights.from_arrays(config, arrays)


def untie_weights(weights: EncoderWeights) -> EncoderWeights:
    """
    Unshared copy of ``weights``: every layer gets its own copy of the block
    it used, so both models compute the same function.
    """
    config = weights.config.with_overrides(share_weights=False)
    source = weights.copy()
    blocks = [block.copy() for block in weights.layers]
    return EncoderWeights(config, source.input_weight, source.input_bias, blocks,
                          source.head_weight, source.head_bias)


@dataclass
class LayerRepresentations:
    """Hidden states of layers 1..L (index 1 is the first layer's output)."""

    hidden_states: List[Tensor]

    def __len__(self) -> int:
        return len(self.hidden_states)

    def layer(self, index: int) -> Tensor:
        if not 1 <= index <= len(self.hidden_states):
            raise IndexError(f"Layer index {index} outside 1..{len(self.hidden_states)}")
        return self.hidden_states[index - 1]

    @property
    def last(self) -> Tensor:
        return self.hidden_states[-1]

    def arrays(self) -> List[np.ndarray]:
        return [h.data for h in self.hidden_states]


@dataclass
class AttentionRecord:
    """
    Attention probabilities of one forward pass.

    ``probabilities[l]`` has shape (B, A, T, T): row = query, column = key.
    """

    probabilities: List[np.ndarray]
    lengths: np.ndarray

    @property
    def num_layers(self) -> int:
        return len(self.probabilities)

    @property
    def num_heads(self) -> int:
        return self.probabilities[0].shape[1]

    @property
    def batch_size(self) -> int:
        return self.probabilities[0].shape[0]

    def matrix(self, layer: int, head: int, utterance: int = 0) -> np.ndarray:
        """Unpadded T x T attention of a 1-based (layer, head)."""
        if not 1 <= layer <= self.num_layers:
            raise IndexError(f"Layer index {layer} outside 1..{self.num_layers}")
        if not 1 <= head <= self.num_heads:
            raise IndexError(f"Head index {head} outside 1..{self.num_heads}")
        length = int(self.lengths[utterance])
        return self.probabilities[layer - 1][utterance, head - 1, :length, :length]


@dataclass
class EncoderOutput:
    representations: LayerRepresentations
    attention: Optional[AttentionRecord]
    reconstruction: Tensor


def _key_padding_bias(lengths: np.ndarray, num_frames: int) -> np.ndarray:
    valid = np.arange(num_frames)[None, :] < lengths[:, None]
    bias = np.where(valid, 0.0, MASKED_SCORE).astype(get_default_dtype())
    return bias[:, None, None, :]


def _encoder_layer(
    hidden: Tensor,
    block: LayerBlock,
    config: EncoderConfig,
    key_bias: np.ndarray,
    training: bool,
    rng: Optional[np.random.Generator],
) -> Tuple[Tensor, Tensor]:
    batch, frames, dim = hidden.shape
    heads, head_dim = config.num_heads, config.head_dim
    rate = config.dropout_rate

    def split_heads(t: Tensor) -> Tensor:
        return transpose(reshape(t, (batch, frames, heads, head_dim)), (0, 2, 1, 3))

    query = split_heads(linear(hidden, block.query_weight, block.query_bias))
    key = split_heads(linear(hidden, block.key_weight, block.key_bias))
    value = split_heads(linear(hidden, block.value_weight, block.value_bias))

    scores = mul(matmul(query, transpose(key)), 1.0 / math.sqrt(head_dim))
    probs = softmax(add(scores, key_bias))
    context = matmul(dropout(probs, rate, rng, training), value)
    context = reshape(transpose(context, (0, 2, 1, 3)), (batch, frames, dim))
    attended = dropout(linear(context, block.output_weight, block.output_bias), rate, rng, training)
    hidden = layer_norm(add(hidden, attended), block.attn_norm_scale, block.attn_norm_shift)

    expanded = gelu(linear(hidden, block.ff_in_weight, block.ff_in_bias))
    fed = dropout(linear(expanded, block.ff_out_weight, block.ff_out_bias), rate, rng, training)
    hidden = layer_norm(add(hidden, fed), block.ff_norm_scale, block.ff_norm_shift)
    return hidden, probs


def forward(
    weights: EncoderWeights,
    config: Optional[EncoderConfig],
    inputs,
    capture_attention: bool = False,
    *,
    lengths: Optional[Sequence[int]] = None,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> EncoderOutput:
    """
    Run the post-norm encoder stack.

    Args:
        weights (EncoderWeights): Parameters
        config: Run-time config (dropout may differ); None uses ``weights.config``
        inputs: (T, d_in) or padded (B, T, d_in) features
        capture_attention (bool): Keep per-layer attention probabilities
        lengths: True frame counts of a padded batch
        training (bool): Enable dropout
        rng: Dropout random generator (required when training with dropout)

    Returns:
        EncoderOutput: Layer representations, optional attention, reconstruction
    """
    config = config or weights.config
    if not config.same_architecture(weights.config):
        raise ConfigError("Run-time encoder config does not match the weights' architecture")

    x = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
    single = x.ndim == 2
    if single:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 3:
        raise ShapeError("encoder.forward", x.shape, ("T", config.input_dim))
    batch, frames, dim = x.shape
    if dim != config.input_dim:
        raise ShapeError("encoder.forward", x.shape, (frames, config.input_dim),
                         detail="feature dimension differs from encoder.input_dim")
    if frames > config.max_sequence_length:
        raise DataError(
            f"Sequence needs {frames} positions but the positional table "
            f"has {config.max_sequence_length} available"
        )

    lengths = np.full(batch, frames) if lengths is None else np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (batch,) or lengths.max(initial=0) > frames:
        raise ShapeError("encoder.forward", lengths.shape, (batch,), detail="lengths")
    key_bias = _key_padding_bias(lengths, frames)

    hidden = add(linear(x, weights.input_weight, weights.input_bias),
                 weights.positional_table[:frames])
    states: List[Tensor] = []
    attention: List[np.ndarray] = []
    for block in weights.layers:
        hidden, probs = _encoder_layer(hidden, block, config, key_bias, training, rng)
        states.append(hidden)
        if capture_attention:
            attention.append(probs.data)

    reconstruction = linear(hidden, weights.head_weight, weights.head_bias)

    if single:
        states = [reshape(h, (frames, config.hidden_dim)) for h in states]
        reconstruction = reshape(reconstruction, (frames, config.target_dim))

    record = AttentionRecord(attention, lengths) if capture_attention else None
    return EncoderOutput(LayerRepresentations(states), record, reconstruction)


@dataclass(frozen=True)
class ParameterCount:
    input_projection: int
    layer_block: int
    num_blocks: int
    reconstruction_head: int

    @property
    def layer_blocks(self) -> int:
        return self.layer_block * self.num_blocks

    @property
    def total(self) -> int:
        return self.input_projection + self.layer_blocks + self.reconstruction_head

    def breakdown(self) -> Dict[str, int]:
        return {
            "input_projection": self.input_projection,
            "layer_block": self.layer_block,
            "layer_blocks": self.layer_blocks,
            "reconstruction_head": self.reconstruction_head,
            "total": self.total,
        }


def parameter_breakdown(config: EncoderConfig) -> ParameterCount:
    """Parameter count from the architecture alone (nothing is allocated)."""
    d_in, d, d_out = config.input_dim, config.hidden_dim, config.target_dim
    per_block = sum(int(np.prod(shape)) for shape in block_shapes(config).values())
    return ParameterCount(
        input_projection=d_in * d + d,
        layer_block=per_block,
        num_blocks=config.num_blocks,
        reconstruction_head=d * d_out + d_out,
    )


def count_parameters(weights: EncoderWeights) -> ParameterCount:
    """
    Count each distinct parameter array once.

    Args:
        weights (EncoderWeights): Model to count

    Returns:
        ParameterCount: Total and per-component breakdown
    """
    seen = set()

    def distinct(tensors: Sequence[Tensor]) -> int:
        total = 0
        for tensor in tensors:
            if id(tensor) not in seen:
                seen.add(id(tensor))
                total += tensor.data.size
        return total

    input_projection = distinct([weights.input_weight, weights.input_bias])
    unique_blocks = {id(block): block for block in weights.layers}
    block_sizes = [distinct([t for _, t in block.named_parameters()])
                   for block in unique_blocks.values()]
    head = distinct([weights.head_weight, weights.head_bias])
    return ParameterCount(
        input_projection=input_projection,
        layer_block=block_sizes[0] if block_sizes else 0,
        num_blocks=len(block_sizes),
        reconstruction_head=head,
    )
