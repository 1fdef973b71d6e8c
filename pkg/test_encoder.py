"""
Tests for the encoder: parameter counts, sharing, forward pass and weight files
"""
import struct

import numpy as np
import pytest

from conftest import tiny_encoder_config
from src.encoder import (
    EncoderConfig,
    EncoderWeights,
    count_parameters,
    forward,
    init_encoder,
    load_weights,
    parameter_breakdown,
    save_weights,
    untie_weights,
    weights_checksum,
)
from src.numerics import AdamW, Tensor, backward, mul, sum_
from src.numerics.gradcheck import max_relative_error
from src.utils.constants import REFERENCE_ENCODER_SHAPE, REFERENCE_PARAMETER_TABLE
from src.utils.exceptions import (
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    DataError,
    ShapeError,
)

TOY = EncoderConfig(num_layers=2, hidden_dim=4, num_heads=2, ff_dim=8, input_dim=4, target_dim=4,
                    share_weights=False)


# Parameter counts

def test_toy_config_hand_count():
    # input 4*4+4, block 4*(16+4) + (32+8) + (32+4) + 2*(4+4), head 4*4+4
    assert parameter_breakdown(TOY).total == 384
    assert count_parameters(init_encoder(TOY, seed=0)).total == 384


def test_shared_count_does_not_grow_with_depth():
    one = parameter_breakdown(tiny_encoder_config(num_layers=1))
    twelve = parameter_breakdown(tiny_encoder_config(num_layers=12))
    assert twelve.total == one.total
    assert count_parameters(init_encoder(tiny_encoder_config(num_layers=12), 0)).total == one.total


def test_unshared_layer_blocks_double_with_depth():
    six = parameter_breakdown(tiny_encoder_config(num_layers=6, share_weights=False))
    three = parameter_breakdown(tiny_encoder_config(num_layers=3, share_weights=False))
    assert six.layer_blocks == 2 * three.layer_blocks


@pytest.mark.parametrize("name, layers, shared, published", REFERENCE_PARAMETER_TABLE)
def test_published_sizes_within_five_percent(name, layers, shared, published):
    config = EncoderConfig(num_layers=layers, share_weights=shared, **REFERENCE_ENCODER_SHAPE)
    assert parameter_breakdown(config).total == pytest.approx(published, rel=0.05)


def test_sharing_removes_about_ninety_one_percent():
    shared = parameter_breakdown(EncoderConfig(num_layers=12, share_weights=True, **REFERENCE_ENCODER_SHAPE))
    unshared = parameter_breakdown(EncoderConfig(num_layers=12, share_weights=False, **REFERENCE_ENCODER_SHAPE))
    assert shared.total == 7_366_089
    assert 0.90 <= 1 - shared.total / unshared.total <= 0.925


# Construction

def test_init_is_deterministic():
    a = init_encoder(tiny_encoder_config(), seed=7)
    b = init_encoder(tiny_encoder_config(), seed=7)
    for (name, x), (_, y) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(x.data, y.data, err_msg=name)


def test_heads_must_divide_hidden_dim():
    with pytest.raises(ConfigError, match="divisible"):
        tiny_encoder_config(hidden_dim=10, num_heads=4)


def test_shared_layers_alias_one_block():
    weights = init_encoder(tiny_encoder_config(num_layers=3), seed=0)
    assert len(weights.blocks) == 1
    assert all(layer is weights.blocks[0] for layer in weights.layers)
    weights.layers[0].query_weight.data[0, 0] = 5.0
    assert weights.layers[2].query_weight.data[0, 0] == 5.0


def test_shared_block_stays_aliased_and_updates_once_per_step():
    weights = init_encoder(tiny_encoder_config(num_layers=3), seed=0)
    frames = np.random.default_rng(1).normal(size=(6, weights.config.input_dim))
    before = weights.blocks[0].ff_in_weight.data.copy()
    # every layer lists the same tensors; the optimizer must see them once
    listed = weights.parameters() + [t for layer in weights.layers for _, t in layer.named_parameters()]
    optimizer = AdamW(listed, lr=1e-2, weight_decay=0.0)
    optimizer.zero_grad()
    backward(sum_(forward(weights, None, frames).reconstruction))
    gradient = weights.blocks[0].ff_in_weight.grad.copy()
    optimizer.step()

    assert len(weights.blocks) == 1
    assert all(layer is weights.blocks[0] for layer in weights.layers)
    assert all(layer.ff_in_weight is weights.blocks[0].ff_in_weight for layer in weights.layers)
    moved = np.abs(weights.blocks[0].ff_in_weight.data - before)
    active = np.abs(gradient) > 1e-4
    assert active.any()
    np.testing.assert_allclose(moved[active], 1e-2, rtol=1e-3)


# Forward

def test_single_frame_attention_is_one(tiny_config):
    weights = init_encoder(tiny_config, seed=0)
    output = forward(weights, None, np.ones((1, tiny_config.input_dim)), capture_attention=True)
    for layer in range(1, tiny_config.num_layers + 1):
        for head in range(1, tiny_config.num_heads + 1):
            np.testing.assert_allclose(output.attention.matrix(layer, head), [[1.0]])


def test_forward_shapes(tiny_config):
    weights = init_encoder(tiny_config, seed=0)
    frames = np.random.default_rng(0).normal(size=(10, tiny_config.input_dim))
    output = forward(weights, None, frames, capture_attention=True)
    assert len(output.representations) == tiny_config.num_layers
    assert output.representations.layer(1).shape == (10, tiny_config.hidden_dim)
    assert output.reconstruction.shape == (10, tiny_config.target_dim)
    assert output.attention.probabilities[0].shape == (1, tiny_config.num_heads, 10, 10)
    np.testing.assert_allclose(output.attention.matrix(2, 1).sum(axis=-1), 1.0, rtol=1e-5)


def test_sequence_longer_than_positional_table_is_rejected():
    config = tiny_encoder_config(max_sequence_length=8)
    weights = init_encoder(config, seed=0)
    with pytest.raises(DataError, match="needs 9 positions.*8 available"):
        forward(weights, None, np.zeros((9, config.input_dim)))


def test_wrong_feature_width_is_rejected(tiny_config):
    weights = init_encoder(tiny_config, seed=0)
    with pytest.raises(ShapeError, match="encoder.forward"):
        forward(weights, None, np.zeros((4, tiny_config.input_dim + 1)))


def test_padding_does_not_change_valid_frames(tiny_config):
    weights = init_encoder(tiny_config, seed=1)
    rng = np.random.default_rng(2)
    short = rng.normal(size=(5, tiny_config.input_dim))
    long = rng.normal(size=(8, tiny_config.input_dim))
    batch = np.zeros((2, 8, tiny_config.input_dim))
    batch[0, :5] = short
    batch[1] = long
    padded = forward(weights, None, batch, lengths=[5, 8])
    alone = forward(weights, None, short)
    np.testing.assert_allclose(padded.reconstruction.data[0, :5], alone.reconstruction.data, atol=1e-5)


@pytest.mark.parametrize("num_layers", [2, 3, 6])
def test_untied_copy_computes_the_same_function(num_layers):
    config = tiny_encoder_config(num_layers=num_layers)
    shared = init_encoder(config, seed=3)
    untied = untie_weights(shared)
    assert not untied.config.share_weights
    assert len(untied.blocks) == num_layers
    rng = np.random.default_rng(4)
    for _ in range(20):
        frames = rng.normal(size=(int(rng.integers(1, 30)), config.input_dim))
        one, other = forward(shared, None, frames), forward(untied, None, frames)
        for layer in range(1, num_layers + 1):
            np.testing.assert_allclose(one.representations.layer(layer).data,
                                       other.representations.layer(layer).data, atol=1e-5)
        np.testing.assert_allclose(one.reconstruction.data, other.reconstruction.data, atol=1e-5)


def test_batch_permutation_permutes_outputs(tiny_config):
    weights = init_encoder(tiny_config, seed=2)
    rng = np.random.default_rng(3)
    lengths = np.array([5, 9, 7, 2])
    batch = np.zeros((4, 9, tiny_config.input_dim))
    for row, length in enumerate(lengths):
        batch[row, :length] = rng.normal(size=(length, tiny_config.input_dim))
    order = np.array([2, 0, 3, 1])
    plain = forward(weights, None, batch, lengths=lengths)
    permuted = forward(weights, None, batch[order], lengths=lengths[order])
    for row, source in enumerate(order):
        valid = lengths[source]
        np.testing.assert_allclose(permuted.reconstruction.data[row, :valid],
                                   plain.reconstruction.data[source, :valid], atol=1e-5)
        np.testing.assert_allclose(permuted.representations.layer(1).data[row, :valid],
                                   plain.representations.layer(1).data[source, :valid], atol=1e-5)


def test_shared_block_gradient_is_sum_of_per_layer_gradients(float64):
    config = tiny_encoder_config(num_layers=3)
    shared = init_encoder(config, seed=5)
    untied = untie_weights(shared)
    rng = np.random.default_rng(6)
    frames = rng.normal(size=(7, config.input_dim))
    readout = rng.normal(size=(7, config.target_dim))

    for weights in (shared, untied):
        backward(sum_(mul(forward(weights, None, frames).reconstruction, Tensor(readout))))

    for name in ("query_weight", "ff_in_weight", "attn_norm_scale"):
        summed = sum(getattr(block, name).grad for block in untied.blocks)
        np.testing.assert_allclose(getattr(shared.blocks[0], name).grad, summed, rtol=1e-8, atol=1e-12)


def test_encoder_gradients_match_finite_differences(float64):
    config = tiny_encoder_config()
    weights = init_encoder(config, seed=8)
    rng = np.random.default_rng(9)
    frames = rng.normal(size=(5, config.input_dim))
    readout = Tensor(rng.normal(size=(5, config.target_dim)))
    block = weights.blocks[0]
    checked = [weights.input_weight, block.output_weight, block.value_weight,
               block.ff_in_weight, block.attn_norm_scale, weights.head_weight]

    def loss():
        return sum_(mul(forward(weights, None, frames).reconstruction, readout))

    assert max_relative_error(loss, checked, h=1e-5, max_entries=12) < 1e-4


# Weight files

def test_weight_file_round_trip(tmp_path, tiny_config):
    weights = init_encoder(tiny_config, seed=0)
    path = save_weights(weights, tmp_path / "model.aalw")
    loaded = load_weights(path)
    assert loaded.config == tiny_config
    assert count_parameters(loaded).total == count_parameters(weights).total
    for (name, x), (_, y) in zip(weights.named_parameters(), loaded.named_parameters()):
        np.testing.assert_array_equal(x.data, y.data, err_msg=name)
    assert loaded.layers[0] is loaded.layers[1]
    assert weights_checksum(loaded) == weights_checksum(weights)


def test_unshared_weight_file_round_trip(tmp_path):
    weights = init_encoder(tiny_encoder_config(share_weights=False), seed=0)
    loaded = load_weights(save_weights(weights, tmp_path / "model.aalw"))
    assert len(loaded.blocks) == 2
    assert loaded.layers[0] is not loaded.layers[1]


def test_corrupted_tail_reports_truncation(tmp_path, tiny_config):
    path = save_weights(init_encoder(tiny_config, seed=0), tmp_path / "model.aalw")
    blob = bytearray(path.read_bytes())
    blob[-3] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointTruncatedError):
        load_weights(path)


def test_cut_short_file_reports_truncation(tmp_path, tiny_config):
    path = save_weights(init_encoder(tiny_config, seed=0), tmp_path / "model.aalw")
    path.write_bytes(path.read_bytes()[:-40])
    with pytest.raises(CheckpointTruncatedError):
        load_weights(path)


def test_bad_magic_and_version(tmp_path, tiny_config):
    path = save_weights(init_encoder(tiny_config, seed=0), tmp_path / "model.aalw")
    blob = path.read_bytes()
    (tmp_path / "magic.aalw").write_bytes(b"XXXX" + blob[4:])
    (tmp_path / "version.aalw").write_bytes(blob[:4] + struct.pack("<I", 99) + blob[8:])
    with pytest.raises(CheckpointFormatError, match="magic"):
        load_weights(tmp_path / "magic.aalw")
    with pytest.raises(CheckpointVersionError, match="99"):
        load_weights(tmp_path / "version.aalw")


def test_config_and_array_shapes_must_agree(tmp_path, tiny_config):
    weights = init_encoder(tiny_config, seed=0)
    mislabeled = EncoderWeights(tiny_config.with_overrides(ff_dim=32), weights.input_weight,
                                weights.input_bias, weights.blocks, weights.head_weight, weights.head_bias)
    path = save_weights(mislabeled, tmp_path / "model.aalw")
    with pytest.raises(CheckpointShapeError, match="ff_in_weight"):
        load_weights(path)
