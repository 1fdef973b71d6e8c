"""
Tests for tensors, autodiff primitives and AdamW
"""
import logging

import numpy as np
import pytest

from conftest import tiny_encoder_config
from src.encoder import forward, init_encoder
from src.numerics import (
    AdamW,
    AdamWState,
    Tensor,
    Tape,
    adamw_step,
    backward,
    cross_entropy,
    forward_primitive,
    gelu,
    l1_loss,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    no_grad,
    reshape,
    softmax,
    sum_,
    transpose,
)
from src.numerics.gradcheck import max_relative_error
from src.pretraining import reconstruction_loss
from src.utils.exceptions import ShapeError


def test_softmax_of_equal_scores_is_uniform():
    out = forward_primitive("softmax", Tensor([0.0, 0.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5])


def test_layer_norm_of_constant_row_is_zero():
    out = layer_norm(Tensor(np.full((2, 5), 3.0)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-6)


def test_matmul_with_identity_returns_operand():
    a = np.arange(9.0).reshape(3, 3)
    np.testing.assert_allclose(matmul(Tensor(np.eye(3)), Tensor(a)).data, a)


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"add.*\(2,\).*\(3,\)"):
        forward_primitive("add", Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ShapeError, match="matmul"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_unknown_primitive_is_rejected():
    with pytest.raises(ValueError, match="Unknown primitive"):
        forward_primitive("conv2d", Tensor([1.0]))


def test_backward_of_sum_of_squares():
    w = Tensor([1.0, 2.0], requires_grad=True)
    backward(sum_(mul(w, w)))
    np.testing.assert_allclose(w.grad, [2.0, 4.0])


def test_parameter_used_twice_accumulates_gradient():
    w = Tensor([1.0, -1.0], requires_grad=True)
    x1 = np.array([3.0, 5.0])
    x2 = np.array([-2.0, 7.0])
    loss = sum_(mul(w, x1)) + sum_(mul(w, x2))
    backward(loss)
    np.testing.assert_allclose(w.grad, x1 + x2)


def test_backward_accumulates_across_calls():
    w = Tensor([1.0], requires_grad=True)
    backward(sum_(mul(w, 2.0)))
    backward(sum_(mul(w, 2.0)))
    np.testing.assert_allclose(w.grad, [4.0])


def test_backward_rejects_non_scalar_loss():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError, match="backward"):
        backward(mul(w, 2.0))


def test_backward_rejects_empty_tape():
    with pytest.raises(ValueError, match="empty tape"):
        backward(Tensor(1.0))


def test_no_grad_records_nothing():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        out = sum_(mul(w, w))
    assert not out.requires_grad
    assert out.is_leaf


def test_tape_lists_operations_in_topological_order():
    w = Tensor([1.0, 2.0], requires_grad=True)
    loss = sum_(mul(w, w))
    tape = Tape.trace(loss)
    assert [op.kind for op in tape.operations] == ["mul", "sum"]


def test_l1_loss_hand_example():
    predicted = Tensor(np.array([[1.0, 3.0], [2.0, 0.0], [9.0, 9.0]]))
    target = np.zeros((3, 2))
    mask = np.array([1.0, 1.0, 0.0])
    assert l1_loss(predicted, target, mask).item() == pytest.approx(1.5)


def test_cross_entropy_uniform_logits():
    logits = Tensor(np.zeros((4, 3)))
    assert cross_entropy(logits, np.array([0, 1, 2, 0])).item() == pytest.approx(np.log(3.0), rel=1e-6)


def test_cross_entropy_rejects_out_of_range_target():
    with pytest.raises(ShapeError, match="target ids"):
        cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


@pytest.mark.parametrize("name, build", [
    ("matmul", lambda a, b: sum_(matmul(a, b))),
    ("softmax", lambda a, b: sum_(mul(softmax(matmul(a, b)), Tensor(np.arange(12.0).reshape(3, 4))))),
    ("gelu", lambda a, b: sum_(gelu(matmul(a, b)))),
    ("layer_norm", lambda a, b: sum_(mul(layer_norm(matmul(a, b)), Tensor(np.linspace(-1, 1, 12).reshape(3, 4))))),
    ("transpose_reshape", lambda a, b: mean(mul(reshape(transpose(matmul(a, b)), (12,)), Tensor(np.arange(12.0))))),
    ("linear", lambda a, b: sum_(mul(linear(a, b, Tensor(np.ones(4))), linear(a, b)))),
])
def test_gradients_match_finite_differences(float64, name, build):
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    b = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    assert max_relative_error(lambda: build(a, b), [a, b], h=1e-6) < 1e-5


def test_cross_entropy_gradient_matches_finite_differences(float64):
    rng = np.random.default_rng(1)
    logits = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    targets = rng.integers(0, 4, size=6)
    weights = np.array([1.0, 1.0, 0.0, 1.0, 0.5, 1.0])
    assert max_relative_error(lambda: cross_entropy(logits, targets, weights), [logits], h=1e-6) < 1e-5


# AdamW

def test_adamw_zero_gradient_without_decay_leaves_params():
    param = Tensor([1.0, -2.0], dtype=np.float64)
    state = AdamWState(learning_rate=0.1, weight_decay=0.0)
    adamw_step([param], [np.zeros(2)], state)
    np.testing.assert_array_equal(param.data, [1.0, -2.0])
    assert state.step == 1


def test_adamw_first_step_moves_by_learning_rate():
    param = Tensor([0.0], dtype=np.float64)
    state = AdamWState(learning_rate=0.1, beta1=0.9, beta2=0.999, epsilon=1e-8, weight_decay=0.0)
    adamw_step([param], [np.ones(1)], state)
    assert param.data[0] == pytest.approx(-0.1, abs=1e-7)


def test_adamw_decoupled_weight_decay_scales_param():
    param = Tensor([2.0], dtype=np.float64)
    state = AdamWState(learning_rate=0.1, weight_decay=0.01)
    adamw_step([param], [np.zeros(1)], state)
    assert param.data[0] == pytest.approx(2.0 * (1 - 0.001))


def test_adamw_non_finite_gradient_skips_update(caplog):
    param = Tensor([1.0], dtype=np.float64)
    state = AdamWState(learning_rate=0.1)
    with caplog.at_level(logging.WARNING):
        applied = adamw_step([param], [np.array([np.nan])], state)
    assert not applied
    assert param.data[0] == 1.0
    assert state.step == 1
    assert "Non-finite gradient" in caplog.text


def test_adamw_matches_reference_update_bitwise():
    rng = np.random.default_rng(3)
    start = rng.normal(size=4)
    grads = [rng.normal(size=4) for _ in range(3)]
    param = Tensor(start.copy(), dtype=np.float64)
    state = AdamWState(learning_rate=0.01, weight_decay=0.1)
    for grad in grads:
        adamw_step([param], [grad], state)

    expected = start.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    for step, grad in enumerate(grads, start=1):
        expected *= 1 - 0.01 * 0.1
        m = 0.9 * m + (1 - 0.9) * grad
        v = 0.999 * v + (1 - 0.999) * grad * grad
        m_hat = m / (1 - 0.9 ** step)
        v_hat = v / (1 - 0.999 ** step)
        expected -= 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8)
    np.testing.assert_array_equal(param.data, expected)


def test_adamw_updates_shared_tensor_once():
    shared = Tensor([1.0], requires_grad=True, dtype=np.float64)
    optimizer = AdamW([shared, shared], lr=0.1, weight_decay=0.0)
    assert len(optimizer.param_groups[0]["params"]) == 1
    shared.grad = np.ones(1)
    optimizer.step()
    assert shared.data[0] == pytest.approx(0.9, abs=1e-7)


def test_adamw_warmup_scales_learning_rate():
    optimizer = AdamW([Tensor([0.0])], lr=1.0, warmup_steps=4)
    assert optimizer.scheduled_lr(1.0, 1) == pytest.approx(0.25)
    assert optimizer.scheduled_lr(1.0, 10) == pytest.approx(1.0)


def test_adamw_state_round_trip(tmp_path):
    param = Tensor([1.0, 2.0], requires_grad=True, dtype=np.float64)
    optimizer = AdamW([param], lr=0.1)
    param.grad = np.array([0.5, -0.5])
    optimizer.step()
    optimizer.save_state(tmp_path / "opt.npz")

    restored = AdamW([Tensor([1.0, 2.0], requires_grad=True, dtype=np.float64)], lr=0.1)
    restored.load_state(tmp_path / "opt.npz")
    assert restored.step_count == 1
    state = restored.param_groups[0]["state"]
    np.testing.assert_array_equal(state.first_moments[0], optimizer.param_groups[0]["state"].first_moments[0])


# End to end

def test_masked_reconstruction_gradient_matches_finite_differences(float64):
    config = tiny_encoder_config(num_layers=2)
    weights = init_encoder(config, seed=11)
    rng = np.random.default_rng(12)
    lengths = np.array([6, 4])
    inputs = np.zeros((2, 6, config.input_dim))
    inputs[0] = rng.normal(size=(6, config.input_dim))
    inputs[1, :4] = rng.normal(size=(4, config.input_dim))
    targets = rng.normal(loc=3.0, size=(2, 6, config.target_dim))
    mask = np.zeros((2, 6))
    mask[0, [1, 4]] = 1.0
    mask[1, 2] = 1.0
    block = weights.blocks[0]
    checked = [weights.input_weight, block.query_weight, block.ff_out_weight,
               block.ff_norm_scale, weights.head_weight, weights.head_bias]

    def loss():
        output = forward(weights, None, inputs, lengths=lengths)
        return reconstruction_loss(output.reconstruction, targets, mask, lengths)

    assert max_relative_error(loss, checked, h=1e-5, max_entries=10) < 1e-4
