"""Tests for the tensor engine."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from pmn.errors import ContractError, DimensionError
from pmn.tensor import (
    LSTMWeights,
    Tape,
    Tensor,
    add,
    affine,
    backward,
    binary_cross_entropy,
    concat,
    conv1d,
    cosine_rows,
    cosine_similarity,
    dropout_apply,
    embedding_lookup,
    global_maxpool,
    lstm_cell,
    mean_of,
    mean_rows,
    mul,
    no_grad,
    relu,
    scale,
    sigmoid,
    softmax,
    sum_all,
    weighted_sum_rows,
)


def leaf(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def test_add_and_mul_gradients():
    """Test elementwise add/mul values and gradients."""
    a, b = leaf([1.0, 2.0]), leaf([3.0, -1.0])
    with Tape() as tape:
        loss = sum_all(mul(add(a, b), b))
    assert loss.item() == pytest.approx((4 * 3) + (1 * -1))
    backward(loss, tape)
    assert_allclose(a.grad, b.data)
    assert_allclose(b.grad, a.data + 2 * b.data)


def test_shape_mismatch_raises():
    """Test that elementwise ops reject mismatched shapes."""
    with pytest.raises(DimensionError):
        add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_backward_twice_doubles_gradients():
    """Test that replaying backward accumulates into leaf gradients exactly."""
    a = leaf([0.5, -2.0, 3.0])
    with Tape() as tape:
        loss = sum_all(mul(a, a))
    backward(loss, tape)
    once = a.grad.copy()
    backward(loss, tape)
    assert_array_equal(a.grad, 2 * once)


def test_intermediates_have_no_grad_buffer():
    """Test that only leaves own gradient buffers."""
    a = leaf([1.0])
    with Tape() as tape:
        b = scale(a, 2.0)
        loss = sum_all(b)
    backward(loss, tape)
    assert b.grad is None
    assert not b.is_leaf
    assert a.is_leaf


def test_backward_rejects_non_scalar():
    """Test that backward needs a scalar loss."""
    a = leaf([1.0, 2.0])
    with Tape() as tape:
        b = scale(a, 2.0)
    with pytest.raises(ContractError):
        backward(b, tape)


def test_backward_rejects_foreign_tape():
    """Test that the loss must come from the tape given to backward."""
    a = leaf([1.0])
    with Tape():
        loss = sum_all(a)
    with pytest.raises(ContractError):
        backward(loss, Tape())


def test_no_grad_records_nothing():
    """Test that no_grad suspends recording while still computing values."""
    a = leaf([1.0, 2.0])
    with Tape() as tape:
        with no_grad():
            out = sum_all(mul(a, a))
    assert len(tape) == 0
    assert out.item() == pytest.approx(5.0)
    assert not out.requires_grad


def test_relu_subgradient_at_zero():
    """Test that ReLU passes no gradient at exactly zero."""
    x = leaf([-1.0, 0.0, 2.0])
    with Tape() as tape:
        loss = sum_all(relu(x))
    backward(loss, tape)
    assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_softmax_sums_to_one_and_is_shift_invariant():
    """Test softmax normalization."""
    x = Tensor([1.0, 2.0, 3.0])
    s = softmax(x).data
    assert s.sum() == pytest.approx(1.0)
    assert_allclose(softmax(Tensor([101.0, 102.0, 103.0])).data, s)


def test_sigmoid_values():
    """Test sigmoid at a few points."""
    assert_allclose(sigmoid(Tensor([0.0, 100.0, -100.0])).data, [0.5, 1.0, 0.0], atol=1e-12)


def test_concat_routes_gradients():
    """Test that concat splits the gradient back to its parts."""
    a, b = leaf([1.0, 2.0]), leaf([3.0])
    weights = Tensor([1.0, 10.0, 100.0])
    with Tape() as tape:
        loss = sum_all(mul(concat([a, b]), weights))
    backward(loss, tape)
    assert_array_equal(a.grad, [1.0, 10.0])
    assert_array_equal(b.grad, [100.0])


def test_affine_matches_matrix_product(rng):
    """Test affine against numpy and its gradients."""
    x, W, b = leaf(rng.normal(size=3)), leaf(rng.normal(size=(2, 3))), leaf(rng.normal(size=2))
    with Tape() as tape:
        out = affine(x, W, b)
        loss = sum_all(out)
    assert_allclose(out.data, W.data @ x.data + b.data)
    backward(loss, tape)
    assert_allclose(x.grad, W.data.sum(axis=0))
    assert_allclose(W.grad, np.tile(x.data, (2, 1)))
    assert_allclose(b.grad, [1.0, 1.0])


def test_affine_rejects_bad_shapes():
    """Test affine dimension checks."""
    with pytest.raises(DimensionError):
        affine(Tensor([1.0, 2.0]), Tensor(np.ones((2, 3))))


def test_conv1d_matches_direct_loop(rng):
    """Test same-padded conv1d against an explicit loop."""
    x = rng.normal(size=(2, 7))
    kernels = rng.normal(size=(3, 2, 3))
    bias = rng.normal(size=3)
    out = conv1d(Tensor(x), Tensor(kernels), Tensor(bias)).data
    padded = np.pad(x, ((0, 0), (1, 1)))
    expected = np.zeros((3, 7))
    for o in range(3):
        for t in range(7):
            expected[o, t] = np.sum(kernels[o] * padded[:, t:t + 3]) + bias[o]
    assert_allclose(out, expected)
    assert out.shape == (3, 7)


def test_conv1d_rejects_even_width():
    """Test that conv1d only accepts odd kernel widths."""
    with pytest.raises(DimensionError):
        conv1d(Tensor(np.ones((1, 5))), Tensor(np.ones((1, 1, 2))), Tensor(np.zeros(1)))


def test_global_maxpool_routes_to_first_winner():
    """Test max-pool values and tie routing."""
    x = leaf([[1.0, 3.0, 3.0], [5.0, 0.0, -1.0]])
    with Tape() as tape:
        pooled = global_maxpool(x)
        loss = sum_all(pooled)
    assert_array_equal(pooled.data, [3.0, 5.0])
    backward(loss, tape)
    assert_array_equal(x.grad, [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])


def test_embedding_lookup_index_error():
    """Test out-of-range lookups raise IndexError."""
    table = Tensor(np.ones((3, 2)))
    with pytest.raises(IndexError):
        embedding_lookup(table, 3)
    with pytest.raises(IndexError):
        embedding_lookup(table, -1)


def test_embedding_lookup_gradient_is_sparse():
    """Test that only the looked-up row receives gradient."""
    table = leaf(np.arange(6.0).reshape(3, 2))
    with Tape() as tape:
        loss = sum_all(embedding_lookup(table, 1))
    backward(loss, tape)
    assert_array_equal(table.grad, [[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]])


def test_mean_rows_and_weighted_sum_rows():
    """Test the row reductions."""
    table = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert_allclose(mean_rows(table).data, [2.0, 3.0])
    assert_allclose(weighted_sum_rows(Tensor([0.5, 2.0]), table).data, [6.5, 9.0])
    with pytest.raises(DimensionError):
        weighted_sum_rows(Tensor([1.0]), table)


def test_cosine_basic_values():
    """Test cosine of parallel, orthogonal and zero vectors."""
    assert cosine_similarity(Tensor([1.0, 0.0]), Tensor([2.0, 0.0])).item() == pytest.approx(1.0)
    assert cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 3.0])).item() == pytest.approx(0.0)
    assert cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 1.0])).item() == 0.0


def test_cosine_rows_within_bounds(rng):
    """Test that cosine_rows stays in [-1, 1] and matches the pairwise op."""
    u = Tensor(rng.normal(size=5))
    table = Tensor(rng.normal(size=(4, 5)))
    cos = cosine_rows(u, table).data
    assert np.all(np.abs(cos) <= 1.0)
    for i in range(4):
        assert cos[i] == pytest.approx(cosine_similarity(u, Tensor(table.data[i])).item())


def test_dropout_identity_in_eval_mode(rng):
    """Test that dropout does nothing outside training."""
    x = Tensor([1.0, 2.0, 3.0])
    assert dropout_apply(x, 0.5, False, rng) is x
    with pytest.raises(ContractError):
        dropout_apply(x, 0.5, True, None)


def test_dropout_scales_kept_units():
    """Test inverted-dropout scaling."""
    x = Tensor(np.ones(1000))
    out = dropout_apply(x, 0.25, True, np.random.default_rng(0)).data
    kept = out[out != 0]
    assert_allclose(kept, 1.0 / 0.75)
    assert 650 < kept.size < 850


def test_dropout_zero_fraction_matches_rate():
    """Test the empirical drop rate and mean over 20000 elements at rate 0.5."""
    out = dropout_apply(Tensor(np.ones(20000)), 0.5, True, np.random.default_rng(7)).data
    assert abs(np.mean(out == 0) - 0.5) <= 0.02
    assert abs(out.mean() - 1.0) <= 0.04


def test_binary_cross_entropy_value_and_clamp():
    """Test BCE value and that clamped predictions stay finite."""
    loss = binary_cross_entropy(Tensor([0.8, 0.3]), np.array([1.0, 0.0]))
    assert loss.item() == pytest.approx(-np.log(0.8) - np.log(0.7))
    saturated = binary_cross_entropy(Tensor([0.0, 1.0]), np.array([1.0, 0.0]))
    assert np.isfinite(saturated.item())
    assert saturated.item() == pytest.approx(-2 * np.log(1e-7), rel=1e-6)


def test_lstm_cell_matches_manual_equations(rng):
    """Test lstm_cell against hand-written gate equations."""
    d = 3
    x, h, c = rng.normal(size=d), rng.normal(size=2 * d), rng.normal(size=d)
    W, U, b = rng.normal(size=(4 * d, d)), rng.normal(size=(4 * d, 2 * d)), rng.normal(size=4 * d)
    h_out, c_out = lstm_cell(Tensor(x), Tensor(h), Tensor(c), LSTMWeights(Tensor(W), Tensor(U), Tensor(b)))
    z = W @ x + U @ h + b
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    i, f, g, o = sig(z[:d]), sig(z[d:2 * d]), np.tanh(z[2 * d:3 * d]), sig(z[3 * d:])
    expected_c = f * c + i * g
    assert_allclose(c_out.data, expected_c)
    assert_allclose(h_out.data, o * np.tanh(expected_c))


def test_lstm_cell_rejects_wrong_sizes():
    """Test lstm_cell dimension checks."""
    d = 2
    weights = LSTMWeights(Tensor(np.ones((8, 2))), Tensor(np.ones((8, 4))), Tensor(np.zeros(8)))
    with pytest.raises(DimensionError):
        lstm_cell(Tensor(np.ones(d)), Tensor(np.ones(d)), Tensor(np.ones(d)), weights)


def test_mean_of_scalars():
    """Test averaging scalar tensors."""
    assert mean_of([Tensor(1.0), Tensor(2.0), Tensor(6.0)]).item() == pytest.approx(3.0)
    with pytest.raises(ContractError):
        mean_of([])


def test_kink_signature_tracks_relu_pattern():
    """Test that the kink signature changes only when a ReLU decision flips."""

    def signature(values):
        with Tape() as tape:
            relu(leaf(values))
        return tape.kink_signature()

    assert signature([1.0, -1.0]) == signature([2.0, -3.0])
    assert signature([1.0, -1.0]) != signature([-1.0, -1.0])


def test_float32_precision_is_preserved():
    """Test that operations keep 32-bit inputs at 32-bit."""
    x = Tensor(np.ones(3, dtype=np.float32))
    assert sigmoid(x).dtype == np.float32
    assert sum_all(x).dtype == np.float32
    assert scale(x, 0.5).dtype == np.float32
