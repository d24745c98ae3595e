"""Tests for finite-difference gradient checking."""

import numpy as np
import pytest

from pmn.errors import ConfigError, ContractError
from pmn.gradcheck import GradCheckSuite, check_model_gradients, grad_check, relative_error
from pmn.model import ModelParams, PMNConfig, attention_weights, hop, init_read_vector, prototype_matching_loss
from pmn.tensor import (
    LSTMWeights,
    Tape,
    Tensor,
    _result,
    binary_cross_entropy,
    conv1d,
    cosine_rows,
    global_maxpool,
    lstm_cell,
    relu,
    sigmoid,
    softmax,
    sum_all,
    weighted_sum_rows,
)


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def test_relative_error_floor():
    """Test the relative error definition and its floor."""
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)
    assert relative_error(0.0, 1e-9) == pytest.approx(1e-3)


def test_grad_check_requires_64_bit():
    """Test that 32-bit parameters are rejected."""
    p = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)

    def loss_fn():
        with Tape() as tape:
            loss = sum_all(p)
        return loss, tape

    with pytest.raises(ContractError):
        grad_check(loss_fn, {"p": p})


def test_grad_check_passes_on_smooth_composite(rng):
    """Test sigmoid/softmax/cosine/weighted-sum chain."""
    u, table = leaf(rng, 4), leaf(rng, 3, 4)

    def loss_fn():
        with Tape() as tape:
            w = softmax(cosine_rows(u, table))
            loss = sum_all(sigmoid(weighted_sum_rows(w, table)))
        return loss, tape

    report = grad_check(loss_fn, {"u": u, "table": table})
    assert report.passed, report.summary()
    assert report.elements_checked == 16


def test_grad_check_passes_on_conv_relu_maxpool(rng):
    """Test the encoder primitives, skipping kink crossings."""
    x = Tensor(rng.normal(size=(4, 10)))
    kernels, bias = leaf(rng, 3, 4, 5), leaf(rng, 3)

    def loss_fn():
        with Tape() as tape:
            pooled = global_maxpool(relu(conv1d(x, kernels, bias)))
            loss = binary_cross_entropy(sigmoid(pooled), np.array([1.0, 0.0, 1.0]))
        return loss, tape

    report = grad_check(loss_fn, {"kernels": kernels, "bias": bias})
    assert report.passed, report.summary()


def test_grad_check_passes_on_lstm_cell(rng):
    """Test lstm_cell gradients for every input and weight."""
    d = 3
    x, h, c = leaf(rng, d), leaf(rng, 2 * d), leaf(rng, d)
    W, U, b = leaf(rng, 4 * d, d), leaf(rng, 4 * d, 2 * d), leaf(rng, 4 * d)

    def loss_fn():
        with Tape() as tape:
            h_out, c_out = lstm_cell(x, h, c, LSTMWeights(W, U, b))
            loss = sum_all(sigmoid(h_out)) + sum_all(c_out)
        return loss, tape

    report = grad_check(loss_fn, {"x": x, "h": h, "c": c, "W": W, "U": U, "b": b})
    assert report.passed, report.summary()


def test_grad_check_detects_wrong_gradient(rng):
    """Test that a deliberately wrong backward rule fails the check."""
    p = leaf(rng, 3)

    def doubled_wrong(x):
        return _result("wrong", (x,), x.data * 2.0, lambda g: (g * 3.0,))

    def loss_fn():
        with Tape() as tape:
            loss = sum_all(doubled_wrong(p))
        return loss, tape

    report = grad_check(loss_fn, {"p": p})
    assert not report.passed
    assert report.params["p"].max_relative_error == pytest.approx(1.0 / 3.0)


def test_grad_check_hop_with_softmax_and_sigmoid(rng, make_config):
    """Test one hop in both attention modes, prototypes included."""
    config = make_config()
    params = ModelParams.initialize(config, rng)
    d = config.embedding_dim
    x_hat = Tensor(rng.normal(size=d))
    y = np.array([1.0, 0.0, 1.0])
    for final in (False, True):
        softmax_config = make_config(attention_mode="softmax_hops")

        def loss_fn():
            with Tape() as tape:
                r0 = init_read_vector(params.bank)
                zeros = Tensor(np.zeros(d))
                state = hop(x_hat, zeros, zeros, r0, params, softmax_config, final=final)
                loss = sum_all(state.h) + prototype_matching_loss(state.w, y)
            return loss, tape

        names = ("lstm.W", "lstm.U", "lstm.bias", "prototypes")
        report = grad_check(loss_fn, {name: params[name] for name in names})
        assert report.passed, report.summary()


def test_prototype_gradient_through_read_path_only(rng, make_config):
    """Test that with detached weights prototypes receive gradient only via the read vector."""
    config = make_config()
    params = ModelParams.initialize(config, rng)
    bank = params.bank
    u = Tensor(rng.normal(size=config.embedding_dim))
    with Tape():
        frozen = Tensor(attention_weights(u, bank, config.epsilon).data)

    def loss_fn():
        with Tape() as tape:
            loss = sum_all(weighted_sum_rows(frozen, bank.P))
        return loss, tape

    report = grad_check(loss_fn, {"prototypes": bank.P})
    assert report.passed
    expected = np.tile(frozen.data[:, None], (1, config.embedding_dim))
    np.testing.assert_allclose(bank.P.grad, expected)


@pytest.mark.parametrize("variant", ["cnn_single", "cnn_multi", "pmn_no_lstm", "pmn"])
@pytest.mark.parametrize("mode", ["sigmoid", "softmax_hops"])
def test_full_model_gradients(variant, mode):
    """Test the full training loss of every variant and attention mode."""
    config = PMNConfig(
        num_labels=4,
        embedding_dim=8,
        seq_length=20,
        hops=2,
        conv_channels=(8, 8, 8),
        conv_widths=(5, 3, 3),
        variant=variant,
        attention_mode=mode,
        dropout=0.0,
    )
    report = check_model_gradients(config, seed=0, max_elements=8)
    assert report.passed, report.summary()
    assert report.elements_checked > 0


def test_suite_from_sources(tmp_path):
    """Test suite configuration parsing and rejection of unknown keys."""
    path = tmp_path / "gc.conf"
    path.write_text("seeds = 2\nvariants = pmn, cnn_multi\n", encoding="utf-8")
    suite = GradCheckSuite.from_sources(path, ["max_elements=4"])
    assert suite.seeds == 2
    assert suite.variants == ("pmn", "cnn_multi")
    assert suite.max_elements == 4
    assert len(list(suite.model_configs())) == 4
    with pytest.raises(ConfigError):
        GradCheckSuite.from_sources(None, ["bogus=1"])
