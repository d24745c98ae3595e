"""Prototype Matching Network model family and its losses.

Four variants share the 3-layer CNN sequence encoder:

- ``cnn_single`` / ``cnn_multi``: encoder plus a sigmoid output head
  (one output, or one per label).
- ``pmn_no_lstm``: a single sigmoid attention pass of the embedding over the
  prototype bank, head on ``[x_hat; r]``.
- ``pmn``: K hops of the combination LSTM refining the match between the
  embedding and the prototypes, head on ``[h_K; r_K]``.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ContractError, DimensionError
from .tensor import (
    LSTMWeights,
    Tensor,
    add,
    affine,
    binary_cross_entropy,
    concat,
    conv1d,
    cosine_rows,
    dropout_apply,
    embedding_lookup,
    global_maxpool,
    lstm_cell,
    mean_rows,
    mul,
    no_grad,
    relu,
    resolve_dtype,
    scale,
    sigmoid,
    softmax,
    sub,
    sum_all,
    weighted_sum_rows,
)

logger = logging.getLogger(__name__)

Variant = Literal["cnn_single", "cnn_multi", "pmn_no_lstm", "pmn"]
AttentionMode = Literal["sigmoid", "softmax_hops"]

INPUT_CHANNELS = 4
FORGET_GATE_BIAS = 1.0


class PMNConfig(BaseModel):
    """Hyperparameters of one PMN-family model."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    num_labels: int = Field(gt=0)
    embedding_dim: int = Field(default=128, gt=0)
    seq_length: int = Field(default=200, gt=0)
    hops: int = Field(default=5, ge=0)
    epsilon: float = Field(default=20.0, gt=0)
    prototype_weight: float = Field(default=1.0, ge=0)
    attention_mode: AttentionMode = "sigmoid"
    variant: Variant = "pmn"
    conv_channels: Tuple[int, ...] = (512, 256, 128)
    conv_widths: Tuple[int, ...] = (9, 5, 3)
    dropout: float = Field(default=0.2, ge=0, lt=1)
    match_updated_state: bool = False
    precision: Literal["f32", "f64"] = "f32"

    @model_validator(mode="after")
    def _check_architecture(self) -> "PMNConfig":
        if len(self.conv_channels) != len(self.conv_widths) or not self.conv_channels:
            raise ValueError("conv_channels and conv_widths must have the same non-zero length")
        if any(c <= 0 for c in self.conv_channels):
            raise ValueError("conv channel counts must be positive")
        if any(w <= 0 or w % 2 == 0 for w in self.conv_widths):
            raise ValueError("conv widths must be positive and odd")
        if self.embedding_dim != self.conv_channels[-1]:
            raise ValueError(
                f"embedding_dim ({self.embedding_dim}) must equal the last conv channel count "
                f"({self.conv_channels[-1]})"
            )
        if self.seq_length < max(self.conv_widths):
            raise ValueError(f"seq_length {self.seq_length} is shorter than the widest kernel")
        if self.variant == "pmn" and self.hops < 1:
            raise ValueError("variant 'pmn' needs at least one hop")
        return self

    @property
    def output_size(self) -> int:
        return 1 if self.variant == "cnn_single" else self.num_labels

    @property
    def uses_prototypes(self) -> bool:
        return self.variant in ("pmn", "pmn_no_lstm")

    @property
    def dtype(self) -> type:
        return resolve_dtype(self.precision)

    def with_precision(self, precision: str) -> "PMNConfig":
        return self.model_copy(update={"precision": precision})


class PrototypeBank:
    """One learned prototype row per label."""

    def __init__(self, P: Tensor):
        if P.data.ndim != 2:
            raise DimensionError(f"prototype bank must be 2-D, got shape {P.shape}")
        self.P = P

    @property
    def num_labels(self) -> int:
        return self.P.shape[0]

    @property
    def dim(self) -> int:
        return self.P.shape[1]

    def lookup(self, label: int) -> Tensor:
        return embedding_lookup(self.P, label)


def _glorot_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ModelParams:
    """All trainable tensors of a model, keyed by stable names."""

    def __init__(self, tensors: Dict[str, Tensor]):
        self.tensors = tensors

    @staticmethod
    def expected_shapes(config: PMNConfig) -> Dict[str, Tuple[int, ...]]:
        """Parameter names and shapes; a pure function of the config."""
        shapes: Dict[str, Tuple[int, ...]] = {}
        in_channels = INPUT_CHANNELS
        for layer, (channels, width) in enumerate(zip(config.conv_channels, config.conv_widths), start=1):
            shapes[f"conv{layer}.weight"] = (channels, in_channels, width)
            shapes[f"conv{layer}.bias"] = (channels,)
            in_channels = channels
        d = config.embedding_dim
        if config.variant == "pmn":
            shapes["lstm.W"] = (4 * d, d)
            shapes["lstm.U"] = (4 * d, 2 * d)
            shapes["lstm.bias"] = (4 * d,)
        head_inputs = 2 * d if config.uses_prototypes else d
        shapes["head.weight"] = (config.output_size, head_inputs)
        shapes["head.bias"] = (config.output_size,)
        if config.uses_prototypes:
            shapes["prototypes"] = (config.num_labels, d)
        return shapes

    @classmethod
    def initialize(cls, config: PMNConfig, rng: np.random.Generator) -> "ModelParams":
        """
        Draw fresh parameters.

        Weights use fan-based uniform limits, biases start at zero except the
        LSTM forget gate (1.0), prototypes are N(0, 1/sqrt(d)).
        """
        dtype = config.dtype
        d = config.embedding_dim
        tensors: Dict[str, Tensor] = {}
        for name, shape in cls.expected_shapes(config).items():
            if name == "prototypes":
                values = rng.normal(0.0, 1.0 / np.sqrt(d), size=shape)
            elif name.endswith("bias"):
                values = np.zeros(shape)
                if name == "lstm.bias":
                    values[d:2 * d] = FORGET_GATE_BIAS
            elif name.startswith("conv"):
                out_ch, in_ch, width = shape
                values = _glorot_uniform(rng, shape, in_ch * width, out_ch * width)
            else:
                values = _glorot_uniform(rng, shape, shape[1], shape[0])
            tensors[name] = Tensor(values, requires_grad=True, dtype=dtype, name=name)
        return cls(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def zero_grad(self) -> None:
        for tensor in self.tensors.values():
            tensor.zero_grad()

    def astype(self, precision: str) -> "ModelParams":
        """Copy every tensor into the given precision with fresh gradients."""
        dtype = resolve_dtype(precision)
        return ModelParams(
            {name: Tensor(t.data.astype(dtype), requires_grad=True, name=name) for name, t in self.tensors.items()}
        )

    def copy(self) -> "ModelParams":
        return ModelParams(
            {name: Tensor(t.data.copy(), requires_grad=True, name=name) for name, t in self.tensors.items()}
        )

    def check_against(self, config: PMNConfig) -> None:
        expected = self.expected_shapes(config)
        actual = {name: t.shape for name, t in self.tensors.items()}
        if expected != actual:
            raise DimensionError(f"parameters do not match config: expected {expected}, got {actual}")

    @property
    def bank(self) -> PrototypeBank:
        return PrototypeBank(self.tensors["prototypes"])

    def lstm_weights(self) -> LSTMWeights:
        return LSTMWeights(self.tensors["lstm.W"], self.tensors["lstm.U"], self.tensors["lstm.bias"])


@dataclass
class HopState:
    """Symbols produced by one hop of the combination LSTM."""

    h_hat: Tensor
    h: Tensor
    c: Tensor
    r: Tensor
    w: Tensor


@dataclass
class ForwardOutput:
    x_hat: Tensor
    y_hat: Tensor
    w_final: Optional[Tensor] = None
    hops: List[HopState] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Forward components
# ---------------------------------------------------------------------------

def encode_sequence(
    x: Tensor,
    params: ModelParams,
    config: PMNConfig,
    training: bool,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Conv+ReLU layers, global max-pool over length, dropout on the embedding."""
    if x.data.ndim != 2 or x.shape[0] != INPUT_CHANNELS:
        raise DimensionError(f"encoder expects a {INPUT_CHANNELS} x T one-hot input, got shape {x.shape}")
    hidden = x
    for layer in range(1, len(config.conv_channels) + 1):
        hidden = relu(conv1d(hidden, params[f"conv{layer}.weight"], params[f"conv{layer}.bias"]))
    x_hat = global_maxpool(hidden)
    return dropout_apply(x_hat, config.dropout, training, rng)


def init_read_vector(bank: PrototypeBank) -> Tensor:
    """Mean of all prototype vectors."""
    return mean_rows(bank.P)


def attention_weights(h_hat: Tensor, bank: PrototypeBank, epsilon: float, mode: str = "sigmoid") -> Tensor:
    """Match a state against every prototype by cosine similarity sharpened by epsilon."""
    if epsilon <= 0:
        raise ContractError(f"attention sharpness must be positive, got {epsilon}")
    logits = scale(cosine_rows(h_hat, bank.P), epsilon)
    if mode == "sigmoid":
        return sigmoid(logits)
    if mode == "softmax":
        return softmax(logits)
    raise ContractError(f"unknown attention mode '{mode}'")


def _hop_mode(config: PMNConfig, final: bool) -> str:
    if config.attention_mode == "softmax_hops" and not final:
        return "softmax"
    return "sigmoid"


def hop(
    x_hat: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    r_prev: Tensor,
    params: ModelParams,
    config: PMNConfig,
    final: bool = False,
) -> HopState:
    """
    One combination-LSTM hop.

    Args:
        x_hat: Sequence embedding (constant input of every hop)
        h_prev: Previous updated hidden state
        c_prev: Previous cell state
        r_prev: Previous read vector
        params: Model parameters
        config: Model configuration
        final: Whether this is hop K (always sigmoid attention)

    Returns:
        HopState with h = h_hat + x_hat and r the attention-weighted prototype sum
    """
    bank = params.bank
    h_hat, c = lstm_cell(x_hat, concat([h_prev, r_prev]), c_prev, params.lstm_weights())
    h = add(h_hat, x_hat)
    query = h if config.match_updated_state else h_hat
    w = attention_weights(query, bank, config.epsilon, _hop_mode(config, final))
    r = weighted_sum_rows(w, bank.P)
    return HopState(h_hat=h_hat, h=h, c=c, r=r, w=w)


def _require_variant(config: PMNConfig, allowed: Tuple[str, ...], caller: str) -> None:
    if config.variant not in allowed:
        raise ContractError(f"{caller} runs variants {allowed}, config has '{config.variant}'")


def forward(
    x: Tensor,
    params: ModelParams,
    config: PMNConfig,
    training: bool,
    rng: Optional[np.random.Generator] = None,
) -> ForwardOutput:
    """Full PMN: encoder, K hops, sigmoid head on [h_K; r_K]."""
    _require_variant(config, ("pmn",), "forward")
    x_hat = encode_sequence(x, params, config, training, rng)
    zeros = np.zeros(config.embedding_dim, dtype=x_hat.dtype)
    h, c = Tensor(zeros), Tensor(zeros.copy())
    r = init_read_vector(params.bank)
    trace: List[HopState] = []
    for k in range(1, config.hops + 1):
        state = hop(x_hat, h, c, r, params, config, final=(k == config.hops))
        trace.append(state)
        h, c, r = state.h, state.c, state.r
    features = dropout_apply(concat([h, r]), config.dropout, training, rng)
    y_hat = sigmoid(affine(features, params["head.weight"], params["head.bias"]))
    return ForwardOutput(x_hat=x_hat, y_hat=y_hat, w_final=trace[-1].w, hops=trace)


def forward_no_lstm(
    x: Tensor,
    params: ModelParams,
    config: PMNConfig,
    training: bool,
    rng: Optional[np.random.Generator] = None,
) -> ForwardOutput:
    """Single sigmoid attention pass of the embedding; head on [x_hat; r]."""
    _require_variant(config, ("pmn_no_lstm",), "forward_no_lstm")
    x_hat = encode_sequence(x, params, config, training, rng)
    bank = params.bank
    w = attention_weights(x_hat, bank, config.epsilon, "sigmoid")
    r = weighted_sum_rows(w, bank.P)
    features = dropout_apply(concat([x_hat, r]), config.dropout, training, rng)
    y_hat = sigmoid(affine(features, params["head.weight"], params["head.bias"]))
    return ForwardOutput(x_hat=x_hat, y_hat=y_hat, w_final=w)


def forward_cnn(
    x: Tensor,
    params: ModelParams,
    config: PMNConfig,
    training: bool,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Baseline CNN: sigmoid head directly on the embedding."""
    return _cnn_output(x, params, config, training, rng).y_hat


def _cnn_output(
    x: Tensor,
    params: ModelParams,
    config: PMNConfig,
    training: bool,
    rng: Optional[np.random.Generator],
) -> ForwardOutput:
    _require_variant(config, ("cnn_single", "cnn_multi"), "forward_cnn")
    x_hat = encode_sequence(x, params, config, training, rng)
    y_hat = sigmoid(affine(x_hat, params["head.weight"], params["head.bias"]))
    return ForwardOutput(x_hat=x_hat, y_hat=y_hat)


def run_model(
    x: Tensor,
    params: ModelParams,
    config: PMNConfig,
    training: bool,
    rng: Optional[np.random.Generator] = None,
) -> ForwardOutput:
    """Dispatch to the forward pass of the configured variant."""
    if config.variant == "pmn":
        return forward(x, params, config, training, rng)
    if config.variant == "pmn_no_lstm":
        return forward_no_lstm(x, params, config, training, rng)
    return _cnn_output(x, params, config, training, rng)


def predict(x: np.ndarray, params: ModelParams, config: PMNConfig) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Evaluation-mode scores (and final attention weights when the variant has them)."""
    with no_grad():
        output = run_model(Tensor(x, dtype=config.dtype), params, config, training=False)
    w_final = output.w_final.data.copy() if output.w_final is not None else None
    return output.y_hat.data.copy(), w_final


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def classification_loss(y_hat: Tensor, y: np.ndarray) -> Tensor:
    """Positive binary cross entropy summed over labels."""
    return binary_cross_entropy(y_hat, y)


def prototype_matching_loss(w_final: Tensor, y: np.ndarray) -> Tensor:
    """Squared distance between the final attention weights and the labels."""
    target = Tensor(np.asarray(y, dtype=w_final.dtype))
    if target.shape != w_final.shape:
        raise DimensionError(f"prototype_matching_loss: labels {target.shape} vs weights {w_final.shape}")
    diff = sub(target, w_final)
    return sum_all(mul(diff, diff))


def total_loss(y_hat: Tensor, w_final: Optional[Tensor], y: np.ndarray, prototype_weight: float) -> Tensor:
    """Minimized objective: BCE + lambda * prototype matching loss."""
    if prototype_weight < 0:
        raise ContractError(f"prototype weight must be non-negative, got {prototype_weight}")
    bce = classification_loss(y_hat, y)
    if prototype_weight == 0 or w_final is None:
        return bce
    return add(bce, scale(prototype_matching_loss(w_final, y), prototype_weight))


def sample_loss(output: ForwardOutput, y: np.ndarray, config: PMNConfig) -> Tensor:
    return total_loss(output.y_hat, output.w_final, y, config.prototype_weight)
