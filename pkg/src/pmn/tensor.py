"""Minimal reverse-mode differentiable tensor engine.

Every operation here takes and returns :class:`Tensor` objects backed by numpy
arrays.  When a :class:`Tape` is active (``with Tape() as tape:``) and one of
the inputs requires a gradient, the operation appends a node holding its
backward rule; :func:`backward` replays the nodes in reverse order.

Only the operations the PMN model family needs are provided.  There is no
broadcasting: elementwise operations require identical shapes.
"""

import contextvars
import hashlib
import logging
from contextlib import contextmanager
from typing import Callable, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

COSINE_NORM_FLOOR = 1e-12
PREDICTION_CLAMP = 1e-7

PRECISIONS = {"f32": np.float32, "f64": np.float64}

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_ACTIVE_TAPE: contextvars.ContextVar = contextvars.ContextVar("pmn_active_tape", default=None)
_GRAD_ENABLED: contextvars.ContextVar = contextvars.ContextVar("pmn_grad_enabled", default=True)


def resolve_dtype(precision: str) -> type:
    """Map a precision name (``f32``/``f64``) to a numpy dtype."""
    try:
        return PRECISIONS[precision]
    except KeyError:
        raise ContractError(f"Unknown precision '{precision}', expected one of {sorted(PRECISIONS)}")


class Tensor:
    """Dense real array with optional gradient tracking.

    Leaves created with ``requires_grad=True`` own a persistent ``grad`` buffer
    of the same shape.  Results of recorded operations are marked
    ``requires_grad`` but keep ``grad=None``; their gradients only exist
    transiently during :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(
        self,
        data: Union[np.ndarray, Sequence, float],
        requires_grad: bool = False,
        dtype: Optional[type] = None,
        name: Optional[str] = None,
    ):
        if isinstance(data, (np.ndarray, np.generic)) and dtype is None and np.issubdtype(data.dtype, np.floating):
            array = np.asarray(data)
        else:
            array = np.asarray(data, dtype=dtype or np.float64)
        if dtype is not None and array.dtype != dtype:
            array = array.astype(dtype)
        self.data = array
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(array) if requires_grad else None
        self.name = name
        self._node: Optional["Node"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0)

    def detach(self) -> "Tensor":
        return detach(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        label = f"{self.name}, " if self.name else ""
        return f"Tensor({label}shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class Node:
    """One recorded operation on a tape."""

    __slots__ = ("op", "inputs", "output", "backward_fn", "index")

    def __init__(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward_fn: BackwardFn, index: int):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.index = index


class Tape:
    """Ordered record of operations for one forward pass.

    Nodes are appended as operations execute, so the list is always in
    topological order.  The tape also collects the discrete decisions taken
    at non-smooth points (ReLU signs, max-pool winners, clamps) so callers can
    detect when a perturbation crosses a kink.
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self._kinks: List[bytes] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward_fn: BackwardFn) -> Node:
        node = Node(op, inputs, output, backward_fn, len(self.nodes))
        self.nodes.append(node)
        output._node = node
        return node

    def note_kink(self, op: str, decision: np.ndarray) -> None:
        self._kinks.append(op.encode() + np.ascontiguousarray(decision).tobytes())

    def kink_signature(self) -> str:
        """Digest of every kink decision taken while this tape was active."""
        digest = hashlib.md5()
        for entry in self._kinks:
            digest.update(entry)
        return digest.hexdigest()


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording; operations still compute values."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def _result(op: str, inputs: Tuple[Tensor, ...], data: np.ndarray, backward_fn: BackwardFn) -> Tensor:
    tape = _ACTIVE_TAPE.get()
    out = Tensor(data)
    if tape is not None and _GRAD_ENABLED.get() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, backward_fn)
    return out


def _note_kink(op: str, decision: np.ndarray) -> None:
    tape = _ACTIVE_TAPE.get()
    if tape is not None:
        tape.note_kink(op, decision)


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _require_vector(op: str, t: Tensor, what: str) -> None:
    if t.data.ndim != 1:
        raise DimensionError(f"{op}: {what} must be 1-D, got shape {t.shape}")


# ---------------------------------------------------------------------------
# Elementwise and structural operations
# ---------------------------------------------------------------------------

def detach(x: Tensor) -> Tensor:
    return Tensor(x.data)


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return _result("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    return _result("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)
    a_data, b_data = a.data, b.data
    return _result("mul", (a, b), a_data * b_data, lambda g: (g * b_data, g * a_data))


def scale(a: Tensor, factor: float) -> Tensor:
    factor = a.data.dtype.type(factor)
    return _result("scale", (a,), a.data * factor, lambda g: (g * factor,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result("sum_all", (a,), np.sum(a.data), lambda g: (np.full(shape, g, dtype=a.data.dtype),))


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    mask = x.data > 0
    _note_kink("relu", mask)
    out = np.where(mask, x.data, 0).astype(x.data.dtype, copy=False)
    return _result("relu", (x,), out, lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return _result("sigmoid", (x,), s, lambda g: (g * s * (1 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _result("tanh", (x,), t, lambda g: (g * (1 - t * t),))


def softmax(x: Tensor) -> Tensor:
    _require_vector("softmax", x, "input")
    shifted = np.exp(x.data - np.max(x.data))
    s = shifted / np.sum(shifted)

    def backward_fn(g: np.ndarray):
        return (s * (g - np.dot(g, s)),)

    return _result("softmax", (x,), s, backward_fn)


def concat(parts: Sequence[Tensor]) -> Tensor:
    for part in parts:
        _require_vector("concat", part, "every part")
    sizes = [p.size for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward_fn(g: np.ndarray):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result("concat", tuple(parts), np.concatenate([p.data for p in parts]), backward_fn)


def slice_vector(x: Tensor, start: int, stop: int) -> Tensor:
    _require_vector("slice", x, "input")
    if not 0 <= start < stop <= x.size:
        raise DimensionError(f"slice: [{start}, {stop}) outside a vector of length {x.size}")

    def backward_fn(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return _result("slice", (x,), x.data[start:stop].copy(), backward_fn)


def affine(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Compute ``W @ x + b`` for a vector input."""
    _require_vector("affine", x, "input")
    if W.data.ndim != 2 or W.shape[1] != x.size:
        raise DimensionError(f"affine: weight shape {W.shape} does not accept input of length {x.size}")
    if b is not None and b.shape != (W.shape[0],):
        raise DimensionError(f"affine: bias shape {b.shape} does not match {W.shape[0]} outputs")
    x_data, W_data = x.data, W.data
    out = W_data @ x_data
    if b is not None:
        out = out + b.data

    def backward_fn(g: np.ndarray):
        grads = (W_data.T @ g, np.outer(g, x_data))
        return grads + (g,) if b is not None else grads

    inputs = (x, W, b) if b is not None else (x, W)
    return _result("affine", inputs, out, backward_fn)


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Same-padded, stride-1 cross-correlation of a ``C_in x T`` input."""
    if x.data.ndim != 2:
        raise DimensionError(f"conv1d: input must be C_in x T, got shape {x.shape}")
    if kernels.data.ndim != 3:
        raise DimensionError(f"conv1d: kernels must be C_out x C_in x w, got shape {kernels.shape}")
    c_out, c_in, width = kernels.shape
    channels, length = x.shape
    if c_in != channels:
        raise DimensionError(f"conv1d: kernels expect {c_in} input channels, input has {channels}")
    if width % 2 == 0:
        raise DimensionError(f"conv1d: kernel width must be odd, got {width}")
    if length < width:
        raise DimensionError(f"conv1d: input length {length} shorter than kernel width {width}")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv1d: bias shape {bias.shape} does not match {c_out} output channels")

    pad = (width - 1) // 2
    padded = np.pad(x.data, ((0, 0), (pad, pad)))
    # cols[c * w + o, t] = padded[c, t + o]
    cols = sliding_window_view(padded, width, axis=1).transpose(0, 2, 1).reshape(c_in * width, length)
    flat_kernels = kernels.data.reshape(c_out, c_in * width)
    out = flat_kernels @ cols + bias.data[:, None]

    def backward_fn(g: np.ndarray):
        grad_kernels = (g @ cols.T).reshape(kernels.shape)
        grad_bias = g.sum(axis=1)
        grad_cols = (flat_kernels.T @ g).reshape(c_in, width, length)
        grad_padded = np.zeros((c_in, length + 2 * pad), dtype=g.dtype)
        for offset in range(width):
            grad_padded[:, offset:offset + length] += grad_cols[:, offset, :]
        return grad_padded[:, pad:pad + length], grad_kernels, grad_bias

    return _result("conv1d", (x, kernels, bias), out, backward_fn)


def global_maxpool(x: Tensor) -> Tensor:
    """Per-channel maximum over the length axis; ties route to the first index."""
    if x.data.ndim != 2:
        raise DimensionError(f"global_maxpool: input must be C x T, got shape {x.shape}")
    if x.shape[1] == 0:
        raise DimensionError("global_maxpool: empty length axis")
    winners = np.argmax(x.data, axis=1)
    _note_kink("maxpool", winners)
    rows = np.arange(x.shape[0])

    def backward_fn(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[rows, winners] = g
        return (full,)

    return _result("global_maxpool", (x,), x.data[rows, winners], backward_fn)


def embedding_lookup(table: Tensor, index: int) -> Tensor:
    """Row ``index`` of a lookup table; the gradient lands on that row only."""
    if table.data.ndim != 2:
        raise DimensionError(f"embedding_lookup: table must be 2-D, got shape {table.shape}")
    if not isinstance(index, (int, np.integer)) or not 0 <= index < table.shape[0]:
        raise IndexError(f"embedding_lookup: index {index} outside [0, {table.shape[0]})")

    def backward_fn(g: np.ndarray):
        full = np.zeros_like(table.data)
        full[index] = g
        return (full,)

    return _result("embedding_lookup", (table,), table.data[index].copy(), backward_fn)


def mean_rows(table: Tensor) -> Tensor:
    """Arithmetic mean of the rows of an ``n x d`` table."""
    if table.data.ndim != 2 or table.shape[0] == 0:
        raise DimensionError(f"mean_rows: need a non-empty 2-D table, got shape {table.shape}")
    rows = table.shape[0]
    total = table.data[0].copy()
    for i in range(1, rows):
        total += table.data[i]
    out = total / table.data.dtype.type(rows)

    def backward_fn(g: np.ndarray):
        return (np.tile(g / rows, (rows, 1)).astype(table.data.dtype, copy=False),)

    return _result("mean_rows", (table,), out, backward_fn)


def weighted_sum_rows(weights: Tensor, table: Tensor) -> Tensor:
    """Compute ``sum_i weights[i] * table[i]``."""
    _require_vector("weighted_sum_rows", weights, "weights")
    if table.data.ndim != 2 or table.shape[0] != weights.size:
        raise DimensionError(
            f"weighted_sum_rows: {weights.size} weights do not match table of shape {table.shape}"
        )
    w_data, t_data = weights.data, table.data

    def backward_fn(g: np.ndarray):
        return t_data @ g, np.outer(w_data, g)

    return _result("weighted_sum_rows", (weights, table), t_data.T @ w_data, backward_fn)


def _cosine_against_rows(op: str, u: Tensor, rows: Tensor) -> Tuple[np.ndarray, BackwardFn]:
    u_data, m_data = u.data, rows.data
    u_norm_raw = np.linalg.norm(u_data)
    m_norm_raw = np.linalg.norm(m_data, axis=1)
    u_free = u_norm_raw >= COSINE_NORM_FLOOR
    m_free = m_norm_raw >= COSINE_NORM_FLOOR
    _note_kink(op, np.append(m_free, u_free))
    u_norm = max(u_norm_raw, COSINE_NORM_FLOOR)
    m_norm = np.maximum(m_norm_raw, COSINE_NORM_FLOOR)
    raw = (m_data @ u_data) / (u_norm * m_norm)
    cos = np.clip(raw, -1.0, 1.0).astype(u_data.dtype, copy=False)

    def backward_fn(g: np.ndarray):
        scaled = g / (u_norm * m_norm)
        grad_u = m_data.T @ scaled
        if u_free:
            grad_u = grad_u - np.dot(g, raw) * u_data / (u_norm * u_norm)
        grad_rows = np.outer(scaled, u_data)
        grad_rows -= ((g * raw * m_free) / (m_norm * m_norm))[:, None] * m_data
        return grad_u, grad_rows

    return cos, backward_fn


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """Cosine of two vectors with norms floored at 1e-12; a zero vector scores 0."""
    _require_vector("cosine_similarity", u, "u")
    _require_same_shape("cosine_similarity", u, v)
    rows = Tensor(v.data[None, :])
    cos, backward_rows = _cosine_against_rows("cosine", u, rows)

    def backward_fn(g: np.ndarray):
        grad_u, grad_rows = backward_rows(np.reshape(g, (1,)))
        return grad_u, grad_rows[0]

    return _result("cosine_similarity", (u, v), cos[0], backward_fn)


def cosine_rows(u: Tensor, table: Tensor) -> Tensor:
    """Cosine of ``u`` against every row of ``table``."""
    _require_vector("cosine_rows", u, "u")
    if table.data.ndim != 2 or table.shape[1] != u.size:
        raise DimensionError(f"cosine_rows: table shape {table.shape} does not match vector of length {u.size}")
    cos, backward_fn = _cosine_against_rows("cosine", u, table)
    return _result("cosine_rows", (u, table), cos, backward_fn)


def dropout_apply(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity in evaluation mode or at rate 0."""
    if not 0 <= rate < 1:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype)
    keep *= x.data.dtype.type(1.0 / (1.0 - rate))
    return _result("dropout", (x,), x.data * keep, lambda g: (g * keep,))


def binary_cross_entropy(predictions: Tensor, targets: np.ndarray) -> Tensor:
    """Positive BCE summed over labels, predictions clamped to [1e-7, 1 - 1e-7]."""
    _require_vector("binary_cross_entropy", predictions, "predictions")
    y = np.asarray(targets, dtype=predictions.data.dtype)
    if y.shape != predictions.shape:
        raise DimensionError(f"binary_cross_entropy: targets {y.shape} vs predictions {predictions.shape}")
    dtype = predictions.data.dtype.type
    low, high = dtype(PREDICTION_CLAMP), dtype(1 - PREDICTION_CLAMP)
    inside = (predictions.data > low) & (predictions.data < high)
    _note_kink("clamp", inside)
    clamped = np.clip(predictions.data, low, high)
    loss = -np.sum(y * np.log(clamped) + (1 - y) * np.log(1 - clamped))

    def backward_fn(g: np.ndarray):
        local = -(y / clamped - (1 - y) / (1 - clamped))
        return (g * local * inside,)

    return _result("binary_cross_entropy", (predictions,), np.asarray(loss, dtype=predictions.data.dtype), backward_fn)


# ---------------------------------------------------------------------------
# Composite cell
# ---------------------------------------------------------------------------

class LSTMWeights(NamedTuple):
    """Gate weights with rows laid out as [input, forget, cell, output]."""

    W: Tensor  # 4d x d, applied to x_in
    U: Tensor  # 4d x 2d, applied to h_in
    bias: Tensor  # 4d


def lstm_cell(x_in: Tensor, h_in: Tensor, c_in: Tensor, weights: LSTMWeights) -> Tuple[Tensor, Tensor]:
    """One standard LSTM step.

    Returns ``(h_out, c_out)`` with ``c_out = f*c_in + i*g`` and
    ``h_out = o*tanh(c_out)``.
    """
    d = x_in.size
    if c_in.shape != (d,) or h_in.shape != (2 * d,):
        raise DimensionError(
            f"lstm_cell: expected x_in ({d},), h_in ({2 * d},), c_in ({d},); "
            f"got {x_in.shape}, {h_in.shape}, {c_in.shape}"
        )
    if weights.W.shape != (4 * d, d) or weights.U.shape != (4 * d, 2 * d) or weights.bias.shape != (4 * d,):
        raise DimensionError(
            f"lstm_cell: weights {weights.W.shape}, {weights.U.shape}, {weights.bias.shape} do not fit d={d}"
        )
    z = add(affine(x_in, weights.W, weights.bias), affine(h_in, weights.U))
    i = sigmoid(slice_vector(z, 0, d))
    f = sigmoid(slice_vector(z, d, 2 * d))
    g = tanh(slice_vector(z, 2 * d, 3 * d))
    o = sigmoid(slice_vector(z, 3 * d, 4 * d))
    c_out = add(mul(f, c_in), mul(i, g))
    h_out = mul(o, tanh(c_out))
    return h_out, c_out


def mean_of(values: Sequence[Tensor]) -> Tensor:
    """Mean of scalar tensors, summed left to right."""
    if not values:
        raise ContractError("mean_of needs at least one value")
    total = values[0]
    for value in values[1:]:
        total = add(total, value)
    return scale(total, 1.0 / len(values))


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Accumulate ``d loss / d leaf`` into every reachable leaf's ``grad``.

    Gradients add onto whatever the leaves already hold, so calling this
    twice without zeroing doubles them.
    """
    tape = tape if tape is not None else _ACTIVE_TAPE.get()
    if tape is None:
        raise ContractError("backward needs the tape the loss was recorded on")
    if loss.data.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss._node
    if node is None or node.index >= len(tape.nodes) or tape.nodes[node.index] is not node:
        raise ContractError("loss was not produced on this tape")

    pending = {id(loss): np.ones_like(loss.data)}
    for current in reversed(tape.nodes[: node.index + 1]):
        grad_out = pending.pop(id(current.output), None)
        if grad_out is None:
            continue
        for tensor, grad in zip(current.inputs, current.backward_fn(grad_out)):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.is_leaf:
                tensor.grad += grad
            else:
                key = id(tensor)
                pending[key] = pending[key] + grad if key in pending else grad
