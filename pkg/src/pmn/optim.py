"""Adam optimizer over named leaf tensors."""

import logging
from typing import Dict, Mapping

import numpy as np

from .errors import NonFiniteError
from .tensor import Tensor

logger = logging.getLogger(__name__)


class AdamState:
    """First/second moment buffers and step counter for Adam."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {learning_rate}")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t_step = 0
        self.m: Dict[str, np.ndarray] = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v: Dict[str, np.ndarray] = {name: np.zeros_like(p.data) for name, p in params.items()}


def global_grad_norm(params: Mapping[str, Tensor]) -> float:
    total = 0.0
    for param in params.values():
        total += float(np.sum(param.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_gradients(params: Mapping[str, Tensor], max_norm: float) -> float:
    """Rescale all gradients so their global L2 norm is at most ``max_norm``."""
    norm = global_grad_norm(params)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for param in params.values():
            param.grad *= param.grad.dtype.type(factor)
    return norm


def adam_step(params: Mapping[str, Tensor], state: AdamState) -> None:
    """
    Apply one bias-corrected Adam update in place using each parameter's ``grad``.

    Raises:
        NonFiniteError: If any gradient holds NaN/Inf; no parameter is touched.
    """
    for name, param in params.items():
        if not np.all(np.isfinite(param.grad)):
            raise NonFiniteError(
                f"non-finite gradient in '{name}', Adam step {state.t_step + 1} aborted",
                {"parameter": name, "step": state.t_step + 1},
            )

    state.t_step += 1
    correction1 = 1 - state.beta1 ** state.t_step
    correction2 = 1 - state.beta2 ** state.t_step
    for name, param in params.items():
        grad = param.grad
        dtype = param.data.dtype.type
        m = state.m[name]
        v = state.v[name]
        m *= dtype(state.beta1)
        m += dtype(1 - state.beta1) * grad
        v *= dtype(state.beta2)
        v += dtype(1 - state.beta2) * grad * grad
        m_hat = m / dtype(correction1)
        v_hat = v / dtype(correction2)
        param.data -= dtype(state.learning_rate) * m_hat / (np.sqrt(v_hat) + dtype(state.eps))
