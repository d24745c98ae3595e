"""Finite-difference verification of analytic gradients."""

import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .config import collect_settings, format_settings, parse_key_value_file, parse_overrides, split_list
from .errors import ConfigError, ContractError, GradCheckError
from .tensor import Tape, Tensor, backward, no_grad

logger = logging.getLogger(__name__)

LossFn = Callable[[], Tuple[Tensor, Tape]]

RELATIVE_ERROR_FLOOR = 1e-6


class ParamCheck(BaseModel):
    """Outcome of probing one parameter tensor."""

    name: str
    checked: int = 0
    skipped_at_kinks: int = 0
    max_relative_error: float = 0.0
    worst_index: Optional[int] = None


class GradCheckReport(BaseModel):
    """Maximum relative error per parameter plus the overall verdict."""

    step: float
    tolerance: float
    params: Dict[str, ParamCheck] = Field(default_factory=dict)

    @property
    def max_relative_error(self) -> float:
        return max((p.max_relative_error for p in self.params.values()), default=0.0)

    @property
    def elements_checked(self) -> int:
        return sum(p.checked for p in self.params.values())

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance

    def summary(self) -> str:
        lines = [
            f"{name}: checked={p.checked} skipped={p.skipped_at_kinks} max_rel_err={p.max_relative_error:.3e}"
            for name, p in self.params.items()
        ]
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: max relative error {self.max_relative_error:.3e} (tolerance {self.tolerance:g})")
        return "\n".join(lines)


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), RELATIVE_ERROR_FLOOR)


def grad_check(
    loss_fn: LossFn,
    params: Dict[str, Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    max_elements: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckReport:
    """
    Compare analytic gradients with central differences.

    Args:
        loss_fn: Builds a fresh tape, runs the forward pass and returns ``(loss, tape)``
        params: Named 64-bit leaf tensors to probe
        step: Absolute finite-difference step ``h``
        tolerance: Pass threshold on the maximum relative error
        max_elements: Elements probed per parameter (all when None)
        rng: Generator used to sample elements when ``max_elements`` is set

    Returns:
        GradCheckReport with per-parameter maximum relative errors

    Raises:
        GradCheckError: If the loss is non-finite at any probe point
    """
    for name, param in params.items():
        if param.dtype != np.float64:
            raise ContractError(f"grad_check needs 64-bit parameters, '{name}' is {param.dtype}")
        param.zero_grad()

    loss, tape = loss_fn()
    if not np.isfinite(loss.data):
        raise GradCheckError("loss is non-finite at the unperturbed point")
    backward(loss, tape)
    baseline = tape.kink_signature()
    analytic = {name: param.grad.reshape(-1).copy() for name, param in params.items()}
    rng = rng or np.random.default_rng(0)

    def probe(name: str, flat: np.ndarray, index: int) -> Tuple[float, bool]:
        original = flat[index]
        values = []
        smooth = True
        for sign in (1.0, -1.0):
            flat[index] = original + sign * step
            with no_grad():
                value, probe_tape = loss_fn()
            if not np.isfinite(value.data):
                flat[index] = original
                raise GradCheckError(f"loss is non-finite when probing {name}[{index}] at {sign * step:+g}")
            smooth = smooth and probe_tape.kink_signature() == baseline
            values.append(float(value.data))
        flat[index] = original
        return (values[0] - values[1]) / (2 * step), smooth

    report = GradCheckReport(step=step, tolerance=tolerance)
    for name, param in params.items():
        flat = param.data.reshape(-1)
        check = ParamCheck(name=name)
        order = np.arange(flat.size) if max_elements is None else rng.permutation(flat.size)
        quota = flat.size if max_elements is None else min(max_elements, flat.size)
        for index in order:
            if check.checked >= quota:
                break
            numeric, smooth = probe(name, flat, int(index))
            if not smooth:
                check.skipped_at_kinks += 1
                continue
            error = relative_error(float(analytic[name][index]), numeric)
            check.checked += 1
            if check.worst_index is None or error > check.max_relative_error:
                check.max_relative_error = error
                check.worst_index = int(index)
        report.params[name] = check
        logger.debug(f"grad_check {name}: {check.checked} elements, max rel err {check.max_relative_error:.3e}")

    return report


def check_model_gradients(
    config,
    seed: int = 0,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    max_elements: Optional[int] = 30,
) -> GradCheckReport:
    """
    Grad-check the full training loss of a freshly initialized model.

    The model runs in evaluation mode (no dropout) at 64-bit on one random
    one-hot sequence with random labels (at least one positive).

    Args:
        config: PMNConfig of the model under test (precision is forced to f64)
        seed: Seed for parameters, input, labels and element sampling
        step: Finite-difference step
        tolerance: Pass threshold on the maximum relative error
        max_elements: Elements probed per parameter tensor
    """
    from .model import ModelParams, run_model, sample_loss

    config = config.with_precision("f64")
    rng = np.random.default_rng(seed)
    params = ModelParams.initialize(config, rng)
    x = np.zeros((4, config.seq_length))
    x[rng.integers(4, size=config.seq_length), np.arange(config.seq_length)] = 1.0
    y = (rng.random(config.output_size) < 0.5).astype(np.float64)
    y[rng.integers(config.output_size)] = 1.0

    def loss_fn() -> Tuple[Tensor, Tape]:
        with Tape() as tape:
            output = run_model(Tensor(x), params, config, training=False)
            loss = sample_loss(output, y, config)
        return loss, tape

    return grad_check(loss_fn, params.tensors, step, tolerance, max_elements, rng)


class GradCheckSuite(BaseModel):
    """Tiny-model settings for the full finite-difference suite."""

    model_config = ConfigDict(extra="forbid")

    num_labels: int = Field(default=4, ge=1)
    seq_length: int = Field(default=20, ge=1)
    embedding_dim: int = Field(default=8, ge=1)
    hops: int = Field(default=2, ge=1)
    epsilon: float = Field(default=20.0, gt=0)
    prototype_weight: float = Field(default=1.0, ge=0)
    conv_channels: Tuple[int, ...] = (8, 8, 8)
    conv_widths: Tuple[int, ...] = (5, 3, 3)
    variants: Tuple[str, ...] = ("cnn_single", "cnn_multi", "pmn_no_lstm", "pmn")
    attention_modes: Tuple[str, ...] = ("sigmoid", "softmax_hops")
    seeds: int = Field(default=5, ge=1)
    first_seed: int = Field(default=0, ge=0)
    step: float = Field(default=1e-5, gt=0)
    tolerance: float = Field(default=1e-4, gt=0)
    max_elements: int = Field(default=30, ge=1)

    @classmethod
    def from_sources(cls, path=None, overrides=()) -> "GradCheckSuite":
        entries = []
        if path is not None:
            entries.extend(parse_key_value_file(path))
        entries.extend(parse_overrides(overrides))
        settings = collect_settings(entries)
        for key in ("conv_channels", "conv_widths", "variants", "attention_modes"):
            if key in settings:
                settings[key] = split_list(settings[key])
        try:
            return cls.model_validate(settings)
        except ValidationError as e:
            raise ConfigError(f"invalid grad-check configuration: {e}")

    def echo(self) -> str:
        return format_settings(self.model_dump())

    def model_configs(self):
        """Every (variant, attention mode) PMNConfig of the suite."""
        from .model import PMNConfig

        for variant in self.variants:
            for mode in self.attention_modes:
                try:
                    yield PMNConfig(
                        num_labels=self.num_labels,
                        seq_length=self.seq_length,
                        embedding_dim=self.embedding_dim,
                        hops=self.hops,
                        epsilon=self.epsilon,
                        prototype_weight=self.prototype_weight,
                        attention_mode=mode,
                        variant=variant,
                        conv_channels=self.conv_channels,
                        conv_widths=self.conv_widths,
                        dropout=0.0,
                        precision="f64",
                    )
                except ValidationError as e:
                    raise ConfigError(f"invalid grad-check model ({variant}, {mode}): {e}")


class SuiteResult(BaseModel):
    variant: str
    attention_mode: str
    seed: int
    report: GradCheckReport


def run_suite(suite: GradCheckSuite) -> List[SuiteResult]:
    results: List[SuiteResult] = []
    for config in suite.model_configs():
        for seed in range(suite.first_seed, suite.first_seed + suite.seeds):
            report = check_model_gradients(config, seed, suite.step, suite.tolerance, suite.max_elements)
            results.append(
                SuiteResult(variant=config.variant, attention_mode=config.attention_mode, seed=seed, report=report)
            )
            logger.info(
                f"grad_check {config.variant}/{config.attention_mode} seed {seed}: "
                f"{report.elements_checked} elements, max rel err {report.max_relative_error:.3e} "
                f"{'PASS' if report.passed else 'FAIL'}"
            )
    return results
