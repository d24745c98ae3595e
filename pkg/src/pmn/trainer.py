"""Training loop, per-epoch evaluation, best-epoch selection and epoch logs."""

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .checkpoint import Checkpoint, CheckpointMeta, ensure_compatible, load_checkpoint, save_checkpoint
from .data import DatasetSplit, SequenceRecord, batch_iter, encode_records
from .errors import ConfigError, EvaluationError, NonFiniteError
from .metrics import DEFAULT_FDR, label_metrics, prototype_gap
from .model import ModelParams, PMNConfig, run_model, sample_loss
from .optim import AdamState, adam_step, clip_gradients
from .tensor import Tape, Tensor, backward, no_grad, scale

logger = logging.getLogger(__name__)

EPOCH_LOG_COLUMNS = ("epoch", "split", "loss", "mean_auroc", "mean_aupr", "mean_recall_fdr50", "seconds")
BEST_CHECKPOINT = "best.ckpt"
LAST_CHECKPOINT = "last.ckpt"
EVAL_SPLITS = ("valid", "test")


class TrainConfig(BaseModel):
    """Optimization settings plus the model they train."""

    model_config = ConfigDict(extra="forbid")

    model: PMNConfig
    batch_size: int = Field(default=512, ge=1)
    epochs: int = Field(default=40, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    seed: int = 0
    grad_clip: Optional[float] = Field(default=None, gt=0)
    checkpoint_dir: str = "checkpoints"
    record_timing: bool = False
    threads: int = Field(default=1, ge=1)
    label_index: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _check_label_index(self) -> "TrainConfig":
        if self.label_index is not None:
            if self.model.variant != "cnn_single":
                raise ValueError("label_index only applies to the cnn_single variant")
            if self.label_index >= self.model.num_labels:
                raise ValueError(f"label_index {self.label_index} outside [0, {self.model.num_labels})")
        return self


class EpochLog(BaseModel):
    epoch: int
    split: str
    loss: float
    mean_auroc: float
    mean_aupr: float
    mean_recall_fdr50: float
    seconds: float = 0.0

    def row(self) -> List[str]:
        return [
            str(self.epoch),
            self.split,
            _fmt(self.loss),
            _fmt(self.mean_auroc),
            _fmt(self.mean_aupr),
            _fmt(self.mean_recall_fdr50),
            f"{self.seconds:.3f}",
        ]


def _fmt(value: float) -> str:
    return "nan" if math.isnan(value) else f"{value:.8f}"


@dataclass
class Evaluation:
    """Scores, targets and metrics of one model over one record set."""

    scores: np.ndarray
    targets: np.ndarray
    loss: float
    per_label: Dict[str, np.ndarray]
    weights: Optional[np.ndarray] = None

    @property
    def means(self) -> Dict[str, float]:
        return {name: _mean_defined(values) for name, values in self.per_label.items()}

    @property
    def prototype_gap(self) -> float:
        if self.weights is None:
            return float("nan")
        return prototype_gap(self.weights, self.targets)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    logs: List[EpochLog]
    best_epoch: int
    prototype_gaps: Dict[int, float] = field(default_factory=dict)
    checkpoint_path: Optional[Path] = None


def _mean_defined(values: np.ndarray) -> float:
    defined = np.asarray(values, dtype=np.float64)
    defined = defined[~np.isnan(defined)]
    return float(defined.mean()) if defined.size else float("nan")


def _targets_for(config: PMNConfig, Y: np.ndarray, label_index: Optional[int]) -> np.ndarray:
    if config.variant == "cnn_single":
        return Y[:, label_index:label_index + 1]
    return Y


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _evaluate_batch(args) -> Tuple[np.ndarray, Optional[np.ndarray], np.ndarray]:
    X, Y, params, config = args
    scores, weights, losses = [], [], []
    with no_grad():
        for x, y in zip(X, Y):
            output = run_model(Tensor(x, dtype=config.dtype), params, config, training=False)
            losses.append(float(sample_loss(output, y, config).data))
            scores.append(output.y_hat.data.copy())
            if output.w_final is not None:
                weights.append(output.w_final.data.copy())
    return np.stack(scores), (np.stack(weights) if weights else None), np.array(losses)


def score_records(
    params: ModelParams,
    config: PMNConfig,
    records: Sequence[SequenceRecord],
    label_index: Optional[int] = None,
    batch_size: int = 512,
    threads: int = 1,
) -> Tuple[np.ndarray, Optional[np.ndarray], np.ndarray, float]:
    """
    Run the model in evaluation mode over records in their given order.

    Returns:
        (scores, final attention weights or None, targets, mean loss)
    """
    if not records:
        raise EvaluationError("cannot evaluate an empty record set")
    jobs = []
    for offset in range(0, len(records), batch_size):
        X, Y = encode_records(records[offset:offset + batch_size], config.dtype)
        jobs.append((X, _targets_for(config, Y, label_index), params, config))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_evaluate_batch, jobs))
    else:
        parts = [_evaluate_batch(job) for job in jobs]
    scores = np.concatenate([p[0] for p in parts])
    weights = np.concatenate([p[1] for p in parts]) if parts[0][1] is not None else None
    targets = np.concatenate([job[1] for job in jobs])
    losses = np.concatenate([p[2] for p in parts])
    return scores, weights, targets, float(np.mean(losses))


def evaluate_params(
    params: ModelParams,
    config: PMNConfig,
    records: Sequence[SequenceRecord],
    label_index: Optional[int] = None,
    batch_size: int = 512,
    threads: int = 1,
) -> Evaluation:
    scores, weights, targets, loss = score_records(params, config, records, label_index, batch_size, threads)
    per_label = label_metrics(scores, targets, DEFAULT_FDR, threads)
    return Evaluation(scores=scores, targets=targets, loss=loss, per_label=per_label, weights=weights)


def evaluate_model(
    checkpoint: Checkpoint,
    records: Sequence[SequenceRecord],
    batch_size: int = 512,
    threads: int = 1,
) -> Evaluation:
    """
    Evaluate a checkpoint on records (no dropout, parameters untouched).

    Raises:
        CheckpointConfigError: If the checkpoint does not fit the records' label count or length
    """
    if not records:
        raise EvaluationError("cannot evaluate an empty record set")
    config = checkpoint.config
    ensure_compatible(config, num_labels=records[0].num_labels, seq_length=records[0].length)
    return evaluate_params(checkpoint.params, config, records, checkpoint.meta.label_index, batch_size, threads)


def evaluate_single_label_models(
    checkpoints: Sequence[Checkpoint],
    records: Sequence[SequenceRecord],
    batch_size: int = 512,
    threads: int = 1,
) -> Evaluation:
    """Assemble one multi-label evaluation from per-label cnn_single checkpoints (ordered by label)."""
    if not records:
        raise EvaluationError("cannot evaluate an empty record set")
    num_labels = records[0].num_labels
    if len(checkpoints) != num_labels:
        raise ConfigError(f"{len(checkpoints)} single-label checkpoints for {num_labels} labels")
    columns, targets, losses = [], [], []
    for label, checkpoint in enumerate(checkpoints):
        if checkpoint.config.variant != "cnn_single" or checkpoint.meta.label_index != label:
            raise ConfigError(f"checkpoint {label} is not a cnn_single model for label {label}")
        ensure_compatible(checkpoint.config, num_labels=num_labels, seq_length=records[0].length)
        scores, _, column_targets, loss = score_records(
            checkpoint.params, checkpoint.config, records, label, batch_size, threads
        )
        columns.append(scores)
        targets.append(column_targets)
        losses.append(loss)
    scores = np.concatenate(columns, axis=1)
    target_matrix = np.concatenate(targets, axis=1)
    per_label = label_metrics(scores, target_matrix, DEFAULT_FDR, threads)
    return Evaluation(scores=scores, targets=target_matrix, loss=float(np.sum(losses)), per_label=per_label)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def select_best_epoch(logs: Sequence[EpochLog], split: str = "valid", metric: str = "mean_auroc") -> int:
    """Epoch with the highest metric on ``split``; ties go to the earliest epoch, NaN never wins."""
    best_epoch, best_value = None, -math.inf
    rows = [log for log in logs if log.split == split]
    if not rows:
        raise EvaluationError(f"no '{split}' rows to select an epoch from")
    for log in sorted(rows, key=lambda row: row.epoch):
        value = getattr(log, metric)
        if best_epoch is None or (not math.isnan(value) and value > best_value):
            best_epoch = log.epoch
            best_value = value if not math.isnan(value) else -math.inf
    return best_epoch


def write_epoch_log(path: Union[str, Path], logs: Sequence[EpochLog]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(EPOCH_LOG_COLUMNS)
        for log in logs:
            writer.writerow(log.row())
    return path


def read_epoch_log(path: Union[str, Path]) -> List[EpochLog]:
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        return [EpochLog.model_validate(row) for row in csv.DictReader(handle)]


def _epoch_row(epoch: int, split: str, loss: float, per_label: Dict[str, np.ndarray], seconds: float) -> EpochLog:
    return EpochLog(
        epoch=epoch,
        split=split,
        loss=loss,
        mean_auroc=_mean_defined(per_label["auroc"]),
        mean_aupr=_mean_defined(per_label["aupr"]),
        mean_recall_fdr50=_mean_defined(per_label["recall_at_fdr"]),
        seconds=seconds,
    )


def _train_epoch(
    params: ModelParams,
    state: AdamState,
    split: DatasetSplit,
    cfg: TrainConfig,
    epoch: int,
    dropout_rng: np.random.Generator,
) -> Tuple[float, np.ndarray, np.ndarray]:
    """One pass over the training split; returns (mean loss, training scores, targets)."""
    config = cfg.model
    total, count = 0.0, 0
    scores, targets = [], []
    for batch_index, (X, Y) in enumerate(batch_iter(split.train, cfg.batch_size, cfg.seed, epoch, config.dtype)):
        Y = _targets_for(config, Y, cfg.label_index)
        params.zero_grad()
        batch_size = len(X)
        batch_loss = 0.0
        for sample, (x, y) in enumerate(zip(X, Y)):
            with Tape() as tape:
                output = run_model(Tensor(x, dtype=config.dtype), params, config, True, dropout_rng)
                loss = sample_loss(output, y, config)
                scaled = scale(loss, 1.0 / batch_size)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteError(
                    f"non-finite loss at epoch {epoch}, batch {batch_index}, sample {sample}",
                    {"epoch": epoch, "batch": batch_index, "sample": sample, "loss": value},
                )
            backward(scaled, tape)
            batch_loss += value
            scores.append(output.y_hat.data.copy())
            targets.append(y)
        if cfg.grad_clip is not None:
            clip_gradients(params.tensors, cfg.grad_clip)
        try:
            adam_step(params.tensors, state)
        except NonFiniteError as e:
            e.diagnostics.update({"epoch": epoch, "batch": batch_index})
            raise
        logger.debug(f"epoch {epoch} batch {batch_index}: loss {batch_loss / batch_size:.6f}")
        total += batch_loss
        count += batch_size
    return total / count, np.stack(scores), np.stack(targets)


def train_model(split: DatasetSplit, cfg: TrainConfig) -> TrainResult:
    """
    Train with Adam, evaluating valid and test after every epoch.

    ``best.ckpt`` is rewritten whenever validation mean auROC improves and
    ``last.ckpt`` after every epoch.

    Args:
        split: Dataset with a non-empty training part
        cfg: Training configuration

    Returns:
        TrainResult holding the best checkpoint (as written to disk), every
        EpochLog row and per-epoch validation prototype gaps

    Raises:
        ConfigError: Empty training split or a config that does not fit the data
        NonFiniteError: Loss or gradient stops being finite
    """
    config = cfg.model
    if not split.train:
        raise ConfigError("training split is empty")
    if config.variant == "cnn_single" and cfg.label_index is None:
        raise ConfigError("cnn_single training needs a label_index (use train_single_label_models)")
    ensure_compatible(config, num_labels=split.num_labels, seq_length=split.seq_length)

    init_seed, dropout_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    params = ModelParams.initialize(config, np.random.default_rng(init_seed))
    dropout_rng = np.random.default_rng(dropout_seed)
    state = AdamState(params.tensors, learning_rate=cfg.learning_rate)
    directory = Path(cfg.checkpoint_dir)
    best_path = directory / BEST_CHECKPOINT
    logger.info(
        f"Training {config.variant} ({params.parameter_count()} parameters) on {len(split.train)} records "
        f"for {cfg.epochs} epochs"
    )

    logs: List[EpochLog] = []
    gaps: Dict[int, float] = {}
    best_value = -math.inf
    best_epoch: Optional[int] = None
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        train_loss, train_scores, train_targets = _train_epoch(params, state, split, cfg, epoch, dropout_rng)
        train_metrics = label_metrics(train_scores, train_targets, DEFAULT_FDR, cfg.threads)
        elapsed = time.perf_counter() - started if cfg.record_timing else 0.0
        logs.append(_epoch_row(epoch, "train", train_loss, train_metrics, elapsed))

        evaluations: Dict[str, Evaluation] = {}
        for name in EVAL_SPLITS:
            records = split.part(name)
            if not records:
                continue
            started = time.perf_counter()
            evaluations[name] = evaluate_params(
                params, config, records, cfg.label_index, cfg.batch_size, cfg.threads
            )
            elapsed = time.perf_counter() - started if cfg.record_timing else 0.0
            logs.append(_epoch_row(epoch, name, evaluations[name].loss, evaluations[name].per_label, elapsed))

        valid = evaluations.get("valid")
        valid_auroc = valid.means["auroc"] if valid is not None else float("nan")
        if valid is not None and valid.weights is not None:
            gaps[epoch] = valid.prototype_gap
        meta = CheckpointMeta(
            epoch=epoch,
            valid_mean_auroc=None if math.isnan(valid_auroc) else valid_auroc,
            label_index=cfg.label_index,
            seed=cfg.seed,
        )
        save_checkpoint(directory / LAST_CHECKPOINT, params, config, meta)
        if best_epoch is None or (not math.isnan(valid_auroc) and valid_auroc > best_value):
            best_epoch = epoch
            best_value = valid_auroc if not math.isnan(valid_auroc) else -math.inf
            save_checkpoint(best_path, params, config, meta)
            logger.info(f"Saved best checkpoint at epoch {epoch} (valid mean auROC {valid_auroc:.4f})")
        logger.info(
            f"epoch {epoch}/{cfg.epochs}: train loss {train_loss:.4f}, valid mean auROC {valid_auroc:.4f}"
            + (f", prototype gap {gaps[epoch]:.4f}" if epoch in gaps else "")
        )

    return TrainResult(
        checkpoint=load_checkpoint(best_path),
        logs=logs,
        best_epoch=best_epoch,
        prototype_gaps=gaps,
        checkpoint_path=best_path,
    )


def train_single_label_models(split: DatasetSplit, cfg: TrainConfig) -> List[TrainResult]:
    """Train one cnn_single model per label, each under ``checkpoint_dir/label_<i>``."""
    results: List[TrainResult] = []
    model = cfg.model.model_copy(update={"variant": "cnn_single"})
    for label in range(cfg.model.num_labels):
        label_cfg = cfg.model_copy(
            update={
                "model": model,
                "label_index": label,
                "checkpoint_dir": str(Path(cfg.checkpoint_dir) / f"label_{label}"),
            }
        )
        logger.info(f"Training single-label model {label + 1}/{cfg.model.num_labels}")
        results.append(train_model(split, label_cfg))
    return results


def single_label_checkpoint_paths(directory: Union[str, Path], num_labels: int) -> List[Path]:
    directory = Path(directory)
    return [directory / f"label_{label}" / BEST_CHECKPOINT for label in range(num_labels)]
