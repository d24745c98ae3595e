"""Ranking metrics, paired significance tests and aggregated metric reports."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy.special import betainc
from scipy.stats import rankdata

from .errors import DatasetFormatError, EvaluationError

logger = logging.getLogger(__name__)

METRICS = ("auroc", "aupr", "recall_at_fdr")
DEFAULT_FDR = 0.5
SUBSET_SIZE = 10
UNDEFINED = float("nan")


def _as_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in length")
    return scores, labels.astype(bool)


def auroc(scores, labels) -> float:
    """
    Area under the ROC curve as the Mann-Whitney statistic.

    Tied positive/negative pairs count one half. Returns NaN when the labels
    hold no positives or no negatives.
    """
    scores, labels = _as_binary(scores, labels)
    positives = int(labels.sum())
    negatives = labels.size - positives
    if positives == 0 or negatives == 0:
        return UNDEFINED
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[labels].sum())
    return (rank_sum - positives * (positives + 1) / 2.0) / (positives * negatives)


def aupr(scores, labels) -> float:
    """Average precision over positives in descending score order (ties keep input order)."""
    scores, labels = _as_binary(scores, labels)
    positives = int(labels.sum())
    if positives == 0:
        return UNDEFINED
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order]
    hits = np.cumsum(ranked)
    ranks = np.arange(1, ranked.size + 1)
    return float(np.sum(hits[ranked] / ranks[ranked]) / positives)


def recall_at_fdr(scores, labels, fdr: float = DEFAULT_FDR) -> float:
    """
    Largest recall at any observed-score threshold whose precision is at least ``1 - fdr``.

    A threshold t predicts positive when score >= t; 0.0 when no threshold qualifies.
    """
    scores, labels = _as_binary(scores, labels)
    positives = int(labels.sum())
    if positives == 0:
        return UNDEFINED
    order = np.argsort(-scores, kind="stable")
    ranked_scores = scores[order]
    ranked = labels[order]
    true_pos = np.cumsum(ranked)
    predicted = np.arange(1, ranked.size + 1)
    # last position of each run of equal scores
    cut = np.append(ranked_scores[1:] != ranked_scores[:-1], True)
    precision = true_pos[cut] / predicted[cut]
    recall = true_pos[cut] / positives
    ok = precision >= (1.0 - fdr) - 1e-12
    return float(recall[ok].max()) if ok.any() else 0.0


class TTestResult(BaseModel):
    t: float
    p: float
    df: int
    mean_difference: float
    degenerate: bool = False


def paired_t_test_one_tailed(a, b) -> TTestResult:
    """
    One-tailed paired t-test of ``a > b``.

    Zero variance of the differences gives a degenerate result:
    p = 0 / 1 / 0.5 for a positive / negative / zero mean difference.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be equal-length vectors, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise EvaluationError(f"paired t-test needs at least 2 pairs, got {n}")
    d = a - b
    mean = float(d.mean())
    df = n - 1
    if np.all(d == d[0]):
        p = 0.0 if mean > 0 else 1.0 if mean < 0 else 0.5
        t = math.copysign(math.inf, mean) if mean != 0 else 0.0
        return TTestResult(t=t, p=p, df=df, mean_difference=mean, degenerate=True)
    sd = float(d.std(ddof=1))
    t = mean / (sd / math.sqrt(n))
    tail = 0.5 * float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    p = tail if t > 0 else 1.0 - tail
    return TTestResult(t=t, p=p, df=df, mean_difference=mean)


# ---------------------------------------------------------------------------
# Per-label evaluation
# ---------------------------------------------------------------------------

def _label_row(args) -> Dict[str, float]:
    scores, labels, fdr = args
    return {
        "auroc": auroc(scores, labels),
        "aupr": aupr(scores, labels),
        "recall_at_fdr": recall_at_fdr(scores, labels, fdr),
    }


def label_metrics(
    scores: np.ndarray,
    targets: np.ndarray,
    fdr: float = DEFAULT_FDR,
    threads: int = 1,
) -> Dict[str, np.ndarray]:
    """
    Compute every metric per label column.

    Args:
        scores: n x labels predicted probabilities
        targets: n x labels binary targets
        fdr: False discovery rate for recall_at_fdr
        threads: Worker threads (results are assembled in label order)

    Returns:
        Metric name to a per-label array, NaN where undefined
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.shape != targets.shape or scores.ndim != 2:
        raise ValueError(f"scores {scores.shape} and targets {targets.shape} must be matching n x labels arrays")
    jobs = [(scores[:, i], targets[:, i], fdr) for i in range(scores.shape[1])]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_label_row, jobs))
    else:
        rows = [_label_row(job) for job in jobs]
    return {name: np.array([row[name] for row in rows]) for name in METRICS}


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

class SubsetSummary(BaseModel):
    labels: List[int]
    means: Dict[str, float]


class MetricReport(BaseModel):
    """Per-label metrics with mean, std, baseline increase and subset aggregates."""

    name: str = "model"
    label_names: List[str] = Field(default_factory=list)
    per_label: Dict[str, List[float]]
    means: Dict[str, float] = Field(default_factory=dict)
    stds: Dict[str, float] = Field(default_factory=dict)
    undefined: Dict[str, List[int]] = Field(default_factory=dict)
    baseline_name: Optional[str] = None
    percent_increase: Dict[str, float] = Field(default_factory=dict)
    subsets: Dict[str, SubsetSummary] = Field(default_factory=dict)

    @property
    def num_labels(self) -> int:
        return len(next(iter(self.per_label.values()), []))

    def values(self, metric: str) -> np.ndarray:
        return np.array(self.per_label[metric], dtype=np.float64)

    def to_tsv(self) -> str:
        """Summary table followed by a blank line and the per-label table."""
        header = ["metric", "mean", "std", "defined_labels"]
        if self.baseline_name is not None:
            header.append(f"pct_increase_over_{self.baseline_name}")
        for subset in self.subsets:
            header.append(f"{subset}_mean")
        lines = ["\t".join(header)]
        for metric in self.per_label:
            defined = self.num_labels - len(self.undefined.get(metric, []))
            row = [metric, _fmt(self.means[metric]), _fmt(self.stds[metric]), str(defined)]
            if self.baseline_name is not None:
                row.append(_fmt(self.percent_increase[metric]))
            for subset in self.subsets.values():
                row.append(_fmt(subset.means[metric]))
            lines.append("\t".join(row))
        lines.append("")
        names = self.label_names or [str(i) for i in range(self.num_labels)]
        lines.append("\t".join(["label", "index", *self.per_label]))
        for index, label in enumerate(names):
            lines.append("\t".join([label, str(index), *(_fmt(self.per_label[m][index]) for m in self.per_label)]))
        return "\n".join(lines) + "\n"

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(self.to_tsv(), encoding="utf-8")
        return path


def _fmt(value: float) -> str:
    return "nan" if value is None or math.isnan(value) else f"{value:.6f}"


def _mean_std(values: np.ndarray) -> tuple:
    defined = values[~np.isnan(values)]
    if defined.size == 0:
        raise EvaluationError("no defined per-label values to aggregate")
    std = float(defined.std(ddof=1)) if defined.size > 1 else 0.0
    return float(defined.mean()), std


def percent_increase(value: float, baseline: float) -> float:
    return 100.0 * (value - baseline) / baseline


def subset_labels(counts: Sequence[int], size: int = SUBSET_SIZE) -> Dict[str, List[int]]:
    """Labels with the fewest and the most training positives (ties by label index)."""
    order = np.argsort(np.asarray(counts), kind="stable")
    size = min(size, len(order))
    return {
        f"smallest_{size}": sorted(int(i) for i in order[:size]),
        f"largest_{size}": sorted(int(i) for i in order[len(order) - size:]),
    }


def summarize(
    per_label: Dict[str, Sequence[float]],
    baseline: Optional[MetricReport] = None,
    label_counts: Optional[Sequence[int]] = None,
    name: str = "model",
    label_names: Optional[Sequence[str]] = None,
    subset_size: int = SUBSET_SIZE,
) -> MetricReport:
    """
    Aggregate per-label metrics into a MetricReport.

    NaN entries are undefined labels: excluded from means and listed in
    ``undefined``.

    Args:
        per_label: Metric name to per-label values
        baseline: Report to compute percent increases against
        label_counts: Per-label training positive counts, enabling subset summaries
        name: Report name
        label_names: Label names for the per-label table
        subset_size: Labels per subset summary

    Raises:
        EvaluationError: If a metric has no defined values or reports disagree on labels
    """
    if not per_label:
        raise EvaluationError("no metrics to summarize")
    report = MetricReport(
        name=name,
        label_names=list(label_names or []),
        per_label={m: [float(v) for v in values] for m, values in per_label.items()},
    )
    for metric, values in per_label.items():
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise EvaluationError(f"empty {metric} array")
        report.means[metric], report.stds[metric] = _mean_std(values)
        report.undefined[metric] = [int(i) for i in np.flatnonzero(np.isnan(values))]
        if report.undefined[metric]:
            logger.warning(f"{metric} undefined for labels {report.undefined[metric]}; excluded from the mean")

    if baseline is not None:
        if baseline.num_labels != report.num_labels:
            raise EvaluationError(f"baseline has {baseline.num_labels} labels, report has {report.num_labels}")
        report.baseline_name = baseline.name
        for metric in report.means:
            report.percent_increase[metric] = percent_increase(report.means[metric], baseline.means[metric])

    if label_counts is not None:
        if len(label_counts) != report.num_labels:
            raise EvaluationError(f"{len(label_counts)} label counts for {report.num_labels} labels")
        for subset, labels in subset_labels(label_counts, subset_size).items():
            means = {}
            for metric in report.per_label:
                values = report.values(metric)[labels]
                values = values[~np.isnan(values)]
                means[metric] = float(values.mean()) if values.size else UNDEFINED
            report.subsets[subset] = SubsetSummary(labels=labels, means=means)
    return report


def read_report(path: Union[str, Path], name: Optional[str] = None) -> MetricReport:
    """Rebuild a MetricReport from the per-label table of a written report."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DatasetFormatError(f"cannot read report: {e}", path=str(path))
    try:
        start = next(i for i, line in enumerate(lines) if line.startswith("label\tindex\t"))
    except StopIteration:
        raise DatasetFormatError("no per-label table found", path=str(path))
    metrics = lines[start].split("\t")[2:]
    per_label: Dict[str, List[float]] = {metric: [] for metric in metrics}
    label_names: List[str] = []
    for number, line in enumerate(lines[start + 1:], start=start + 2):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != len(metrics) + 2:
            raise DatasetFormatError(f"expected {len(metrics) + 2} columns", path=str(path), line_number=number)
        label_names.append(fields[0])
        try:
            for metric, value in zip(metrics, fields[2:]):
                per_label[metric].append(float(value))
        except ValueError as e:
            raise DatasetFormatError(str(e), path=str(path), line_number=number)
    return summarize(per_label, name=name or path.stem, label_names=label_names)


def compare_reports(a: MetricReport, b: MetricReport) -> Dict[str, TTestResult]:
    """Per metric, one-tailed paired t-test that ``a`` beats ``b`` over labels defined in both."""
    if a.num_labels != b.num_labels:
        raise EvaluationError(f"reports cover {a.num_labels} and {b.num_labels} labels")
    results: Dict[str, TTestResult] = {}
    for metric in a.per_label:
        if metric not in b.per_label:
            continue
        va, vb = a.values(metric), b.values(metric)
        both = ~(np.isnan(va) | np.isnan(vb))
        results[metric] = paired_t_test_one_tailed(va[both], vb[both])
    return results


def format_comparison(results: Dict[str, TTestResult], name_a: str, name_b: str) -> str:
    lines = [
        f"# one-tailed paired t-test, alternative: {name_a} > {name_b}",
        "metric\tmean_difference\tt\tdf\tp\tdegenerate",
    ]
    for metric, r in results.items():
        lines.append(f"{metric}\t{r.mean_difference:.6f}\t{r.t:.6f}\t{r.df}\t{r.p:.6g}\t{str(r.degenerate).lower()}")
    return "\n".join(lines) + "\n"


def prototype_gap(weights, targets) -> float:
    """Mean |w_i - y_i| between final attention weights and labels over a record set."""
    weights = np.asarray(weights, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if weights.shape != targets.shape:
        raise ValueError(f"weights {weights.shape} and targets {targets.shape} differ in shape")
    if weights.size == 0:
        return UNDEFINED
    return float(np.mean(np.abs(weights - targets)))
