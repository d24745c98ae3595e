"""Dataset construction: encoding, genome windowing, peak labeling, splits and batching."""

import bisect
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .cache import EncodingCache, get_encoding_cache
from .config import Config
from .errors import ConfigError, EncodingError
from .tensor import Tensor

logger = logging.getLogger(__name__)

BASES = "ACGT"
SPLIT_NAMES = ("train", "valid", "test")
DEFAULT_VALID_CHROMOSOMES = ("1", "8", "21")
DEFAULT_TEST_CHROMOSOMES = ("3", "12", "17")

_VALID_CODES = np.zeros(256, dtype=bool)
_COLUMNS = np.zeros((256, 4))
for _index, _base in enumerate(BASES):
    for _code in (ord(_base), ord(_base.lower())):
        _VALID_CODES[_code] = True
        _COLUMNS[_code, _index] = 1.0
for _code in (ord("N"), ord("n")):
    _VALID_CODES[_code] = True
    _COLUMNS[_code] = 0.25


@dataclass(frozen=True)
class PeakRecord:
    """A TF peak: 0-based half-open interval with its significance score."""

    tf_index: int
    chrom: str
    start: int
    end: int
    score: float

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"peak interval [{self.start}, {self.end}) is empty or negative")
        if not np.isfinite(self.score):
            raise ValueError(f"peak score {self.score} is not finite")


@dataclass(frozen=True)
class SequenceRecord:
    """A labeled genomic window; ``positives`` are the sorted positive label indices."""

    chrom: str
    start: int
    sequence: str
    positives: Tuple[int, ...]
    num_labels: int

    @property
    def y(self) -> np.ndarray:
        labels = np.zeros(self.num_labels, dtype=np.float64)
        labels[list(self.positives)] = 1.0
        return labels

    @property
    def length(self) -> int:
        return len(self.sequence)


@dataclass
class DatasetSplit:
    """Train/valid/test record lists plus the chromosome each split owns."""

    train: List[SequenceRecord] = field(default_factory=list)
    valid: List[SequenceRecord] = field(default_factory=list)
    test: List[SequenceRecord] = field(default_factory=list)
    chromosomes: Dict[str, str] = field(default_factory=dict)
    label_names: List[str] = field(default_factory=list)

    def part(self, name: str) -> List[SequenceRecord]:
        if name not in SPLIT_NAMES:
            raise KeyError(f"unknown split '{name}'")
        return getattr(self, name)

    @property
    def num_labels(self) -> int:
        if self.label_names:
            return len(self.label_names)
        for name in SPLIT_NAMES:
            if self.part(name):
                return self.part(name)[0].num_labels
        return 0

    @property
    def seq_length(self) -> int:
        for name in SPLIT_NAMES:
            if self.part(name):
                return self.part(name)[0].length
        return 0


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def one_hot_array(sequence: str, dtype: type = np.float32) -> np.ndarray:
    """
    Encode a DNA string as a 4 x T array with channel order A, C, G, T.

    ``N`` becomes a uniform 0.25 column; lower case is accepted.

    Raises:
        EncodingError: On any other character, naming its position
    """
    try:
        codes = np.frombuffer(sequence.encode("ascii"), dtype=np.uint8)
    except UnicodeEncodeError as e:
        raise EncodingError(f"invalid base {sequence[e.start]!r} at position {e.start}", e.start)
    valid = _VALID_CODES[codes]
    if not valid.all():
        position = int(np.argmin(valid))
        raise EncodingError(f"invalid base {sequence[position]!r} at position {position}", position)
    return _COLUMNS[codes].T.astype(dtype)


def one_hot_encode(sequence: str, dtype: type = np.float32) -> Tensor:
    return Tensor(one_hot_array(sequence, dtype))


def encode_records(
    records: Sequence[SequenceRecord],
    dtype: type = np.float32,
    cache: Optional[EncodingCache] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Stack records into (B x 4 x T inputs, B x labels targets)."""
    if not records:
        raise ValueError("cannot encode an empty record list")
    cache = cache or get_encoding_cache(Config.encoding_cache_size(), Config.ENABLE_ENCODING_CACHE)
    X = np.stack([cache.encode(record.sequence, dtype, one_hot_array) for record in records])
    Y = np.stack([record.y for record in records]).astype(dtype)
    return X, Y


# ---------------------------------------------------------------------------
# Genome windows and labels
# ---------------------------------------------------------------------------

def build_windows(chrom_lengths: Mapping[str, int], window: int = 200, stride: int = 50) -> List[Tuple[str, int]]:
    """
    Tile each chromosome with fixed windows.

    Args:
        chrom_lengths: Chromosome name to length
        window: Window length
        stride: Step between window starts

    Returns:
        (chrom, start) pairs with start + window <= length, in chromosome order
    """
    if window <= 0 or stride <= 0:
        raise ConfigError(f"window ({window}) and stride ({stride}) must be positive")
    windows: List[Tuple[str, int]] = []
    for chrom, length in chrom_lengths.items():
        windows.extend((chrom, start) for start in range(0, length - window + 1, stride))
    return windows


def overlap_length(a_start: int, a_end: int, b_start: int, b_end: int) -> int:
    return max(0, min(a_end, b_end) - max(a_start, b_start))


def is_positive_overlap(overlap: int, window: int) -> bool:
    """Strictly more than half of the window."""
    return 2 * overlap > window


def peak_window(peak: PeakRecord, window: int) -> Tuple[int, int]:
    """Fixed-length window centered on the peak midpoint (midpoint rounds down)."""
    midpoint = (peak.start + peak.end) // 2
    start = midpoint - window // 2
    return start, start + window


def label_windows(
    windows: Sequence[Tuple[str, int]],
    peaks: Iterable[PeakRecord],
    window: int = 200,
    score_threshold: float = 1.0,
    num_labels: Optional[int] = None,
    genome: Optional[Mapping[str, str]] = None,
) -> List[SequenceRecord]:
    """
    Label genome windows by overlap with peak-windows.

    A window is positive for TF i when some retained peak-window of TF i
    overlaps it by strictly more than ``window / 2`` positions.  Windows with
    no positive label are dropped.

    Args:
        windows: (chrom, start) pairs from build_windows
        peaks: Peak records; those scoring below ``score_threshold`` are ignored
        window: Window length
        score_threshold: Minimum peak score
        num_labels: Label count (defaults to the largest TF index + 1)
        genome: Chromosome sequences; windows are filled with N when absent

    Returns:
        SequenceRecords in window order
    """
    starts_by_chrom: Dict[str, List[int]] = defaultdict(list)
    for chrom, start in windows:
        starts_by_chrom[chrom].append(start)
    for starts in starts_by_chrom.values():
        starts.sort()

    positives: Dict[Tuple[str, int], Set[int]] = defaultdict(set)
    skipped = 0
    kept = 0
    max_index = -1
    for peak in peaks:
        max_index = max(max_index, peak.tf_index)
        if peak.score < score_threshold:
            continue
        starts = starts_by_chrom.get(peak.chrom)
        if starts is None:
            skipped += 1
            continue
        kept += 1
        pw_start, pw_end = peak_window(peak, window)
        lo = bisect.bisect_right(starts, pw_start - window)
        hi = bisect.bisect_left(starts, pw_end)
        for start in starts[lo:hi]:
            if is_positive_overlap(overlap_length(start, start + window, pw_start, pw_end), window):
                positives[(peak.chrom, start)].add(peak.tf_index)

    if skipped:
        logger.warning(f"Skipped {skipped} peaks on chromosomes without windows")
    logger.info(f"Labeled windows from {kept} peaks at score threshold {score_threshold}")

    num_labels = num_labels if num_labels is not None else max_index + 1
    records: List[SequenceRecord] = []
    for chrom, start in windows:
        labels = positives.get((chrom, start))
        if not labels:
            continue
        if genome is not None:
            sequence = genome[chrom][start:start + window].upper()
        else:
            sequence = "N" * window
        records.append(SequenceRecord(chrom, start, sequence, tuple(sorted(labels)), num_labels))
    return records


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def chromosome_id(chrom: str) -> str:
    """Normalize 'chr8' / 'Chr8' / '8' to '8'."""
    return chrom[3:] if chrom.lower().startswith("chr") else chrom


def split_by_chromosome(
    records: Iterable[SequenceRecord],
    valid_set: Iterable = DEFAULT_VALID_CHROMOSOMES,
    test_set: Iterable = DEFAULT_TEST_CHROMOSOMES,
    label_names: Optional[List[str]] = None,
) -> DatasetSplit:
    """Partition records by chromosome membership; the remainder is training data."""
    valid_ids = {chromosome_id(str(c)) for c in valid_set}
    test_ids = {chromosome_id(str(c)) for c in test_set}
    if valid_ids & test_ids:
        raise ConfigError(f"validation and test chromosomes overlap: {sorted(valid_ids & test_ids)}")
    split = DatasetSplit(label_names=list(label_names or []))
    for record in records:
        cid = chromosome_id(record.chrom)
        name = "valid" if cid in valid_ids else "test" if cid in test_ids else "train"
        split.part(name).append(record)
        split.chromosomes[record.chrom] = name
    return split


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

class PartStats(BaseModel):
    samples: int = 0
    cobinding_samples: int = 0
    mean_positives: float = 0.0
    cobinding_percent: float = 0.0
    positive_counts: List[int] = Field(default_factory=list)
    positive_percent: List[float] = Field(default_factory=list)


class DatasetStats(BaseModel):
    """Per-split totals, co-binding counts and per-TF positive rates."""

    num_labels: int
    label_names: List[str] = Field(default_factory=list)
    parts: Dict[str, PartStats] = Field(default_factory=dict)

    def to_text(self) -> str:
        lines = ["split\tsamples\tcobinding_samples\tmean_tfs_per_sample\tcobinding_percent"]
        for name, part in self.parts.items():
            lines.append(
                f"{name}\t{part.samples}\t{part.cobinding_samples}\t{part.mean_positives:.2f}\t"
                f"{part.cobinding_percent:.2f}"
            )
        lines.append("")
        lines.append("label\t" + "\t".join(f"{name}_positive_percent" for name in self.parts))
        names = self.label_names or [str(i) for i in range(self.num_labels)]
        for index, label in enumerate(names):
            row = [f"{part.positive_percent[index]:.2f}" for part in self.parts.values()]
            lines.append(f"{label}\t" + "\t".join(row))
        return "\n".join(lines) + "\n"


def part_stats(records: Sequence[SequenceRecord], num_labels: int) -> PartStats:
    counts = np.zeros(num_labels, dtype=np.int64)
    total_positives = 0
    cobinding = 0
    for record in records:
        counts[list(record.positives)] += 1
        total_positives += len(record.positives)
        if len(record.positives) >= 2:
            cobinding += 1
    samples = len(records)
    return PartStats(
        samples=samples,
        cobinding_samples=cobinding,
        mean_positives=total_positives / samples if samples else 0.0,
        cobinding_percent=100.0 * cobinding / samples if samples else 0.0,
        positive_counts=counts.tolist(),
        positive_percent=(100.0 * counts / samples).tolist() if samples else [0.0] * num_labels,
    )


def dataset_stats(split: DatasetSplit) -> DatasetStats:
    num_labels = split.num_labels
    stats = DatasetStats(num_labels=num_labels, label_names=list(split.label_names))
    for name in SPLIT_NAMES:
        stats.parts[name] = part_stats(split.part(name), num_labels)
    return stats


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

def epoch_permutation(count: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffle order keyed by (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(count)


def batch_iter(
    records: Sequence[SequenceRecord],
    batch_size: int = 512,
    seed: int = 0,
    epoch: int = 0,
    dtype: type = np.float32,
    cache: Optional[EncodingCache] = None,
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """
    Yield shuffled batches of (one-hot X, Y), encoding on the fly.

    Args:
        records: Records of one split
        batch_size: Records per batch; the last batch may be smaller
        seed: Run seed
        epoch: Epoch number (changes the shuffle)
        dtype: Array precision
        cache: Encoding cache (the global one when None)

    Yields:
        (B x 4 x T inputs, B x labels targets)
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be at least 1, got {batch_size}")
    order = epoch_permutation(len(records), seed, epoch)
    for offset in range(0, len(order), batch_size):
        chunk = [records[i] for i in order[offset:offset + batch_size]]
        yield encode_records(chunk, dtype, cache)
