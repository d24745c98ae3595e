"""Reading and writing the text file formats: label lists, peaks, genomes and datasets."""

import logging
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

from .data import SPLIT_NAMES, DatasetSplit, PeakRecord, SequenceRecord
from .errors import DatasetFormatError

logger = logging.getLogger(__name__)

DATASET_HEADER = ("chrom", "start", "sequence", "positive_indices")
LABELS_FILE = "labels.txt"

PathLike = Union[str, Path]


def _lines(path: Path) -> Iterator[Tuple[int, str]]:
    try:
        with path.open("r", encoding="utf-8") as handle:
            for number, line in enumerate(handle, start=1):
                yield number, line.rstrip("\r\n")
    except OSError as e:
        raise DatasetFormatError(f"cannot read file: {e}", path=str(path))


def read_label_list(path: PathLike) -> List[str]:
    """One TF name per line; line order gives the label index."""
    path = Path(path)
    names: List[str] = []
    seen: Dict[str, int] = {}
    for number, line in _lines(path):
        name = line.strip()
        if not name or name.startswith("#"):
            continue
        if name in seen:
            raise DatasetFormatError(
                f"label '{name}' repeated (first on line {seen[name]})", path=str(path), line_number=number
            )
        seen[name] = number
        names.append(name)
    return names


def write_label_list(path: PathLike, names: Sequence[str]) -> None:
    Path(path).write_text("".join(f"{name}\n" for name in names), encoding="utf-8")


def read_peaks(path: PathLike, label_names: Sequence[str]) -> List[PeakRecord]:
    """
    Read a tab-separated peak file.

    Columns are ``tf_name chrom start end score``; ``#`` lines are comments.

    Args:
        path: Peak file
        label_names: Label list mapping TF names to indices

    Returns:
        Peak records in file order

    Raises:
        DatasetFormatError: On unknown TF names, bad numbers or invalid intervals
    """
    path = Path(path)
    index = {name: i for i, name in enumerate(label_names)}
    peaks: List[PeakRecord] = []
    for number, line in _lines(path):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise DatasetFormatError(f"expected 5 columns, got {len(fields)}", path=str(path), line_number=number)
        tf_name, chrom, start, end, score = fields
        if tf_name not in index:
            raise DatasetFormatError(f"unknown TF '{tf_name}'", path=str(path), line_number=number)
        try:
            peaks.append(PeakRecord(index[tf_name], chrom, int(start), int(end), float(score)))
        except ValueError as e:
            raise DatasetFormatError(str(e), path=str(path), line_number=number)
    logger.info(f"Read {len(peaks)} peaks from {path}")
    return peaks


def read_genome(path: PathLike) -> Dict[str, str]:
    """Read a plain FASTA file into chromosome name to upper-case sequence."""
    path = Path(path)
    chunks: Dict[str, List[str]] = {}
    current: Optional[str] = None
    for number, line in _lines(path):
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            current = line[1:].split()[0] if line[1:].split() else ""
            if not current:
                raise DatasetFormatError("empty sequence name", path=str(path), line_number=number)
            if current in chunks:
                raise DatasetFormatError(f"sequence '{current}' repeated", path=str(path), line_number=number)
            chunks[current] = []
        elif current is None:
            raise DatasetFormatError("sequence data before the first '>' header", path=str(path), line_number=number)
        else:
            chunks[current].append(line.upper())
    return {name: "".join(parts) for name, parts in chunks.items()}


def write_dataset(path: PathLike, records: Sequence[SequenceRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        handle.write("\t".join(DATASET_HEADER) + "\n")
        for record in records:
            positives = ",".join(str(i) for i in record.positives)
            handle.write(f"{record.chrom}\t{record.start}\t{record.sequence}\t{positives}\n")


def read_dataset(path: PathLike, num_labels: int) -> List[SequenceRecord]:
    """
    Read a dataset file written by write_dataset.

    Raises:
        DatasetFormatError: On a bad header, bad columns, label indices out of
            range, inconsistent sequence lengths or records with no positives
    """
    path = Path(path)
    records: List[SequenceRecord] = []
    length: Optional[int] = None
    header_seen = False
    for number, line in _lines(path):
        if not line:
            continue
        fields = line.split("\t")
        if not header_seen:
            if tuple(fields) != DATASET_HEADER:
                raise DatasetFormatError(
                    f"expected header '{' '.join(DATASET_HEADER)}'", path=str(path), line_number=number
                )
            header_seen = True
            continue
        if len(fields) != 4:
            raise DatasetFormatError(f"expected 4 columns, got {len(fields)}", path=str(path), line_number=number)
        chrom, start, sequence, positive_field = fields
        try:
            positives = tuple(int(i) for i in positive_field.split(",") if i)
            start_value = int(start)
        except ValueError as e:
            raise DatasetFormatError(str(e), path=str(path), line_number=number)
        if not positives:
            raise DatasetFormatError("record has no positive label", path=str(path), line_number=number)
        if list(positives) != sorted(set(positives)) or positives[0] < 0 or positives[-1] >= num_labels:
            raise DatasetFormatError(
                f"positive indices must be sorted, unique and in [0, {num_labels})",
                path=str(path),
                line_number=number,
            )
        if length is None:
            length = len(sequence)
        elif len(sequence) != length:
            raise DatasetFormatError(
                f"sequence length {len(sequence)} differs from {length}", path=str(path), line_number=number
            )
        records.append(SequenceRecord(chrom, start_value, sequence, positives, num_labels))
    if not header_seen:
        raise DatasetFormatError("empty dataset file (no header)", path=str(path))
    return records


def save_split(directory: PathLike, split: DatasetSplit) -> Path:
    """Write ``labels.txt`` and ``train.tsv``/``valid.tsv``/``test.tsv`` into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = split.label_names or [f"tf{i}" for i in range(split.num_labels)]
    write_label_list(directory / LABELS_FILE, names)
    for name in SPLIT_NAMES:
        write_dataset(directory / f"{name}.tsv", split.part(name))
    logger.info(
        f"Wrote dataset to {directory}: "
        + ", ".join(f"{name}={len(split.part(name))}" for name in SPLIT_NAMES)
    )
    return directory


def load_split(directory: PathLike) -> DatasetSplit:
    directory = Path(directory)
    names = read_label_list(directory / LABELS_FILE)
    split = DatasetSplit(label_names=names)
    for name in SPLIT_NAMES:
        path = directory / f"{name}.tsv"
        if not path.exists():
            raise DatasetFormatError(f"missing {name} split file", path=str(path))
        records = read_dataset(path, len(names))
        split.part(name).extend(records)
        for record in records:
            split.chromosomes[record.chrom] = name
    lengths = {split.part(name)[0].length for name in SPLIT_NAMES if split.part(name)}
    if len(lengths) > 1:
        raise DatasetFormatError(f"splits disagree on sequence length: {sorted(lengths)}", path=str(directory))
    return split
