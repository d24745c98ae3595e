"""Tests for label, peak, genome and dataset files."""

import pytest

from pmn.data import DatasetSplit, SequenceRecord
from pmn.errors import DatasetFormatError
from pmn.formats import (
    load_split,
    read_dataset,
    read_genome,
    read_label_list,
    read_peaks,
    save_split,
    write_dataset,
)

HEADER = "chrom\tstart\tsequence\tpositive_indices\n"


def test_read_label_list(tmp_path):
    """Test label order and duplicate detection."""
    path = tmp_path / "labels.txt"
    path.write_text("CTCF\n# comment\n\nYY1\n", encoding="utf-8")
    assert read_label_list(path) == ["CTCF", "YY1"]
    path.write_text("CTCF\nYY1\nCTCF\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError) as excinfo:
        read_label_list(path)
    assert excinfo.value.line_number == 3


def test_read_peaks(tmp_path):
    """Test peak parsing and error locations."""
    path = tmp_path / "peaks.tsv"
    path.write_text("# tf chrom start end score\nYY1\tchr2\t100\t300\t4.5\n", encoding="utf-8")
    peaks = read_peaks(path, ["CTCF", "YY1"])
    assert len(peaks) == 1
    assert (peaks[0].tf_index, peaks[0].chrom, peaks[0].start, peaks[0].end) == (1, "chr2", 100, 300)
    for bad in ("MAX\tchr2\t1\t2\t1.0\n", "YY1\tchr2\t300\t100\t1.0\n", "YY1\tchr2\tx\t100\t1.0\n", "YY1\tchr2\n"):
        path.write_text(bad, encoding="utf-8")
        with pytest.raises(DatasetFormatError) as excinfo:
            read_peaks(path, ["CTCF", "YY1"])
        assert excinfo.value.line_number == 1


def test_read_genome(tmp_path):
    """Test FASTA parsing across wrapped lines."""
    path = tmp_path / "genome.fa"
    path.write_text(">chr1 description\nacgt\nACGT\n>chr2\nNNNN\n", encoding="utf-8")
    assert read_genome(path) == {"chr1": "ACGTACGT", "chr2": "NNNN"}
    path.write_text("ACGT\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        read_genome(path)


def test_dataset_round_trip(tmp_path):
    """Test that written records read back identically."""
    records = [
        SequenceRecord("chr2", 0, "ACGT", (0, 2), 3),
        SequenceRecord("chr4", 50, "TTNA", (1,), 3),
    ]
    path = tmp_path / "train.tsv"
    write_dataset(path, records)
    assert path.read_text(encoding="utf-8").splitlines()[1] == "chr2\t0\tACGT\t0,2"
    assert read_dataset(path, 3) == records


@pytest.mark.parametrize(
    "body",
    [
        "chr1\t0\tACGT\t\n",
        "chr1\t0\tACGT\t2,1\n",
        "chr1\t0\tACGT\t3\n",
        "chr1\t0\tACGT\t0\nchr1\t4\tACG\t0\n",
        "chr1\tzero\tACGT\t0\n",
        "chr1\t0\tACGT\n",
    ],
)
def test_read_dataset_rejects_malformed_rows(tmp_path, body):
    """Test row validation."""
    path = tmp_path / "bad.tsv"
    path.write_text(HEADER + body, encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        read_dataset(path, 3)


def test_read_dataset_requires_header(tmp_path):
    """Test header validation and empty files."""
    path = tmp_path / "bad.tsv"
    path.write_text("chr1\t0\tACGT\t0\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        read_dataset(path, 3)
    path.write_text("", encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        read_dataset(path, 3)


def test_split_round_trip(tmp_path):
    """Test saving and loading a whole split directory."""
    split = DatasetSplit(
        train=[SequenceRecord("chr2", 0, "ACGT", (0,), 2)],
        valid=[SequenceRecord("chr1", 0, "CCGT", (0, 1), 2)],
        test=[],
        label_names=["a", "b"],
    )
    save_split(tmp_path / "data", split)
    loaded = load_split(tmp_path / "data")
    assert loaded.label_names == ["a", "b"]
    assert loaded.train == split.train
    assert loaded.valid == split.valid
    assert loaded.test == []
    assert loaded.chromosomes == {"chr2": "train", "chr1": "valid"}


def test_load_split_missing_file(tmp_path):
    """Test that a missing split file is reported."""
    (tmp_path / "labels.txt").write_text("a\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        load_split(tmp_path)
