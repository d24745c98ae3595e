"""Tests for the synthetic dataset generator."""

import numpy as np
import pytest
from pydantic import ValidationError

from pmn.data import dataset_stats
from pmn.errors import ConfigError, SynthesisError
from pmn.synth import (
    SynthSpec,
    best_motif_match,
    find_motif,
    generate,
    parse_synth_spec,
    plant_motifs,
    planted_group_count,
    planted_pairs,
    sample_activation,
    sample_motif,
    write_ground_truth,
)

SPEC_TEXT = """
num_labels = 8
seq_length = 100
motif_length = 8
seed = 3
train_count = 300
valid_count = 50
test_count = 50
group = 0,1 @ 0.3        # joint binding
conditional = 6 <- 5 @ 0.4
consensus = 2:ACGTTGCA
"""


def test_parse_spec():
    """Test the key-value spec format including list keys and comments."""
    spec = parse_synth_spec(SPEC_TEXT)
    assert spec.num_labels == 8
    assert spec.groups[0].members == (0, 1)
    assert spec.groups[0].probability == 0.3
    assert spec.conditionals[0].dependent == 6
    assert spec.conditionals[0].anchor == 5
    assert spec.consensus == {2: "ACGTTGCA"}
    assert spec.independent_tfs == [2, 3, 4, 5, 7]
    assert parse_synth_spec(spec.to_text()) == spec


@pytest.mark.parametrize(
    "text",
    [
        "num_labels = 4\nseq_length = 20\nmotif_length = 8\n",
        "num_labels = 4\ngroup = 0 @ 0.5\n",
        "num_labels = 4\ngroup = 0,1 @ 0.5\ngroup = 1,2 @ 0.5\n",
        "num_labels = 4\nconditional = 1 <- 1 @ 0.5\n",
        "num_labels = 4\nconditional = 1 <- 0 @ 0.5\nconditional = 2 <- 1 @ 0.5\n",
        "num_labels = 4\nconsensus = 0:ACGT\n",
        "num_labels = 4\ngroup = 0,1 0.5\n",
        "num_labels = 4\nbogus = 1\n",
    ],
)
def test_invalid_specs(text):
    """Test structural validation of synthetic specs."""
    with pytest.raises(ConfigError):
        parse_synth_spec(text)


def test_spec_model_rejects_overfull_sequences():
    """Test that motifs must fit without overlap."""
    with pytest.raises(ValidationError):
        SynthSpec(num_labels=3, seq_length=23, motif_length=8)


def test_generation_is_deterministic():
    """Test that the same spec and seed give identical splits."""
    spec = parse_synth_spec(SPEC_TEXT)
    first, second = generate(spec), generate(spec)
    for name in ("train", "valid", "test"):
        assert first.split.part(name) == second.split.part(name)
    assert first.consensus == second.consensus
    other = generate(spec.model_copy(update={"seed": 4}))
    assert other.split.train != first.split.train


def test_records_are_well_formed():
    """Test lengths, chromosomes, label ranges and the fixed consensus."""
    result = generate(parse_synth_spec(SPEC_TEXT))
    assert result.consensus[2] == "ACGTTGCA"
    for name in ("train", "valid", "test"):
        for record in result.split.part(name):
            assert record.length == 100
            assert record.chrom == f"synth_{name}"
            assert record.positives
            assert all(0 <= i < 8 for i in record.positives)
            assert set(record.sequence) <= set("ACGT")


def test_conditional_dependent_needs_anchor():
    """Test that the dependent TF is never positive without its anchor."""
    result = generate(parse_synth_spec(SPEC_TEXT))
    for record in result.split.train:
        if 6 in record.positives:
            assert 5 in record.positives


def test_group_members_bind_together():
    """Test that group members only appear jointly."""
    result = generate(parse_synth_spec(SPEC_TEXT))
    for record in result.split.train:
        assert (0 in record.positives) == (1 in record.positives)


def test_group_joint_frequency():
    """Test the empirical joint binding rate over 10^4 draws."""
    spec = SynthSpec(
        num_labels=4,
        seq_length=40,
        motif_length=8,
        groups=[{"members": (0, 1), "probability": 0.3}],
        train_count=10000,
        valid_count=0,
        test_count=0,
        seed=11,
    )
    book = generate(spec).report.splits["train"]
    assert book.draws == 10000
    assert abs(book.group_joint_draws[0] / book.draws - 0.3) <= 0.03


def test_planted_motifs_are_found():
    """Test that every positive label's motif is recoverable by a consensus scan."""
    spec = SynthSpec(num_labels=4, seq_length=60, consensus_prob=0.97, train_count=400, valid_count=0, test_count=0)
    result = generate(spec)
    hits = total = 0
    for record in result.split.train:
        for tf in record.positives:
            total += 1
            hits += find_motif(record.sequence, result.consensus[tf]) is not None
    assert total > 0
    assert hits / total >= 0.99


def test_default_mutation_rate_scan():
    """Test the scan rate at the default consensus probability."""
    spec = SynthSpec(num_labels=4, seq_length=60, train_count=400, valid_count=0, test_count=0)
    result = generate(spec)
    matches = [
        best_motif_match(record.sequence, result.consensus[tf]) >= 6
        for record in result.split.train
        for tf in record.positives
    ]
    assert np.mean(matches) >= 0.8


def test_stats_match_bookkeeping():
    """Test that dataset statistics agree with the generator's own counts."""
    result = generate(parse_synth_spec(SPEC_TEXT))
    stats = dataset_stats(result.split)
    for name, book in result.report.splits.items():
        part = stats.parts[name]
        assert part.samples == book.kept
        assert part.positive_counts == book.positive_counts
        assert part.cobinding_samples == book.cobinding_samples
        assert book.kept + book.discarded == book.draws


def test_zero_probability_gives_empty_splits(caplog):
    """Test that a spec that never activates a TF yields empty splits."""
    spec = SynthSpec(num_labels=2, seq_length=20, single_prob=0.0, train_count=20, valid_count=5, test_count=5)
    result = generate(spec)
    assert result.split.train == []
    assert result.report.splits["train"].discarded == 20
    assert "split is empty" in caplog.text


def test_sample_motif_mutation_rate():
    """Test that mutated positions always change base."""
    rng = np.random.default_rng(0)
    assert sample_motif("ACGT", 1.0, rng) == "ACGT"
    mutated = sample_motif("AAAAAAAA", 0.0, rng)
    assert "A" not in mutated


def test_distractors_only_without_anchor():
    """Test that distractors are drawn only when the anchor is inactive."""
    spec = SynthSpec(
        num_labels=3,
        seq_length=30,
        single_prob=0.0,
        distractor_rate=1.0,
        conditionals=[{"dependent": 1, "anchor": 0, "probability": 0.0}],
    )
    active, distractors = sample_activation(spec, np.random.default_rng(0))
    assert active == set()
    assert distractors == {1}


def test_plant_motifs_without_overlap():
    """Test placement and the retry failure."""
    rng = np.random.default_rng(1)
    background = list("A" * 16)
    positions = plant_motifs(background, ["CCCC", "GGGG"], rng)
    assert abs(positions[0] - positions[1]) >= 4
    assert "".join(background).count("CCCC") == 1
    with pytest.raises(SynthesisError):
        plant_motifs(list("A" * 6), ["CCCC", "GGGG"], rng)


def test_planted_structure():
    """Test planted pairs and the implied cluster count."""
    spec = parse_synth_spec(SPEC_TEXT)
    assert planted_pairs(spec) == {(0, 1), (5, 6)}
    assert planted_group_count(spec) == 6


def test_write_ground_truth(tmp_path):
    """Test the ground-truth file sections."""
    result = generate(parse_synth_spec(SPEC_TEXT))
    text = write_ground_truth(tmp_path / "ground_truth.tsv", result).read_text(encoding="utf-8")
    assert "group\t0,1\t0.3" in text
    assert "conditional\t6<-5\t0.4" in text
    assert "2\tACGTTGCA" in text
