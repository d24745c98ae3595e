"""Synthetic planted-motif datasets with explicit co-binding structure.

A spec file is key-value text::

    num_labels = 8
    seq_length = 100
    motif_length = 8
    seed = 3
    train_count = 10000
    group = 0,1 @ 0.3            # TFs 0 and 1 bind jointly in 30% of draws
    conditional = 6 <- 5 @ 0.4   # TF 6 binds (given 5 bound) in 40% of those draws
    consensus = 2:ACGTTGCA       # optional fixed consensus for TF 2

TFs outside every group and not conditional on another TF bind independently
with ``single_prob``.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .config import collect_settings, parse_key_value_file, parse_key_value_text
from .data import BASES, SPLIT_NAMES, DatasetSplit, SequenceRecord
from .errors import ConfigError, SynthesisError

logger = logging.getLogger(__name__)

PLACEMENT_RETRIES = 100
LIST_KEYS = ("group", "conditional", "consensus")
GROUND_TRUTH_FILE = "ground_truth.tsv"


class CoBindingGroup(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    members: Tuple[int, ...]
    probability: float = Field(ge=0.0, le=1.0)

    @field_validator("members")
    @classmethod
    def _at_least_two(cls, members):
        if len(members) < 2 or len(set(members)) != len(members):
            raise ValueError(f"a group needs at least two distinct TFs, got {members}")
        return tuple(sorted(members))


class ConditionalPair(BaseModel):
    """``dependent`` can only be labeled positive when ``anchor`` is planted too."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    dependent: int
    anchor: int
    probability: float = Field(ge=0.0, le=1.0)


class SynthSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_labels: int = Field(ge=1)
    seq_length: int = Field(default=200, ge=1)
    motif_length: int = Field(default=8, ge=1)
    consensus_prob: float = Field(default=0.85, ge=0.0, le=1.0)
    consensus: Dict[int, str] = Field(default_factory=dict)
    groups: List[CoBindingGroup] = Field(default_factory=list)
    conditionals: List[ConditionalPair] = Field(default_factory=list)
    single_prob: float = Field(default=0.3, ge=0.0, le=1.0)
    distractor_rate: float = Field(default=0.1, ge=0.0, le=1.0)
    train_count: int = Field(default=1000, ge=0)
    valid_count: int = Field(default=200, ge=0)
    test_count: int = Field(default=200, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_structure(self):
        labels = range(self.num_labels)
        grouped: Set[int] = set()
        for group in self.groups:
            for tf in group.members:
                if tf not in labels:
                    raise ValueError(f"group member {tf} outside [0, {self.num_labels})")
                if tf in grouped:
                    raise ValueError(f"TF {tf} appears in more than one group")
                grouped.add(tf)
        dependents: Set[int] = set()
        for pair in self.conditionals:
            if pair.dependent not in labels or pair.anchor not in labels:
                raise ValueError(f"conditional {pair.dependent} <- {pair.anchor} outside [0, {self.num_labels})")
            if pair.dependent == pair.anchor:
                raise ValueError(f"TF {pair.dependent} cannot depend on itself")
            if pair.dependent in grouped:
                raise ValueError(f"conditional TF {pair.dependent} is also a group member")
            if pair.dependent in dependents:
                raise ValueError(f"TF {pair.dependent} has more than one conditional rule")
            dependents.add(pair.dependent)
        for pair in self.conditionals:
            if pair.anchor in dependents:
                raise ValueError(f"anchor TF {pair.anchor} is itself conditional")
        for tf, motif in self.consensus.items():
            if tf not in labels:
                raise ValueError(f"consensus for TF {tf} outside [0, {self.num_labels})")
            if len(motif) != self.motif_length or set(motif) - set(BASES):
                raise ValueError(f"consensus for TF {tf} must be {self.motif_length} bases over ACGT, got '{motif}'")
        if self.num_labels * self.motif_length > self.seq_length:
            raise ValueError(
                f"{self.num_labels} motifs of length {self.motif_length} cannot fit in length {self.seq_length} "
                "without overlap"
            )
        return self

    @property
    def dependents(self) -> Dict[int, ConditionalPair]:
        return {pair.dependent: pair for pair in self.conditionals}

    @property
    def independent_tfs(self) -> List[int]:
        grouped = {tf for group in self.groups for tf in group.members}
        dependents = self.dependents
        return [tf for tf in range(self.num_labels) if tf not in grouped and tf not in dependents]

    def count(self, split: str) -> int:
        return getattr(self, f"{split}_count")

    def label_names(self) -> List[str]:
        return [f"tf{i}" for i in range(self.num_labels)]

    def to_text(self) -> str:
        """Render back into the key-value format (parse(to_text()) == self)."""
        lines = [
            f"num_labels = {self.num_labels}",
            f"seq_length = {self.seq_length}",
            f"motif_length = {self.motif_length}",
            f"consensus_prob = {self.consensus_prob!r}",
            f"single_prob = {self.single_prob!r}",
            f"distractor_rate = {self.distractor_rate!r}",
            f"train_count = {self.train_count}",
            f"valid_count = {self.valid_count}",
            f"test_count = {self.test_count}",
            f"seed = {self.seed}",
        ]
        for group in self.groups:
            lines.append(f"group = {','.join(str(tf) for tf in group.members)} @ {group.probability!r}")
        for pair in self.conditionals:
            lines.append(f"conditional = {pair.dependent} <- {pair.anchor} @ {pair.probability!r}")
        for tf in sorted(self.consensus):
            lines.append(f"consensus = {tf}:{self.consensus[tf]}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _split_probability(value: str, key: str) -> Tuple[str, float]:
    if "@" not in value:
        raise ConfigError(f"{key} '{value}' needs '@ probability'")
    body, probability = (part.strip() for part in value.rsplit("@", 1))
    try:
        return body, float(probability)
    except ValueError:
        raise ConfigError(f"{key} '{value}' has a non-numeric probability")


def _parse_group(value: str) -> Dict:
    body, probability = _split_probability(value, "group")
    try:
        members = tuple(int(tf) for tf in body.split(","))
    except ValueError:
        raise ConfigError(f"group '{value}' must list integer TF indices")
    return {"members": members, "probability": probability}


def _parse_conditional(value: str) -> Dict:
    body, probability = _split_probability(value, "conditional")
    if "<-" not in body:
        raise ConfigError(f"conditional '{value}' must read 'dependent <- anchor @ p'")
    dependent, anchor = (part.strip() for part in body.split("<-", 1))
    try:
        return {"dependent": int(dependent), "anchor": int(anchor), "probability": probability}
    except ValueError:
        raise ConfigError(f"conditional '{value}' must use integer TF indices")


def _parse_consensus(value: str) -> Tuple[int, str]:
    if ":" not in value:
        raise ConfigError(f"consensus '{value}' must read 'tf:BASES'")
    tf, motif = (part.strip() for part in value.split(":", 1))
    try:
        return int(tf), motif.upper()
    except ValueError:
        raise ConfigError(f"consensus '{value}' must start with an integer TF index")


def synth_spec_from_entries(entries) -> SynthSpec:
    settings = collect_settings(entries, LIST_KEYS)
    try:
        settings["groups"] = [_parse_group(v) for v in settings.pop("group", [])]
        settings["conditionals"] = [_parse_conditional(v) for v in settings.pop("conditional", [])]
        consensus: Dict[int, str] = {}
        for value in settings.pop("consensus", []):
            tf, motif = _parse_consensus(value)
            if tf in consensus:
                raise ConfigError(f"consensus for TF {tf} given twice")
            consensus[tf] = motif
        settings["consensus"] = consensus
        return SynthSpec.model_validate(settings)
    except ValidationError as e:
        raise ConfigError(f"invalid synthetic spec: {e}")


def parse_synth_spec(text: str, source: str = "<synth spec>") -> SynthSpec:
    return synth_spec_from_entries(parse_key_value_text(text, source))


def load_synth_spec(path: Union[str, Path]) -> SynthSpec:
    return synth_spec_from_entries(parse_key_value_file(path))


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

class SplitBookkeeping(BaseModel):
    """What the generator did for one split."""

    draws: int = 0
    kept: int = 0
    discarded: int = 0
    positive_counts: List[int] = Field(default_factory=list)
    cobinding_samples: int = 0
    group_joint_draws: List[int] = Field(default_factory=list)
    distractors: int = 0


class SynthReport(BaseModel):
    consensus: Dict[int, str]
    splits: Dict[str, SplitBookkeeping] = Field(default_factory=dict)


@dataclass
class SynthResult:
    split: DatasetSplit
    report: SynthReport
    spec: SynthSpec
    consensus: Dict[int, str] = field(default_factory=dict)


def draw_consensus(spec: SynthSpec, rng: np.random.Generator) -> Dict[int, str]:
    """Fixed consensus where given, uniform random strings elsewhere."""
    consensus: Dict[int, str] = {}
    for tf in range(spec.num_labels):
        random_motif = "".join(BASES[i] for i in rng.integers(4, size=spec.motif_length))
        consensus[tf] = spec.consensus.get(tf, random_motif)
    return consensus


def sample_motif(consensus: str, consensus_prob: float, rng: np.random.Generator) -> str:
    """Each position keeps its consensus base with ``consensus_prob``, else one of the other three uniformly."""
    keep = rng.random(len(consensus)) < consensus_prob
    offsets = rng.integers(1, 4, size=len(consensus))
    bases = []
    for base, kept, offset in zip(consensus, keep, offsets):
        bases.append(base if kept else BASES[(BASES.index(base) + offset) % 4])
    return "".join(bases)


def sample_activation(spec: SynthSpec, rng: np.random.Generator) -> Tuple[Set[int], Set[int]]:
    """
    Draw which TFs bind one sample.

    Returns:
        (labeled TFs, distractor TFs planted without a label)
    """
    active: Set[int] = set()
    for group in spec.groups:
        if rng.random() < group.probability:
            active.update(group.members)
    for tf in spec.independent_tfs:
        if rng.random() < spec.single_prob:
            active.add(tf)
    distractors: Set[int] = set()
    for pair in spec.conditionals:
        if pair.anchor in active:
            if rng.random() < pair.probability:
                active.add(pair.dependent)
        elif rng.random() < spec.distractor_rate:
            distractors.add(pair.dependent)
    return active, distractors


def plant_motifs(background: List[str], motifs: Sequence[str], rng: np.random.Generator) -> List[int]:
    """
    Place motifs at uniform positions without overlap.

    Raises:
        SynthesisError: When a motif finds no free slot within the retry budget
    """
    taken: List[Tuple[int, int]] = []
    positions: List[int] = []
    for motif in motifs:
        span = len(background) - len(motif)
        for _ in range(PLACEMENT_RETRIES):
            start = int(rng.integers(span + 1))
            end = start + len(motif)
            if all(end <= s or start >= e for s, e in taken):
                break
        else:
            raise SynthesisError(
                f"could not place a motif of length {len(motif)} without overlap after {PLACEMENT_RETRIES} tries"
            )
        background[start:end] = motif
        taken.append((start, end))
        positions.append(start)
    return positions


def _generate_split(
    spec: SynthSpec,
    name: str,
    consensus: Dict[int, str],
    rng: np.random.Generator,
) -> Tuple[List[SequenceRecord], SplitBookkeeping]:
    book = SplitBookkeeping(
        positive_counts=[0] * spec.num_labels,
        group_joint_draws=[0] * len(spec.groups),
    )
    records: List[SequenceRecord] = []
    chrom = f"synth_{name}"
    for draw in range(spec.count(name)):
        active, distractors = sample_activation(spec, rng)
        sequence = [BASES[i] for i in rng.integers(4, size=spec.seq_length)]
        planted = sorted(active) + sorted(distractors)
        plant_motifs(sequence, [sample_motif(consensus[tf], spec.consensus_prob, rng) for tf in planted], rng)
        book.draws += 1
        book.distractors += len(distractors)
        for index, group in enumerate(spec.groups):
            if active.issuperset(group.members):
                book.group_joint_draws[index] += 1
        if not active:
            book.discarded += 1
            continue
        positives = tuple(sorted(active))
        records.append(SequenceRecord(chrom, draw, "".join(sequence), positives, spec.num_labels))
        book.kept += 1
        for tf in positives:
            book.positive_counts[tf] += 1
        if len(positives) >= 2:
            book.cobinding_samples += 1
    return records, book


def generate(spec: SynthSpec) -> SynthResult:
    """Generate all three splits; a pure function of ``spec`` (seed included)."""
    consensus_seed, *split_seeds = np.random.SeedSequence(spec.seed).spawn(1 + len(SPLIT_NAMES))
    consensus = draw_consensus(spec, np.random.default_rng(consensus_seed))
    split = DatasetSplit(label_names=spec.label_names())
    report = SynthReport(consensus=consensus)
    for name, seed in zip(SPLIT_NAMES, split_seeds):
        records, book = _generate_split(spec, name, consensus, np.random.default_rng(seed))
        split.part(name).extend(records)
        split.chromosomes[f"synth_{name}"] = name
        report.splits[name] = book
        logger.info(f"Generated {name}: {book.kept} kept of {book.draws} draws ({book.discarded} discarded)")
        if not records:
            logger.warning(f"Synthetic {name} split is empty")
    return SynthResult(split=split, report=report, spec=spec, consensus=consensus)


def synth_generate(spec: SynthSpec) -> DatasetSplit:
    return generate(spec).split


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------

def planted_pairs(spec: SynthSpec) -> Set[Tuple[int, int]]:
    """Unordered TF pairs that co-bind by construction (group pairs and conditional pairs)."""
    pairs: Set[Tuple[int, int]] = set()
    for group in spec.groups:
        members = group.members
        for i, a in enumerate(members):
            for b in members[i + 1:]:
                pairs.add((a, b))
    for pair in spec.conditionals:
        pairs.add((min(pair.anchor, pair.dependent), max(pair.anchor, pair.dependent)))
    return pairs


def planted_group_count(spec: SynthSpec) -> int:
    """Clusters implied by the planted structure: groups, conditional chains and singletons."""
    parent = list(range(spec.num_labels))

    def find(tf: int) -> int:
        while parent[tf] != tf:
            parent[tf] = parent[parent[tf]]
            tf = parent[tf]
        return tf

    for a, b in planted_pairs(spec):
        parent[find(a)] = find(b)
    return len({find(tf) for tf in range(spec.num_labels)})


def write_ground_truth(path: Union[str, Path], result: SynthResult) -> Path:
    """TSV of planted structure, consensus strings and per-split bookkeeping."""
    spec = result.spec
    lines = ["kind\tmembers\tprobability"]
    for group in spec.groups:
        lines.append(f"group\t{','.join(str(tf) for tf in group.members)}\t{group.probability!r}")
    for pair in spec.conditionals:
        lines.append(f"conditional\t{pair.dependent}<-{pair.anchor}\t{pair.probability!r}")
    for tf in spec.independent_tfs:
        lines.append(f"single\t{tf}\t{spec.single_prob!r}")
    lines.append("")
    lines.append("tf\tconsensus")
    lines.extend(f"{tf}\t{motif}" for tf, motif in sorted(result.consensus.items()))
    lines.append("")
    lines.append("split\tdraws\tkept\tdiscarded\tcobinding_samples\tdistractors\tpositive_counts")
    for name, book in result.report.splits.items():
        lines.append(
            f"{name}\t{book.draws}\t{book.kept}\t{book.discarded}\t{book.cobinding_samples}\t{book.distractors}\t"
            + ",".join(str(c) for c in book.positive_counts)
        )
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def count_consensus_matches(window: str, consensus: str) -> int:
    return sum(a == b for a, b in zip(window, consensus))


def best_motif_match(sequence: str, consensus: str) -> int:
    """Largest number of consensus positions matched by any window of the sequence."""
    width = len(consensus)
    return max(
        (count_consensus_matches(sequence[i:i + width], consensus) for i in range(len(sequence) - width + 1)),
        default=0,
    )


def find_motif(sequence: str, consensus: str, min_matches: int = 6) -> Optional[int]:
    """First window start matching at least ``min_matches`` consensus positions, else None."""
    width = len(consensus)
    for i in range(len(sequence) - width + 1):
        if count_consensus_matches(sequence[i:i + width], consensus) >= min_matches:
            return i
    return None
