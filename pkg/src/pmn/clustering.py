"""Average-linkage hierarchical clustering of prototype vectors."""

import itertools
import logging
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import DatasetFormatError, DimensionError
from .tensor import COSINE_NORM_FLOOR, Tensor

logger = logging.getLogger(__name__)


class Merge(NamedTuple):
    a: int
    b: int
    height: float
    new_id: int


class Dendrogram:
    """Merge list over ``num_leaves`` leaves; merge k creates cluster ``num_leaves + k``."""

    def __init__(self, merges: Sequence[Merge], num_leaves: int):
        if len(merges) != num_leaves - 1:
            raise ValueError(f"{num_leaves} leaves need {num_leaves - 1} merges, got {len(merges)}")
        self.merges = list(merges)
        self.num_leaves = num_leaves

    def __len__(self) -> int:
        return len(self.merges)

    def __eq__(self, other) -> bool:
        return isinstance(other, Dendrogram) and self.num_leaves == other.num_leaves and self.merges == other.merges

    @property
    def heights(self) -> List[float]:
        return [merge.height for merge in self.merges]

    def to_text(self) -> str:
        return "".join(f"{m.a}\t{m.b}\t{m.height!r}\t{m.new_id}\n" for m in self.merges)

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(self.to_text(), encoding="utf-8")
        return path

    @classmethod
    def from_text(cls, text: str, source: str = "<dendrogram>") -> "Dendrogram":
        merges: List[Merge] = []
        for number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            fields = line.split("\t")
            try:
                a, b, height, new_id = int(fields[0]), int(fields[1]), float(fields[2]), int(fields[3])
            except (IndexError, ValueError):
                raise DatasetFormatError("expected 'a<TAB>b<TAB>height<TAB>new_id'", path=source, line_number=number)
            merges.append(Merge(a, b, height, new_id))
        return cls(merges, len(merges) + 1)

    def cut(self, k: int) -> Dict[int, int]:
        """
        Cut into ``k`` clusters by replaying the first ``num_leaves - k`` merges.

        Returns:
            Leaf label to cluster number; clusters are numbered 0..k-1 in
            order of their smallest leaf
        """
        if not 1 <= k <= self.num_leaves:
            raise ValueError(f"k must lie in [1, {self.num_leaves}], got {k}")
        members: Dict[int, List[int]] = {leaf: [leaf] for leaf in range(self.num_leaves)}
        for merge in self.merges[:self.num_leaves - k]:
            members[merge.new_id] = members.pop(merge.a) + members.pop(merge.b)
        clusters = sorted(members.values(), key=min)
        return {leaf: number for number, leaves in enumerate(clusters) for leaf in leaves}


def cosine_distance_matrix(vectors: np.ndarray) -> np.ndarray:
    """1 - cosine between rows; zero rows are treated as having cosine 0 with everything."""
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.maximum(np.linalg.norm(vectors, axis=1), COSINE_NORM_FLOOR)
    unit = vectors / norms[:, None]
    cosine = np.clip(unit @ unit.T, -1.0, 1.0)
    distance = 1.0 - cosine
    np.fill_diagonal(distance, 0.0)
    return distance


def cluster_prototypes(prototypes: Union[Tensor, np.ndarray]) -> Dendrogram:
    """
    Agglomerative clustering with average linkage on cosine distance.

    The distance between clusters is the mean leaf-pair distance. At each
    step the closest pair of active clusters merges; ties go to the pair
    with the lowest (id_a, id_b).

    Args:
        prototypes: labels x d matrix, one prototype per row

    Returns:
        Dendrogram with ``labels - 1`` merges
    """
    data = prototypes.data if isinstance(prototypes, Tensor) else np.asarray(prototypes)
    if data.ndim != 2 or data.shape[0] < 2:
        raise DimensionError(f"cluster_prototypes needs at least 2 prototype rows, got shape {data.shape}")
    num_leaves = data.shape[0]
    distance = cosine_distance_matrix(data)
    active: Dict[int, List[int]] = {leaf: [leaf] for leaf in range(num_leaves)}
    merges: List[Merge] = []
    for step in range(num_leaves - 1):
        best: Optional[tuple] = None
        for a, b in itertools.combinations(sorted(active), 2):
            height = float(distance[np.ix_(active[a], active[b])].mean())
            if best is None or height < best[0]:
                best = (height, a, b)
        height, a, b = best
        new_id = num_leaves + step
        active[new_id] = active.pop(a) + active.pop(b)
        merges.append(Merge(a, b, height, new_id))
    logger.debug(f"Clustered {num_leaves} prototypes; final height {merges[-1].height:.4f}")
    return Dendrogram(merges, num_leaves)


def _group_pairs(groups: Iterable[Iterable[int]]) -> List[tuple]:
    pairs = set()
    for group in groups:
        for a, b in itertools.combinations(sorted(set(group)), 2):
            pairs.add((a, b))
    return sorted(pairs)


def pair_recovery_score(cluster_map: Dict[int, int], planted_groups: Iterable[Iterable[int]]) -> float:
    """
    Fraction of planted co-binding pairs whose members share a cluster.

    ``planted_groups`` may hold whole groups or individual pairs; every pair
    within a group counts. Returns 1.0 when nothing was planted.
    """
    pairs = _group_pairs(planted_groups)
    missing = {tf for pair in pairs for tf in pair} - set(cluster_map)
    if missing:
        raise ValueError(f"cluster map does not cover labels {sorted(missing)}")
    if not pairs:
        return 1.0
    together = sum(cluster_map[a] == cluster_map[b] for a, b in pairs)
    return together / len(pairs)


def format_cluster_map(cluster_map: Dict[int, int], label_names: Optional[Sequence[str]] = None) -> str:
    lines = ["label\tname\tcluster"]
    for label in sorted(cluster_map):
        name = label_names[label] if label_names else str(label)
        lines.append(f"{label}\t{name}\t{cluster_map[label]}")
    return "\n".join(lines) + "\n"
