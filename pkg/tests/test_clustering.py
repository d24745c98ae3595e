"""Tests for prototype clustering."""

import numpy as np
import pytest
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import pdist

from pmn.clustering import (
    Dendrogram,
    Merge,
    cluster_prototypes,
    cosine_distance_matrix,
    format_cluster_map,
    pair_recovery_score,
)
from pmn.errors import DimensionError
from pmn.tensor import Tensor


def test_matches_scipy_average_linkage(rng):
    """Test merges and heights against scipy on random prototypes."""
    for _ in range(20):
        prototypes = rng.normal(size=(int(rng.integers(2, 9)), 5))
        dendrogram = cluster_prototypes(prototypes)
        reference = linkage(pdist(prototypes, metric="cosine"), method="average")
        np.testing.assert_allclose(dendrogram.heights, reference[:, 2], atol=1e-10)
        for merge, row in zip(dendrogram.merges, reference):
            assert {merge.a, merge.b} == {int(row[0]), int(row[1])}


def test_structure_and_tie_breaking():
    """Test merge ids, lowest-pair tie breaking and identical prototypes."""
    prototypes = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 2.0]])
    dendrogram = cluster_prototypes(Tensor(prototypes))
    assert dendrogram.merges[0] == Merge(0, 1, 0.0, 4)
    assert dendrogram.merges[1] == Merge(2, 3, 0.0, 5)
    assert dendrogram.merges[2].new_id == 6
    assert dendrogram.merges[2].height == pytest.approx(1.0)
    assert len(dendrogram) == 3


def test_cut():
    """Test cluster assignment at several k."""
    prototypes = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9], [-1.0, 0.0]])
    dendrogram = cluster_prototypes(prototypes)
    assert dendrogram.cut(5) == {i: i for i in range(5)}
    assert dendrogram.cut(3) == {0: 0, 1: 0, 2: 1, 3: 1, 4: 2}
    assert set(dendrogram.cut(1).values()) == {0}
    with pytest.raises(ValueError):
        dendrogram.cut(0)
    with pytest.raises(ValueError):
        dendrogram.cut(6)


def test_text_round_trip(tmp_path):
    """Test writing and re-reading a dendrogram."""
    dendrogram = cluster_prototypes(np.random.default_rng(0).normal(size=(6, 3)))
    path = dendrogram.write(tmp_path / "dendrogram.tsv")
    assert Dendrogram.from_text(path.read_text(encoding="utf-8")) == dendrogram


def test_requires_two_prototypes():
    """Test the minimum input size."""
    with pytest.raises(DimensionError):
        cluster_prototypes(np.ones((1, 3)))


def test_cosine_distance_matrix_zero_rows():
    """Test that zero rows sit at distance 1 from everything else."""
    distance = cosine_distance_matrix(np.array([[0.0, 0.0], [1.0, 0.0]]))
    np.testing.assert_allclose(distance, [[0.0, 1.0], [1.0, 0.0]])


def test_pair_recovery_score():
    """Test recovery of planted groups and pairs."""
    cluster_map = {0: 0, 1: 0, 2: 1, 3: 1, 4: 2}
    assert pair_recovery_score(cluster_map, [(0, 1), (2, 3)]) == 1.0
    assert pair_recovery_score(cluster_map, [(0, 1, 2)]) == pytest.approx(1.0 / 3.0)
    assert pair_recovery_score(cluster_map, []) == 1.0
    with pytest.raises(ValueError):
        pair_recovery_score(cluster_map, [(0, 7)])


def test_format_cluster_map():
    """Test the cluster table."""
    text = format_cluster_map({0: 1, 1: 0}, ["a", "b"])
    assert text.splitlines() == ["label\tname\tcluster", "0\ta\t1", "1\tb\t0"]
