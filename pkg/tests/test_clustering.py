"""Agglomerative clustering against closed-form Ward distances.

The merge oracle replays every recorded merge and checks it from raw
points: Ward's distance between clusters A and B has the closed form
sqrt(2|A||B| / (|A|+|B|)) * ||centroid_A - centroid_B||, so both the
recorded distance and the minimality of the chosen pair can be verified
without trusting the Lance-Williams recurrence in the implementation.
"""

import math

import numpy as np
import pytest
from synth import ch_reference, cluster_purity, three_mode_histograms

from gram_sld.clustering import (
    ClusteringError,
    ClusterModel,
    agglomerate,
    calinski_harabasz,
    cut,
    load_cluster_model,
    save_cluster_model,
    select_k,
)


def ward_distance(points_a, points_b):
    ca = np.mean(points_a, axis=0)
    cb = np.mean(points_b, axis=0)
    na, nb = len(points_a), len(points_b)
    return math.sqrt(2.0 * na * nb / (na + nb)) * float(np.linalg.norm(ca - cb))


class TestAgglomerate:
    def test_merges_match_closed_form_ward(self):
        rng = np.random.default_rng(21)
        for _ in range(5):
            n = int(rng.integers(8, 26))
            x = rng.normal(size=(n, 5))
            dendrogram = agglomerate(x)
            members = {i: [i] for i in range(n)}
            for step, merge in enumerate(dendrogram.merges):
                a = members[merge.cluster_a]
                b = members[merge.cluster_b]
                expected = ward_distance(x[a], x[b])
                assert merge.distance == pytest.approx(expected, rel=1e-7, abs=1e-9)
                assert merge.size == len(a) + len(b)
                active = list(members.values())
                best = min(
                    ward_distance(x[p], x[q])
                    for ii, p in enumerate(active)
                    for q in active[ii + 1 :]
                )
                assert expected <= best * (1 + 1e-9) + 1e-12
                members[n + step] = a + b
                del members[merge.cluster_a], members[merge.cluster_b]

    def test_deterministic_tie_break_on_square(self):
        # Unit square: pairs (0,1), (0,2), (1,3), (2,3) all at distance 1;
        # lowest-id pair merges first.
        x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        d = agglomerate(x)
        assert (d.merges[0].cluster_a, d.merges[0].cluster_b) == (0, 1)
        assert d.merges[0].distance == pytest.approx(1.0)
        assert (d.merges[1].cluster_a, d.merges[1].cluster_b) == (2, 3)
        assert d.merges[1].distance == pytest.approx(1.0)
        assert (d.merges[2].cluster_a, d.merges[2].cluster_b) == (4, 5)
        assert d.merges[2].distance == pytest.approx(math.sqrt(2.0))

    def test_repeat_runs_identical(self):
        rng = np.random.default_rng(22)
        x = rng.normal(size=(15, 4))
        assert agglomerate(x).merges == agglomerate(x.copy()).merges

    def test_input_validation(self):
        with pytest.raises(ClusteringError):
            agglomerate(np.zeros(5))
        with pytest.raises(ClusteringError):
            agglomerate(np.zeros((1, 3)))


class TestCut:
    def test_extreme_cuts(self):
        rng = np.random.default_rng(23)
        x = rng.normal(size=(9, 3))
        d = agglomerate(x)
        assert np.array_equal(cut(d, 9), np.arange(9))
        assert np.array_equal(cut(d, 1), np.zeros(9, dtype=np.int64))

    def test_labels_canonical_by_smallest_member(self):
        rng = np.random.default_rng(24)
        x = rng.normal(size=(12, 3))
        d = agglomerate(x)
        for k in range(2, 7):
            labels = cut(d, k)
            first_seen = []
            for lab in labels:
                if lab not in first_seen:
                    first_seen.append(lab)
            assert first_seen == list(range(k))

    def test_k_out_of_range(self):
        d = agglomerate(np.array([[0.0], [1.0], [5.0]]))
        with pytest.raises(ClusteringError):
            cut(d, 0)
        with pytest.raises(ClusteringError):
            cut(d, 4)


class TestCalinskiHarabasz:
    def test_hand_case_exact(self):
        x = np.array([[0.0], [1.0], [10.0], [11.0]])
        assert calinski_harabasz(x, [0, 0, 1, 1]) == 200.0

    def test_matches_definition_on_random_partitions(self):
        rng = np.random.default_rng(25)
        for _ in range(10):
            n = int(rng.integers(6, 51))
            k = int(rng.integers(2, min(6, n)))
            x = rng.normal(size=(n, 4))
            # Force every cluster nonempty, then fill at random.
            labels = np.concatenate(
                [np.arange(k), rng.integers(0, k, size=n - k)]
            )
            got = calinski_harabasz(x, labels)
            want = ch_reference(x, labels)
            assert got == pytest.approx(want, rel=1e-9)

    def test_zero_within_dispersion_is_inf(self):
        x = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0]])
        assert calinski_harabasz(x, [0, 0, 1]) == math.inf

    def test_single_cluster_rejected(self):
        with pytest.raises(ClusteringError):
            calinski_harabasz(np.zeros((4, 2)), [0, 0, 0, 0])


class TestSelectK:
    def test_three_modes_recovered(self):
        rng = np.random.default_rng(26)
        x, true_labels = three_mode_histograms(60, rng)
        model = select_k(agglomerate(x), x, k_min=2, k_max=8)
        assert model.k == 3
        assert not model.forced
        assert cluster_purity(model.labels, true_labels) >= 0.95
        assert set(model.ch_scores) == set(range(2, 9))
        assert max(model.ch_scores, key=model.ch_scores.get) == 3

    def test_tie_breaks_toward_smaller_k(self):
        # Three duplicated points: every K >= 3 has zero within-dispersion,
        # so CH ties at +inf and the smallest K must win.
        x = np.array(
            [[0.0, 0.0], [0.0, 0.0], [10.0, 0.0], [10.0, 0.0], [0.0, 10.0], [0.0, 10.0]]
        )
        model = select_k(agglomerate(x), x, k_min=2, k_max=5)
        assert model.k == 3
        assert model.ch_scores[3] == math.inf
        assert model.ch_scores[4] == math.inf
        assert math.isfinite(model.ch_scores[2])

    def test_force_k_keeps_sweep(self):
        rng = np.random.default_rng(27)
        x, _ = three_mode_histograms(40, rng)
        model = select_k(agglomerate(x), x, k_min=2, k_max=6, force_k=2)
        assert model.k == 2
        assert model.forced
        assert set(model.ch_scores) == set(range(2, 7))
        assert len(np.unique(model.labels)) == 2

    def test_range_validation(self):
        rng = np.random.default_rng(28)
        x = rng.normal(size=(10, 3))
        d = agglomerate(x)
        with pytest.raises(ClusteringError):
            select_k(d, x, k_min=1, k_max=5)
        with pytest.raises(ClusteringError):
            select_k(d, x, k_min=2, k_max=10)
        with pytest.raises(ClusteringError):
            select_k(d, x, k_min=5, k_max=3)
        with pytest.raises(ClusteringError):
            select_k(d, x, k_min=2, k_max=5, force_k=1)

    def test_descriptor_count_mismatch(self):
        rng = np.random.default_rng(29)
        x = rng.normal(size=(8, 3))
        with pytest.raises(ClusteringError):
            select_k(agglomerate(x), x[:-1], k_min=2, k_max=4)


class TestClusterModelIO:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(30)
        x, _ = three_mode_histograms(20, rng)
        ids = tuple(f"s{i:02d}" for i in range(20))
        model = select_k(agglomerate(x), x, k_min=2, k_max=5, ids=ids)
        path = tmp_path / "clusters.json"
        save_cluster_model(model, path)
        again = load_cluster_model(path)
        assert again.k == model.k
        assert again.ids == ids
        assert np.array_equal(again.labels, model.labels)
        assert again.ch_scores == pytest.approx(model.ch_scores)
        assert again.forced == model.forced

    def test_members_and_sizes(self):
        model = ClusterModel(
            k=2,
            labels=np.array([0, 1, 0]),
            ids=("a", "b", "c"),
            ch_scores={2: 5.0},
        )
        assert model.sizes == {0: 2, 1: 1}
        assert model.members(0) == ["a", "c"]
        assert model.assignments == {"a": 0, "b": 1, "c": 0}
