import numpy as np
import pytest

from anonbench.dataset import Dataset
from anonbench.selection import SelectionSpec, distinctive_scores, select_identities
from helpers import identity_embedder, point


def pair_dataset():
    """Four identities with two 1x2 images each; a and b sit far from c and d."""
    return Dataset(
        [
            point("a", "1", np.array([[0.0, 0.0]])),
            point("a", "2", np.array([[0.0, 0.1]])),
            point("b", "1", np.array([[1.0, 1.0]])),
            point("b", "2", np.array([[1.0, 0.9]])),
            point("c", "1", np.array([[0.5, 0.5]])),
            point("c", "2", np.array([[0.5, 0.55]])),
            point("d", "1", np.array([[0.6, 0.5]])),
            point("d", "2", np.array([[0.6, 0.55]])),
        ]
    )


def brute_force_scores(ds):
    """Same statistic computed with plain loops over raw pixel vectors."""
    vectors = {
        identity: [p.image.pixels.reshape(-1) for p in points]
        for identity, points in ds.by_identity.items()
    }
    centroids = {i: np.mean(v, axis=0) for i, v in vectors.items()}
    scores = {}
    for identity, vecs in vectors.items():
        pair_dists = []
        for i in range(len(vecs)):
            for j in range(i + 1, len(vecs)):
                pair_dists.append(float(np.linalg.norm(vecs[i] - vecs[j])))
        cohesion = float(np.mean(pair_dists)) if pair_dists else 0.0
        separation = min(
            float(np.linalg.norm(centroids[identity] - centroids[other]))
            for other in vectors
            if other != identity
        )
        scores[identity] = separation / (cohesion + 1e-9)
    return scores


class TestDistinctiveScores:
    def test_matches_brute_force(self):
        ds = pair_dataset()
        scores = distinctive_scores(identity_embedder(2), ds)
        expected = brute_force_scores(ds)
        assert set(scores) == set(expected)
        for identity in expected:
            assert scores[identity] == pytest.approx(expected[identity], rel=1e-12)

    def test_hand_computed_values(self):
        ds = pair_dataset()
        scores = distinctive_scores(identity_embedder(2), ds)
        # a: cohesion 0.1, nearest centroid is c's (0.5, 0.525) from (0.0, 0.05)
        assert scores["a"] == pytest.approx(
            float(np.hypot(0.5, 0.475)) / (0.1 + 1e-9), rel=1e-9
        )
        # c and d: cohesion 0.05, nearest centroids 0.1 apart
        assert scores["c"] == pytest.approx(0.1 / (0.05 + 1e-9), rel=1e-9)
        assert scores["d"] == pytest.approx(0.1 / (0.05 + 1e-9), rel=1e-9)
        assert scores["a"] > scores["c"] and scores["b"] > scores["c"]

    def test_singleton_identity_has_zero_cohesion(self):
        ds = Dataset(
            [
                point("a", "1", np.array([[0.0, 0.0]])),
                point("b", "1", np.array([[1.0, 1.0]])),
                point("b", "2", np.array([[1.0, 0.9]])),
            ]
        )
        scores = distinctive_scores(identity_embedder(2), ds)
        separation_a = float(np.hypot(1.0, 0.95))
        assert scores["a"] == pytest.approx(separation_a / 1e-9, rel=1e-6)

    def test_needs_two_identities(self):
        ds = Dataset([point("a", "1", np.array([[0.0, 0.0]]))])
        with pytest.raises(ValueError, match="at least 2"):
            distinctive_scores(identity_embedder(2), ds)


class TestSelect:
    def test_distinctive_picks_most_separable(self):
        ds = pair_dataset()
        spec = SelectionSpec("distinctive", 2)
        out = select_identities(spec, identity_embedder(2), ds)
        assert out.identities == ("a", "b")

    def test_keeps_every_instance_of_chosen_identities(self):
        ds = pair_dataset()
        out = select_identities(SelectionSpec("distinctive", 3), identity_embedder(2), ds)
        assert len(out.identities) == 3
        for identity in out.identities:
            original = [p.key for p in ds.by_identity[identity]]
            kept = [p.key for p in out.by_identity[identity]]
            assert kept == original

    def test_score_ties_resolve_lexicographically(self):
        # equilateral triangle of singletons: all scores equal
        ds = Dataset(
            [
                point("e", "1", np.array([[0.0, 0.0]])),
                point("f", "1", np.array([[1.0, 0.0]])),
                point("g", "1", np.array([[0.5, 0.8660254037844386]])),
            ]
        )
        out = select_identities(SelectionSpec("distinctive", 2), identity_embedder(2), ds)
        assert out.identities == ("e", "f")

    def test_random_strategy_is_seeded(self):
        ds = pair_dataset()
        first = select_identities(SelectionSpec("random", 2, seed=1), identity_embedder(2), ds)
        again = select_identities(SelectionSpec("random", 2, seed=1), identity_embedder(2), ds)
        assert first.identities == again.identities
        assert first.fingerprint == again.fingerprint
        others = {
            select_identities(
                SelectionSpec("random", 2, seed=s), identity_embedder(2), ds
            ).identities
            for s in range(10)
        }
        assert len(others) > 1

    def test_random_strategy_returns_exact_count(self):
        ds = pair_dataset()
        out = select_identities(SelectionSpec("random", 3, seed=0), identity_embedder(2), ds)
        assert len(out.identities) == 3
        assert len(out.points) == 6

    def test_rejects_oversized_request(self):
        ds = pair_dataset()
        with pytest.raises(ValueError, match="cannot select"):
            select_identities(SelectionSpec("distinctive", 5), identity_embedder(2), ds)


class TestSpec:
    def test_validation(self):
        with pytest.raises(ValueError, match="unknown selection strategy"):
            SelectionSpec("best", 2)
        with pytest.raises(ValueError, match="n_identities"):
            SelectionSpec("distinctive", 1)
        with pytest.raises(ValueError, match="n_identities"):
            SelectionSpec("distinctive", 2.5)

    def test_to_dict(self):
        spec = SelectionSpec("distinctive", 4, seed=3)
        assert spec.to_dict() == {"strategy": "distinctive", "n_identities": 4, "seed": 3}
