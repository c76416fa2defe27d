"""Pick the identities a recognizer can separate best: compact and isolated."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, subset_by_identities
from .recognize import Embedder, embed

STRATEGIES = ("distinctive", "random")
_COHESION_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class SelectionSpec:
    strategy: str
    n_identities: int
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown selection strategy {self.strategy!r}")
        if not isinstance(self.n_identities, int) or self.n_identities < 2:
            raise ValueError("n_identities must be an integer >= 2")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "n_identities": self.n_identities,
            "seed": self.seed,
        }


def distinctive_scores(e: Embedder, ds: Dataset) -> dict[str, float]:
    """Separation / cohesion score per identity in embedding space.

    Cohesion is the mean pairwise distance among an identity's embeddings
    (0 for singletons); separation is the distance to the nearest other
    identity centroid. Higher scores mean tight clusters far from everyone
    else, which a recognizer can tell apart most reliably.
    """
    if len(ds.identities) < 2:
        raise ValueError("need at least 2 identities to score")
    embeddings = {
        identity: np.stack([embed(e, p.image) for p in points])
        for identity, points in ds.by_identity.items()
    }
    centroids = {i: v.mean(axis=0) for i, v in embeddings.items()}
    scores = {}
    for identity in ds.identities:
        vecs = embeddings[identity]
        m = len(vecs)
        if m < 2:
            cohesion = 0.0
        else:
            dists = [
                float(np.linalg.norm(vecs[a] - vecs[b]))
                for a in range(m)
                for b in range(a + 1, m)
            ]
            cohesion = float(np.mean(dists))
        separation = min(
            float(np.linalg.norm(centroids[identity] - centroids[other]))
            for other in ds.identities
            if other != identity
        )
        scores[identity] = separation / (cohesion + _COHESION_EPS)
    return scores


def select_identities(spec: SelectionSpec, e: Embedder, ds: Dataset) -> Dataset:
    """Keep every point of the n chosen identities; ties resolve lexicographically."""
    if len(ds.identities) < spec.n_identities:
        raise ValueError(
            f"dataset has {len(ds.identities)} identities, "
            f"cannot select {spec.n_identities}"
        )
    if spec.strategy == "distinctive":
        scores = distinctive_scores(e, ds)
        chosen = sorted(ds.identities, key=lambda i: (-scores[i], i))[: spec.n_identities]
    else:
        rng = np.random.default_rng(spec.seed)
        shuffled = [ds.identities[i] for i in rng.permutation(len(ds.identities))]
        chosen = shuffled[: spec.n_identities]
    return subset_by_identities(ds, chosen)
