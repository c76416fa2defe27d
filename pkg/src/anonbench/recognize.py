"""Closed-set recognition: PCA embedding, gallery enrollment, classification."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, ImageRaster
from .util import pack_arrays, unpack_arrays

CLASSIFIERS = ("nearest_centroid", "knn")
DEFAULT_COMPONENTS = 40
DEFAULT_KNN_K = 5


@dataclass(eq=False)
class Embedder:
    """Linear projection fitted by PCA: embed(x) = (x - mean) @ components."""

    mean: np.ndarray  # (pixel_dim,)
    components: np.ndarray  # (pixel_dim, n_components), orthonormal columns
    eigenvalues: np.ndarray  # (n_components,), descending

    @property
    def n_components(self) -> int:
        return self.components.shape[1]


def embedder_to_bytes(e: Embedder) -> bytes:
    return pack_arrays(
        {"mean": e.mean, "components": e.components, "eigenvalues": e.eigenvalues}, {}
    )


def embedder_from_bytes(blob: bytes) -> Embedder:
    arrays, _ = unpack_arrays(blob)
    return Embedder(arrays["mean"], arrays["components"], arrays["eigenvalues"])


def _flatten(ds: Dataset) -> np.ndarray:
    return np.stack([p.image.pixels.reshape(-1) for p in ds.points])


def fit_pca(train: Dataset, n_components: int) -> Embedder:
    """Fit a PCA embedder on the training images.

    Uses the snapshot trick (eigendecomposition of the sample Gram matrix)
    when there are fewer samples than pixels, and the dense sample covariance
    otherwise; both yield the same spectrum on the shared rank. Components are
    ordered by descending eigenvalue, with each column's sign fixed so its
    largest-magnitude entry is positive. The component count is clamped to
    min(n_samples - 1, pixel_dim) and to the numerically positive spectrum.
    """
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    x = _flatten(train)
    n, dim = x.shape
    if n < 2:
        raise ValueError("training set needs at least 2 points")
    mean = x.mean(axis=0)
    centered = x - mean
    if n <= dim:
        gram = centered @ centered.T / (n - 1)
        values, vectors = np.linalg.eigh(gram)
        order = np.argsort(values)[::-1]
        values, vectors = values[order], vectors[:, order]
        tol = 1e-12 * max(float(values[0]), 1.0)
        keep = values > tol
        basis = centered.T @ vectors[:, keep]
        norms = np.linalg.norm(basis, axis=0)
        basis = basis / norms
        values = values[keep]
    else:
        cov = centered.T @ centered / (n - 1)
        values, basis = np.linalg.eigh(cov)
        order = np.argsort(values)[::-1]
        values, basis = values[order], basis[:, order]
        tol = 1e-12 * max(float(values[0]), 1.0)
        keep = values > tol
        basis, values = basis[:, keep], values[keep]
    limit = min(n_components, n - 1, dim)
    if basis.shape[1] == 0:
        # Degenerate (all-constant) training data: fall back to one canonical axis.
        basis = np.zeros((dim, 1))
        basis[0, 0] = 1.0
        values = np.zeros(1)
    else:
        basis = basis[:, :limit]
        values = values[:limit]
    flips = np.where(basis[np.abs(basis).argmax(axis=0), np.arange(basis.shape[1])] < 0, -1.0, 1.0)
    return Embedder(mean=mean, components=basis * flips, eigenvalues=values)


def embed(e: Embedder, img: ImageRaster) -> np.ndarray:
    flat = img.pixels.reshape(-1)
    if flat.shape[0] != e.mean.shape[0]:
        raise ValueError(
            f"dimension mismatch: embedder expects {e.mean.shape[0]} pixels, got {flat.shape[0]}"
        )
    return (flat - e.mean) @ e.components


@dataclass(eq=False)
class Gallery:
    """Enrolled templates per identity plus their centroids, identities sorted."""

    identities: tuple[str, ...]
    templates: dict[str, np.ndarray]  # identity -> (n_i, n_components)
    centroids: dict[str, np.ndarray]  # identity -> (n_components,)

    @property
    def n_identities(self) -> int:
        return len(self.identities)


def gallery_to_bytes(g: Gallery) -> bytes:
    stacked = np.vstack([g.templates[i] for i in g.identities])
    counts = np.array([len(g.templates[i]) for i in g.identities], dtype=np.int64)
    centroids = np.vstack([g.centroids[i] for i in g.identities])
    return pack_arrays(
        {"templates": stacked, "counts": counts, "centroids": centroids},
        {"identities": list(g.identities)},
    )


def gallery_from_bytes(blob: bytes) -> Gallery:
    arrays, meta = unpack_arrays(blob)
    identities = tuple(meta["identities"])
    templates = {}
    offset = 0
    for identity, count in zip(identities, arrays["counts"]):
        templates[identity] = arrays["templates"][offset : offset + int(count)]
        offset += int(count)
    centroids = {i: arrays["centroids"][k] for k, i in enumerate(identities)}
    return Gallery(identities, templates, centroids)


def enroll(e: Embedder, enroll_set: Dataset) -> Gallery:
    templates = {
        identity: np.stack([embed(e, p.image) for p in points])
        for identity, points in enroll_set.by_identity.items()
    }
    centroids = {identity: t.mean(axis=0) for identity, t in templates.items()}
    return Gallery(enroll_set.identities, templates, centroids)


def classify(gallery: Gallery, classifier: str, k: int, probe: np.ndarray) -> str:
    """Predict the identity of one embedded probe.

    nearest_centroid picks the closest centroid; knn takes a majority vote
    over the k nearest templates with ties broken by smaller summed distance
    and then lexicographically smaller identity.
    """
    if classifier == "nearest_centroid":
        best = None
        for identity in gallery.identities:
            d = float(np.linalg.norm(probe - gallery.centroids[identity]))
            if best is None or d < best[0]:
                best = (d, identity)
        return best[1]
    if classifier != "knn":
        raise ValueError(f"unknown classifier {classifier!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = []
    for identity in gallery.identities:
        for t in gallery.templates[identity]:
            ranked.append((float(np.linalg.norm(probe - t)), identity))
    ranked.sort()
    nearest = ranked[:k]
    votes: dict[str, int] = {}
    sums: dict[str, float] = {}
    for d, identity in nearest:
        votes[identity] = votes.get(identity, 0) + 1
        sums[identity] = sums.get(identity, 0.0) + d
    return min(votes, key=lambda i: (-votes[i], sums[i], i))


def classifier_id(classifier: str, k: int) -> str:
    return classifier if classifier == "nearest_centroid" else f"knn{k}"


@dataclass(eq=False)
class RecognitionReport:
    classifier: str
    accuracy: float
    balanced_accuracy: float
    n_identities: int
    predictions: tuple[tuple[str, str, str, bool], ...]  # (identity, instance, predicted, correct)

    def to_dict(self) -> dict:
        return {
            "classifier": self.classifier,
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "n_identities": self.n_identities,
            "predictions": [list(p) for p in self.predictions],
        }


def evaluate_closed_set(
    e: Embedder, gallery: Gallery, classifier: str, k: int, test: Dataset
) -> RecognitionReport:
    """Classify every test point against the gallery and report both accuracies."""
    unknown = set(test.identities) - set(gallery.identities)
    if unknown:
        raise ValueError(f"test identities not enrolled: {sorted(unknown)}")
    predictions = []
    per_identity: dict[str, list[bool]] = {}
    for p in test.points:
        predicted = classify(gallery, classifier, k, embed(e, p.image))
        correct = predicted == p.identity
        predictions.append((p.identity, p.instance, predicted, correct))
        per_identity.setdefault(p.identity, []).append(correct)
    accuracy = float(np.mean([c for _, _, _, c in predictions]))
    balanced = float(np.mean([np.mean(flags) for flags in per_identity.values()]))
    return RecognitionReport(
        classifier=classifier_id(classifier, k),
        accuracy=accuracy,
        balanced_accuracy=balanced,
        n_identities=gallery.n_identities,
        predictions=tuple(predictions),
    )


def best_attack(reports) -> RecognitionReport:
    """The strongest recognizer: highest accuracy, ties to the smaller classifier id."""
    reports = list(reports)
    if not reports:
        raise ValueError("no recognition reports")
    return min(reports, key=lambda r: (-r.accuracy, r.classifier))


# ---------------------------------------------------------------------------
# CSV codec for cached reports


def report_to_csv(report: RecognitionReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [
            "row",
            "identity",
            "instance",
            "predicted",
            "correct",
            "classifier",
            "accuracy",
            "balanced_accuracy",
            "n_identities",
        ]
    )
    for identity, instance, predicted, correct in report.predictions:
        writer.writerow(["probe", identity, instance, predicted, int(correct), "", "", "", ""])
    writer.writerow(
        [
            "summary",
            "",
            "",
            "",
            "",
            report.classifier,
            repr(report.accuracy),
            repr(report.balanced_accuracy),
            report.n_identities,
        ]
    )
    return buf.getvalue()


def report_from_csv(text: str) -> RecognitionReport:
    rows = list(csv.reader(io.StringIO(text)))
    predictions = []
    summary = None
    for row in rows[1:]:
        if row[0] == "probe":
            predictions.append((row[1], row[2], row[3], bool(int(row[4]))))
        elif row[0] == "summary":
            summary = row
    if summary is None:
        raise ValueError("report CSV lacks a summary row")
    return RecognitionReport(
        classifier=summary[5],
        accuracy=float(summary[6]),
        balanced_accuracy=float(summary[7]),
        n_identities=int(summary[8]),
        predictions=tuple(predictions),
    )
