"""Construction helpers shared by the test modules."""

import numpy as np

from anonbench.dataset import DataPoint, Dataset, ImageRaster


def image(arr) -> ImageRaster:
    return ImageRaster(np.asarray(arr, dtype=np.float64))


def point(identity: str, instance: str, arr) -> DataPoint:
    return DataPoint(identity, instance, image(arr))


def constant_point(identity: str, instance: str, value: float, h: int = 4, w: int = 4) -> DataPoint:
    return point(identity, instance, np.full((h, w), value))


def grid_snap(arr) -> np.ndarray:
    """Snap values to the 8-bit grid, matching dataset quantization."""
    return np.round(np.asarray(arr, dtype=np.float64) * 255.0) / 255.0


def random_image(rng: np.random.Generator, h: int, w: int, channels: int = 1) -> ImageRaster:
    """A random image already on the 8-bit grid."""
    levels = rng.integers(0, 256, size=(h, w, channels))
    return ImageRaster(levels.astype(np.float64) / 255.0)


def identity_embedder(dim: int):
    """An embedder whose projection is the identity map on flattened pixels."""
    from anonbench.recognize import Embedder

    return Embedder(
        mean=np.zeros(dim), components=np.eye(dim), eigenvalues=np.ones(dim)
    )


def small_dataset(n_identities: int = 4, samples: int = 3, h: int = 8, w: int = 8, seed: int = 0) -> Dataset:
    """Random grid-snapped dataset with id/instance labels like the synthesizer's."""
    rng = np.random.default_rng(seed)
    points = []
    for i in range(n_identities):
        for s in range(samples):
            points.append(DataPoint(f"id{i:03d}", f"s{s:02d}", random_image(rng, h, w)))
    return Dataset(points)
