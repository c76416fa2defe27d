"""Classical image anonymizations behind a single per-point / whole-set interface."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve1d

from .dataset import DataPoint, Dataset, ImageRaster, quantize_image, round_half_up
from .util import derive_seed

PER_POINT_METHODS = (
    "identity",
    "gaussian_blur",
    "pixelate",
    "eye_mask",
    "gaussian_noise",
    "block_permute",
)
WHOLE_SET_METHODS = ("k_same_pixel",)
METHODS = PER_POINT_METHODS + WHOLE_SET_METHODS

# Methods whose output depends on the seed. The seed of the configured
# AnonymizationSpec is a defender secret; its other fields are public.
SEEDED_METHODS = frozenset({"gaussian_noise", "block_permute"})

DEFAULT_EYE_ROW_FRAC = 0.4


def _require_int(params: dict, name: str, minimum: int) -> int:
    value = params.get(name)
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ValueError(f"parameter {name!r} must be an integer >= {minimum}")
    return value


@dataclass(frozen=True, eq=False)
class AnonymizationSpec:
    """Method name, its parameters and the (secret) seed for stochastic methods."""

    method: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown anonymization method {self.method!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        p = dict(self.params)
        if self.method == "identity":
            allowed = set()
        elif self.method == "gaussian_blur":
            kernel = _require_int(p, "kernel", 1)
            if kernel % 2 == 0:
                raise ValueError("gaussian_blur kernel must be odd")
            allowed = {"kernel"}
        elif self.method == "pixelate":
            _require_int(p, "block", 1)
            allowed = {"block"}
        elif self.method == "eye_mask":
            value = p.get("band_px")
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ValueError("parameter 'band_px' must be an integer >= 0")
            frac = p.get("row_frac", DEFAULT_EYE_ROW_FRAC)
            if not isinstance(frac, (int, float)) or not 0.0 <= float(frac) <= 1.0:
                raise ValueError("parameter 'row_frac' must lie in [0, 1]")
            allowed = {"band_px", "row_frac"}
        elif self.method == "gaussian_noise":
            sigma = p.get("sigma")
            if not isinstance(sigma, (int, float)) or float(sigma) < 0:
                raise ValueError("parameter 'sigma' must be >= 0")
            allowed = {"sigma"}
        elif self.method == "block_permute":
            _require_int(p, "block", 1)
            allowed = {"block"}
        else:  # k_same_pixel
            _require_int(p, "k", 2)
            allowed = {"k"}
        extra = set(p) - allowed
        if extra:
            raise ValueError(f"unknown parameters for {self.method}: {sorted(extra)}")
        object.__setattr__(self, "params", p)

    @property
    def is_seeded(self) -> bool:
        return self.method in SEEDED_METHODS

    def to_dict(self, include_seed: bool = True) -> dict:
        d = {"method": self.method, "params": {k: self.params[k] for k in sorted(self.params)}}
        if include_seed and self.is_seeded:
            d["seed"] = self.seed
        return d

    def public(self) -> "AnonymizationSpec":
        """The attacker-visible spec: method and parameters, no secret seed."""
        return AnonymizationSpec(self.method, dict(self.params), seed=0)

    def label(self) -> str:
        if not self.params:
            return self.method
        inner = ",".join(f"{k}={self.params[k]}" for k in sorted(self.params))
        return f"{self.method}:{inner}"


# ---------------------------------------------------------------------------
# Per-image operations


def gaussian_kernel1d(kernel: int) -> np.ndarray:
    """Normalized 1-D Gaussian taps of odd length ``kernel`` with sigma = kernel / 6."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError("kernel must be an odd integer >= 1")
    if kernel == 1:
        return np.array([1.0])
    sigma = kernel / 6.0
    xs = np.arange(kernel, dtype=np.float64) - (kernel - 1) / 2.0
    w = np.exp(-(xs**2) / (2.0 * sigma**2))
    return w / w.sum()


def gaussian_blur(img: ImageRaster, kernel: int) -> ImageRaster:
    """Separable Gaussian blur with reflect border handling."""
    w = gaussian_kernel1d(kernel)
    out = np.empty_like(img.pixels)
    for c in range(img.channels):
        tmp = convolve1d(img.pixels[:, :, c], w, axis=0, mode="reflect")
        out[:, :, c] = convolve1d(tmp, w, axis=1, mode="reflect")
    return ImageRaster(np.clip(out, 0.0, 1.0))


def pixelate(img: ImageRaster, block: int) -> ImageRaster:
    """Replace each block x block cell by its mean; edge cells may be ragged."""
    if block < 1:
        raise ValueError("block must be >= 1")
    px = img.pixels
    out = np.empty_like(px)
    h, w = img.height, img.width
    for r in range(0, h, block):
        for c in range(0, w, block):
            cell = px[r : r + block, c : c + block]
            out[r : r + block, c : c + block] = cell.mean(axis=(0, 1))
    return ImageRaster(out)


def eye_mask(img: ImageRaster, band_px: int, row_frac: float = DEFAULT_EYE_ROW_FRAC) -> ImageRaster:
    """Black out a horizontal band starting at round(row_frac * height)."""
    if band_px < 0:
        raise ValueError("band_px must be >= 0")
    out = img.pixels.copy()
    r0 = round_half_up(row_frac * img.height)
    out[r0 : min(r0 + band_px, img.height), :, :] = 0.0
    return ImageRaster(out)


def tile_permutation(n_tiles: int, seed: int) -> np.ndarray:
    """Seeded Fisher-Yates permutation of tile indices."""
    rng = np.random.default_rng(seed)
    perm = np.arange(n_tiles)
    for i in range(n_tiles - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def apply_tile_permutation(img: ImageRaster, block: int, perm: np.ndarray) -> ImageRaster:
    """Rearrange non-overlapping block x block tiles: output slot i gets tile perm[i]."""
    h, w, c = img.dims
    if h % block != 0 or w % block != 0:
        raise ValueError(f"block {block} does not divide image dimensions {w}x{h}")
    th, tw = h // block, w // block
    tiles = (
        img.pixels.reshape(th, block, tw, block, c)
        .swapaxes(1, 2)
        .reshape(th * tw, block, block, c)
    )
    if len(perm) != th * tw:
        raise ValueError("permutation length does not match the tile count")
    out = tiles[perm].reshape(th, tw, block, block, c).swapaxes(1, 2).reshape(h, w, c)
    return ImageRaster(out)


def block_permute(img: ImageRaster, block: int, seed: int) -> ImageRaster:
    h, w = img.height, img.width
    if h % block != 0 or w % block != 0:
        raise ValueError(f"block {block} does not divide image dimensions {w}x{h}")
    perm = tile_permutation((h // block) * (w // block), seed)
    return apply_tile_permutation(img, block, perm)


# ---------------------------------------------------------------------------
# Whole-set method


def k_same_pixel(ds: Dataset, k: int) -> list[DataPoint]:
    """Replace every image by the average of its identity group's mean images.

    Identities are clustered greedily: take the lexicographically smallest
    unassigned identity, group it with its k-1 nearest unassigned neighbors
    (L2 between per-identity mean images, ties broken by label), and let the
    final group absorb the remainder, so group sizes fall in [k, 2k-1].
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    ids = list(ds.identities)
    if len(ids) < k:
        raise ValueError(f"need at least k={k} identities, got {len(ids)}")
    means = {
        i: np.mean([p.image.pixels for p in ds.by_identity[i]], axis=0) for i in ids
    }
    unassigned = list(ids)  # stays sorted
    groups: list[list[str]] = []
    while len(unassigned) >= 2 * k:
        anchor = unassigned.pop(0)
        ranked = sorted(
            unassigned,
            key=lambda other: (np.linalg.norm(means[anchor] - means[other]), other),
        )
        partners = ranked[: k - 1]
        for p in partners:
            unassigned.remove(p)
        groups.append([anchor] + partners)
    groups.append(unassigned)

    points = []
    for group in groups:
        surrogate = ImageRaster(
            np.clip(np.mean([means[i] for i in group], axis=0), 0.0, 1.0)
        )
        for identity in group:
            for p in ds.by_identity[identity]:
                points.append(DataPoint(p.identity, p.instance, surrogate))
    return points


# ---------------------------------------------------------------------------
# Dispatch


def anonymize_point(spec: AnonymizationSpec, point: DataPoint) -> DataPoint:
    """Apply a per-point method; deterministic given (spec, point).

    Stochastic methods key their random stream on (spec.seed, identity,
    instance), so the result does not depend on processing order.
    """
    if spec.method not in PER_POINT_METHODS:
        raise ValueError(f"{spec.method} is a whole-set method, not per-point")
    img = point.image
    if spec.method == "identity":
        out = img
    elif spec.method == "gaussian_blur":
        out = gaussian_blur(img, spec.params["kernel"])
    elif spec.method == "pixelate":
        out = pixelate(img, spec.params["block"])
    elif spec.method == "eye_mask":
        out = eye_mask(
            img,
            spec.params["band_px"],
            spec.params.get("row_frac", DEFAULT_EYE_ROW_FRAC),
        )
    elif spec.method == "gaussian_noise":
        rng = np.random.default_rng(
            derive_seed(spec.seed, point.identity, point.instance)
        )
        noise = rng.normal(0.0, float(spec.params["sigma"]), img.pixels.shape)
        out = ImageRaster(np.clip(img.pixels + noise, 0.0, 1.0))
    else:  # block_permute
        point_seed = derive_seed(spec.seed, point.identity, point.instance)
        out = block_permute(img, spec.params["block"], point_seed)
    return DataPoint(point.identity, point.instance, out)


def anonymize_dataset(spec: AnonymizationSpec, ds: Dataset) -> Dataset:
    """Anonymize a whole dataset; labels and point count are preserved.

    Outputs are snapped to the 8-bit grid so that anonymized datasets cache
    losslessly as PNG directories.
    """
    if spec.method in WHOLE_SET_METHODS:
        points = k_same_pixel(ds, spec.params["k"])
    else:
        points = [anonymize_point(spec, p) for p in ds.points]
    return Dataset(
        [DataPoint(p.identity, p.instance, quantize_image(p.image)) for p in points]
    )
