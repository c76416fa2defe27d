"""Identity-labeled image datasets: PNG loading, synthesis, splits, fingerprints.

Canonical fingerprint serialization (version ``anonbench.dataset.v1``):

* header ``b"anonbench.dataset.v1\\n"``
* per data point, sorted by ``(identity, instance)``:
  identity utf-8, ``0x1f``, instance utf-8, ``0x1f``, ``"{w}x{h}x{c}"`` utf-8,
  newline, then the pixels quantized to 16 bit (``round(v * 65535)``) as
  big-endian uint16 in row-major order with interleaved channels, newline.
* fingerprint = SHA-256 hex digest of that stream.

Pixels live in memory as reals in [0, 1]. Quantization happens only for
hashing and for 8-bit PNG materialization; values that already sit on the
8-bit grid (k/255) survive a save/load round trip with the fingerprint
unchanged, which is what makes PNG-backed caching lossless.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .util import derive_seed

FINGERPRINT_HEADER = b"anonbench.dataset.v1\n"


def round_half_up(value: float) -> int:
    """Round with .5 going up, so split sizes do not depend on banker's rounding."""
    return int(math.floor(value + 0.5))


@dataclass(frozen=True, eq=False)
class ImageRaster:
    """Pixel grid with intensities in [0, 1], stored as (height, width, channels)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, np.newaxis]
        if px.ndim != 3:
            raise ValueError("pixels must form a (height, width, channels) array")
        if px.shape[2] not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {px.shape[2]}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image dimensions must be at least 1x1")
        if not np.all((px >= 0.0) & (px <= 1.0)):
            raise ValueError("intensities must lie in [0, 1]")
        px = np.ascontiguousarray(px)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.pixels.shape


@dataclass(frozen=True, eq=False)
class DataPoint:
    identity: str
    instance: str
    image: ImageRaster

    def __post_init__(self):
        if not self.identity or not self.instance:
            raise ValueError("identity and instance labels must be non-empty")

    @property
    def key(self) -> tuple[str, str]:
        return (self.identity, self.instance)


class Dataset:
    """Immutable, canonically ordered collection of labeled images."""

    def __init__(self, points):
        pts = sorted(points, key=lambda p: (p.identity, p.instance))
        if not pts:
            raise ValueError("empty dataset")
        keys = [p.key for p in pts]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (identity, instance) pair")
        dims = {p.image.dims for p in pts}
        if len(dims) != 1:
            raise ValueError(
                "mixed image dimensions: all images in one dataset must share "
                "width, height and channels"
            )
        self.points: tuple[DataPoint, ...] = tuple(pts)
        self.dims: tuple[int, int, int] = pts[0].image.dims
        by_id: dict[str, list[DataPoint]] = {}
        for p in pts:
            by_id.setdefault(p.identity, []).append(p)
        self.by_identity: dict[str, tuple[DataPoint, ...]] = {
            i: tuple(v) for i, v in by_id.items()
        }
        self.identities: tuple[str, ...] = tuple(sorted(by_id))
        self.fingerprint: str = _fingerprint_of_points(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def keys(self) -> tuple[tuple[str, str], ...]:
        return tuple(p.key for p in self.points)

    @property
    def point_map(self) -> dict[tuple[str, str], DataPoint]:
        return {p.key: p for p in self.points}


def _fingerprint_of_points(points) -> str:
    digest = hashlib.sha256()
    digest.update(FINGERPRINT_HEADER)
    for p in points:
        h, w, c = p.image.dims
        digest.update(p.identity.encode("utf-8"))
        digest.update(b"\x1f")
        digest.update(p.instance.encode("utf-8"))
        digest.update(b"\x1f")
        digest.update(f"{w}x{h}x{c}".encode("utf-8"))
        digest.update(b"\n")
        quantized = np.round(p.image.pixels * 65535.0).astype(">u2")
        digest.update(quantized.tobytes())
        digest.update(b"\n")
    return digest.hexdigest()


def dataset_fingerprint(ds: Dataset) -> str:
    """SHA-256 over the canonical serialization documented in the module docstring."""
    return _fingerprint_of_points(ds.points)


def quantize_image(img: ImageRaster) -> ImageRaster:
    """Snap intensities to the 8-bit grid (k/255) used by PNG materialization."""
    return ImageRaster(np.round(img.pixels * 255.0) / 255.0)


# ---------------------------------------------------------------------------
# PNG I/O


def png_bytes(img: ImageRaster) -> bytes:
    arr = np.round(img.pixels * 255.0).astype(np.uint8)
    if img.channels == 1:
        pil = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr, mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def image_from_png_bytes(data: bytes) -> ImageRaster:
    try:
        pil = Image.open(io.BytesIO(data))
        pil.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise ValueError(f"undecodable PNG: {exc}") from exc
    if pil.mode not in ("L", "RGB"):
        raise ValueError(f"unsupported PNG mode {pil.mode!r}: expected 8-bit gray or RGB")
    arr = np.asarray(pil, dtype=np.uint8).astype(np.float64) / 255.0
    return ImageRaster(arr)


def parse_png_name(name: str) -> tuple[str, str]:
    """Split '<identity>_<instance>.png' at the first underscore."""
    stem = name[:-4] if name.endswith(".png") else name
    identity, sep, instance = stem.partition("_")
    if not sep or not identity or not instance:
        raise ValueError(
            f"unparsable filename {name!r}: expected <identity>_<instance>.png"
        )
    return identity, instance


def load_dataset(root) -> Dataset:
    """Load every *.png under root into a dataset, labels taken from filenames."""
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"dataset directory not found: {root}")
    files = sorted(root.glob("*.png"))
    if not files:
        raise ValueError(f"empty dataset: no PNG files in {root}")
    points = []
    for path in files:
        identity, instance = parse_png_name(path.name)
        try:
            img = image_from_png_bytes(path.read_bytes())
        except ValueError as exc:
            raise ValueError(f"{path.name}: {exc}") from exc
        points.append(DataPoint(identity, instance, img))
    return Dataset(points)


def save_dataset(ds: Dataset, root) -> None:
    """Materialize a dataset as 8-bit PNG files, fingerprint-stable for 8-bit data."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for p in ds.points:
        if "_" in p.identity:
            raise ValueError(f"identity {p.identity!r} must not contain an underscore")
        (root / f"{p.identity}_{p.instance}.png").write_bytes(png_bytes(p.image))


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    n_identities: int
    samples_per_identity: int
    width: int
    height: int
    intra_noise_sigma: float
    seed: int

    def __post_init__(self):
        if self.n_identities < 1:
            raise ValueError("n_identities must be >= 1")
        if self.samples_per_identity < 1:
            raise ValueError("samples_per_identity must be >= 1")
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be >= 1")
        if self.intra_noise_sigma < 0:
            raise ValueError("intra_noise_sigma must be >= 0")

    def to_dict(self) -> dict:
        return {
            "n_identities": self.n_identities,
            "samples_per_identity": self.samples_per_identity,
            "width": self.width,
            "height": self.height,
            "intra_noise_sigma": self.intra_noise_sigma,
            "seed": self.seed,
        }


def _identity_base(spec: SyntheticSpec, index: int) -> np.ndarray:
    """Deterministic per-identity pattern: Gaussian blobs plus sinusoidal gratings."""
    rng = np.random.default_rng(derive_seed(spec.seed, "base", index))
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = np.full((h, w), 0.5)
    for _ in range(4):
        cx = rng.uniform(0.15, 0.85) * w
        cy = rng.uniform(0.15, 0.85) * h
        sigma = rng.uniform(0.06, 0.16) * min(h, w)
        amp = rng.uniform(0.18, 0.35) * (1.0 if rng.random() < 0.5 else -1.0)
        base += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma**2))
    for _ in range(2):
        fx = rng.uniform(1.0, 4.0) / w
        fy = rng.uniform(1.0, 4.0) / h
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.05, 0.12)
        base += amp * np.sin(2.0 * np.pi * (fx * xx + fy * yy) + phase)
    return np.clip(base, 0.0, 1.0)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Generate distinct identity patterns with per-sample Gaussian pixel noise.

    Samples are snapped to the 8-bit grid so that writing the dataset out as
    PNG and reloading reproduces the exact fingerprint.
    """
    points = []
    for i in range(spec.n_identities):
        base = _identity_base(spec, i)
        label = f"id{i:03d}"
        for s in range(spec.samples_per_identity):
            rng = np.random.default_rng(derive_seed(spec.seed, "noise", i, s))
            noisy = base + rng.normal(0.0, spec.intra_noise_sigma, base.shape)
            pixels = np.round(np.clip(noisy, 0.0, 1.0) * 255.0) / 255.0
            points.append(DataPoint(label, f"s{s:02d}", ImageRaster(pixels)))
    return Dataset(points)


# ---------------------------------------------------------------------------
# Subsetting and splits


def subset_by_identities(ds: Dataset, identities) -> Dataset:
    wanted = set(identities)
    unknown = wanted - set(ds.identities)
    if unknown:
        raise ValueError(f"unknown identities: {sorted(unknown)}")
    return Dataset([p for p in ds.points if p.identity in wanted])


def subset_by_keys(ds: Dataset, keys) -> Dataset:
    wanted = set(keys)
    unknown = wanted - set(ds.keys())
    if unknown:
        raise ValueError(f"unknown keys: {sorted(unknown)}")
    return Dataset([p for p in ds.points if p.key in wanted])


def split_disjoint_identities(
    ds: Dataset, fraction: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Split into two identity-disjoint parts; the first gets round(fraction * n).

    Both sides are clamped to hold at least one identity. The assignment is a
    seeded shuffle of the sorted identity labels, so it depends only on the
    label set, not on pixel data.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    ids = list(ds.identities)
    n = len(ids)
    if n < 2:
        raise ValueError("need at least 2 identities to split")
    take = min(max(round_half_up(fraction * n), 1), n - 1)
    rng = np.random.default_rng(seed)
    shuffled = [ids[i] for i in rng.permutation(n)]
    first = set(shuffled[:take])
    second = set(shuffled[take:])
    return subset_by_identities(ds, first), subset_by_identities(ds, second)


def split_enroll_test(
    ds: Dataset, fraction: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Per-identity instance split into (enroll, test), each side non-empty.

    The draw consumes randomness per identity in sorted label order and looks
    only at instance labels, so datasets that share keys split identically
    under the same seed regardless of their pixel content.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    enroll_keys: set[tuple[str, str]] = set()
    test_keys: set[tuple[str, str]] = set()
    for identity in ds.identities:
        instances = sorted(p.instance for p in ds.by_identity[identity])
        m = len(instances)
        if m < 2:
            raise ValueError(
                f"identity {identity!r} has {m} sample(s): need at least 2 to split"
            )
        take = min(max(round_half_up(fraction * m), 1), m - 1)
        shuffled = [instances[i] for i in rng.permutation(m)]
        for inst in shuffled[:take]:
            enroll_keys.add((identity, inst))
        for inst in shuffled[take:]:
            test_keys.add((identity, inst))
    return subset_by_keys(ds, enroll_keys), subset_by_keys(ds, test_keys)
