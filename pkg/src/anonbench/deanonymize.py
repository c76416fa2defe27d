"""Attacker-side reversal: deconvolution, interpolation and learned patch regression.

All de-anonymizers are trained or parameterized only from attacker-visible
information: pairs of (clear, anonymized) attacker images plus the public part
of the anonymization spec (method and parameters, never its seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.interpolate import InterpolatedUnivariateSpline, RectBivariateSpline

from .anonymize import AnonymizationSpec, gaussian_kernel1d
from .dataset import DataPoint, Dataset, ImageRaster, quantize_image
from .util import pack_arrays, unpack_arrays

METHODS = ("none", "wiener", "richardson_lucy", "bicubic_sharpen", "patch_regressor")

MAX_TRAIN_PATCHES = 200_000
DEFAULT_PATCH = 9
DEFAULT_RIDGE = 1e-4
DEFAULT_NSR = 1e-3
DEFAULT_ITERATIONS = 30
_RL_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class DeanonymizationSpec:
    method: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown de-anonymization method {self.method!r}")
        p = dict(self.params)
        if self.method == "none":
            allowed = set()
        elif self.method == "wiener":
            nsr = p.get("nsr", DEFAULT_NSR)
            if not isinstance(nsr, (int, float)) or float(nsr) <= 0:
                raise ValueError("parameter 'nsr' must be > 0")
            p.setdefault("nsr", DEFAULT_NSR)
            allowed = {"nsr", "kernel"}
        elif self.method == "richardson_lucy":
            iters = p.get("iterations", DEFAULT_ITERATIONS)
            if not isinstance(iters, int) or isinstance(iters, bool) or iters < 1:
                raise ValueError("parameter 'iterations' must be an integer >= 1")
            p.setdefault("iterations", DEFAULT_ITERATIONS)
            allowed = {"iterations", "kernel"}
        elif self.method == "bicubic_sharpen":
            block = p.get("block")
            if block is not None and (
                not isinstance(block, int) or isinstance(block, bool) or block < 1
            ):
                raise ValueError("parameter 'block' must be an integer >= 1")
            allowed = {"block"}
        else:  # patch_regressor
            patch = p.get("patch", DEFAULT_PATCH)
            if not isinstance(patch, int) or isinstance(patch, bool) or patch < 1 or patch % 2 == 0:
                raise ValueError("parameter 'patch' must be an odd integer >= 1")
            ridge = p.get("ridge", DEFAULT_RIDGE)
            if not isinstance(ridge, (int, float)) or float(ridge) < 0:
                raise ValueError("parameter 'ridge' must be >= 0")
            p.setdefault("patch", DEFAULT_PATCH)
            p.setdefault("ridge", DEFAULT_RIDGE)
            allowed = {"patch", "ridge"}
        if "kernel" in allowed and "kernel" in p:
            k = p["kernel"]
            if not isinstance(k, int) or isinstance(k, bool) or k < 1 or k % 2 == 0:
                raise ValueError("parameter 'kernel' must be an odd integer >= 1")
        extra = set(p) - allowed
        if extra:
            raise ValueError(f"unknown parameters for {self.method}: {sorted(extra)}")
        object.__setattr__(self, "params", p)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "params": {k: self.params[k] for k in sorted(self.params)},
        }


@dataclass(eq=False)
class DeanonymizerModel:
    """Trained reversal model; only the fields relevant to its method are set."""

    method: str
    params: dict
    psf: np.ndarray | None = None
    weights: np.ndarray | None = None  # (channels, patch*patch + 1)
    patch: int = 0
    block: int = 1
    clear_fingerprint: str = ""
    anon_fingerprint: str = ""


def model_to_bytes(model: DeanonymizerModel) -> bytes:
    arrays = {}
    if model.psf is not None:
        arrays["psf"] = model.psf
    if model.weights is not None:
        arrays["weights"] = model.weights
    meta = {
        "method": model.method,
        "params": model.params,
        "patch": model.patch,
        "block": model.block,
        "clear_fingerprint": model.clear_fingerprint,
        "anon_fingerprint": model.anon_fingerprint,
    }
    return pack_arrays(arrays, meta)


def model_from_bytes(blob: bytes) -> DeanonymizerModel:
    arrays, meta = unpack_arrays(blob)
    return DeanonymizerModel(
        method=meta["method"],
        params=meta["params"],
        psf=arrays.get("psf"),
        weights=arrays.get("weights"),
        patch=meta["patch"],
        block=meta["block"],
        clear_fingerprint=meta["clear_fingerprint"],
        anon_fingerprint=meta["anon_fingerprint"],
    )


# ---------------------------------------------------------------------------
# Frequency-domain helpers


def _padded_geometry(h: int, w: int) -> tuple[tuple[int, int], tuple[int, int]]:
    return (h // 2, h - h // 2), (w // 2, w - w // 2)


def _centered_otf(psf: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    kh, kw = psf.shape
    if kh > shape[0] or kw > shape[1]:
        raise ValueError("PSF is larger than the padded image")
    z = np.zeros(shape)
    z[:kh, :kw] = psf
    z = np.roll(z, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(z)


def wiener_deconvolve(img: ImageRaster, psf: np.ndarray, nsr: float) -> ImageRaster:
    """Frequency-domain Wiener filter conj(H) / (|H|^2 + nsr), per channel.

    The image is reflect-padded to double size before the periodic-boundary
    filtering and cropped back afterwards, which suppresses wraparound.
    """
    psf = np.asarray(psf, dtype=np.float64)
    if psf.ndim != 2:
        raise ValueError("PSF must be a 2-D array")
    if abs(psf.sum() - 1.0) > 1e-6:
        raise ValueError("PSF must be normalized to sum 1")
    if nsr <= 0:
        raise ValueError("nsr must be > 0")
    h, w = img.height, img.width
    (p0, p1), (q0, q1) = _padded_geometry(h, w)
    otf = _centered_otf(psf, (h + p0 + p1, w + q0 + q1))
    flt = np.conj(otf) / (np.abs(otf) ** 2 + nsr)
    out = np.empty_like(img.pixels)
    for c in range(img.channels):
        padded = np.pad(img.pixels[:, :, c], ((p0, p1), (q0, q1)), mode="symmetric")
        restored = np.fft.ifft2(np.fft.fft2(padded) * flt).real
        out[:, :, c] = restored[p0 : p0 + h, q0 : q0 + w]
    return ImageRaster(np.clip(out, 0.0, 1.0))


def richardson_lucy(img: ImageRaster, psf: np.ndarray, iterations: int) -> ImageRaster:
    """Multiplicative Richardson-Lucy updates with the mirrored PSF.

    Intensities are shifted by a small epsilon internally to avoid division by
    zero; the shift is removed before the final clamp to [0, 1]. Convolutions
    run in a mirror-padded periodic domain, cropped at the end.
    """
    psf = np.asarray(psf, dtype=np.float64)
    if psf.ndim != 2:
        raise ValueError("PSF must be a 2-D array")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    h, w = img.height, img.width
    (p0, p1), (q0, q1) = _padded_geometry(h, w)
    otf = _centered_otf(psf, (h + p0 + p1, w + q0 + q1))
    otf_conj = np.conj(otf)
    out = np.empty_like(img.pixels)
    for c in range(img.channels):
        observed = (
            np.pad(img.pixels[:, :, c], ((p0, p1), (q0, q1)), mode="symmetric") + _RL_EPS
        )
        estimate = observed.copy()
        for _ in range(iterations):
            blurred = np.fft.ifft2(np.fft.fft2(estimate) * otf).real
            ratio = observed / blurred
            estimate = estimate * np.fft.ifft2(np.fft.fft2(ratio) * otf_conj).real
        restored = estimate - _RL_EPS
        out[:, :, c] = restored[p0 : p0 + h, q0 : q0 + w]
    return ImageRaster(np.clip(out, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Block interpolation (pixelation reversal)


def interpolate_blocks(img: ImageRaster, block: int) -> ImageRaster:
    """Cubic interpolation through block-cell means back to full resolution."""
    if block <= 1:
        return ImageRaster(img.pixels.copy())
    h, w = img.height, img.width
    r_starts = np.arange(0, h, block)
    c_starts = np.arange(0, w, block)
    r_centers = np.array([s + (min(block, h - s) - 1) / 2.0 for s in r_starts])
    c_centers = np.array([s + (min(block, w - s) - 1) / 2.0 for s in c_starts])
    rows = np.arange(h, dtype=np.float64)
    cols = np.arange(w, dtype=np.float64)
    out = np.empty_like(img.pixels)
    for c in range(img.channels):
        values = np.empty((len(r_starts), len(c_starts)))
        for i, rs in enumerate(r_starts):
            for j, cs in enumerate(c_starts):
                values[i, j] = img.pixels[rs : rs + block, cs : cs + block, c].mean()
        if len(r_centers) == 1 and len(c_centers) == 1:
            out[:, :, c] = values[0, 0]
        elif len(r_centers) == 1:
            spl = InterpolatedUnivariateSpline(
                c_centers, values[0], k=min(3, len(c_centers) - 1)
            )
            out[:, :, c] = np.tile(spl(cols), (h, 1))
        elif len(c_centers) == 1:
            spl = InterpolatedUnivariateSpline(
                r_centers, values[:, 0], k=min(3, len(r_centers) - 1)
            )
            out[:, :, c] = np.tile(spl(rows)[:, None], (1, w))
        else:
            spl = RectBivariateSpline(
                r_centers,
                c_centers,
                values,
                kx=min(3, len(r_centers) - 1),
                ky=min(3, len(c_centers) - 1),
            )
            out[:, :, c] = spl(rows, cols)
    return ImageRaster(np.clip(out, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Patch regressor


def _patch_matrix(channel: np.ndarray, patch: int) -> np.ndarray:
    """All patch x patch neighborhoods (mirror-padded) as rows, raster order."""
    pad = patch // 2
    padded = np.pad(channel, pad, mode="symmetric")
    windows = sliding_window_view(padded, (patch, patch))
    return windows.reshape(channel.size, patch * patch)


def _train_patch_regressor(
    clear_set: Dataset, anon_set: Dataset, patch: int, ridge: float, seed: int
) -> np.ndarray:
    h, w, channels = anon_set.dims
    clear_map = clear_set.point_map
    pairs = [(p.image, clear_map[p.key].image) for p in anon_set.points]
    per_img = h * w
    total = len(pairs) * per_img
    if total > MAX_TRAIN_PATCHES:
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(total, MAX_TRAIN_PATCHES, replace=False))
    else:
        chosen = np.arange(total)
    n_rows = len(chosen)
    n_feat = patch * patch + 1
    if ridge <= 0 and all(np.ptp(a.pixels) == 0 for a, _ in pairs):
        raise ValueError("degenerate (all-constant) training data")
    weights = np.empty((channels, n_feat))
    for c in range(channels):
        a = np.empty((n_rows, n_feat))
        b = np.empty(n_rows)
        pos = 0
        for i, (anon_img, clear_img) in enumerate(pairs):
            lo = np.searchsorted(chosen, i * per_img)
            hi = np.searchsorted(chosen, (i + 1) * per_img)
            if lo == hi:
                continue
            local = chosen[lo:hi] - i * per_img
            patches = _patch_matrix(anon_img.pixels[:, :, c], patch)
            a[pos : pos + len(local), : patch * patch] = patches[local]
            b[pos : pos + len(local)] = clear_img.pixels[:, :, c].reshape(-1)[local]
            pos += len(local)
        a[:, -1] = 1.0
        gram = a.T @ a + ridge * np.eye(n_feat)
        try:
            weights[c] = np.linalg.solve(gram, a.T @ b)
        except np.linalg.LinAlgError as exc:
            raise ValueError("degenerate (all-constant) training data") from exc
    return weights


def _apply_patch_regressor(model: DeanonymizerModel, img: ImageRaster) -> ImageRaster:
    if model.weights.shape[0] != img.channels:
        raise ValueError(
            f"model expects {model.weights.shape[0]} channel(s), image has {img.channels}"
        )
    p = model.patch
    out = np.empty_like(img.pixels)
    for c in range(img.channels):
        patches = _patch_matrix(img.pixels[:, :, c], p)
        w = model.weights[c]
        out[:, :, c] = (patches @ w[: p * p] + w[-1]).reshape(img.height, img.width)
    return ImageRaster(np.clip(out, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Training and dispatch


def _resolve_psf(
    spec: DeanonymizationSpec, anonymization: AnonymizationSpec | None
) -> np.ndarray:
    """Blur kernel for deconvolvers: explicit param, else the known blur spec, else delta."""
    kernel = spec.params.get("kernel")
    if kernel is None and anonymization is not None and anonymization.method == "gaussian_blur":
        kernel = anonymization.params["kernel"]
    if kernel is None:
        return np.array([[1.0]])
    taps = gaussian_kernel1d(kernel)
    return np.outer(taps, taps)


def train_deanonymizer(
    spec: DeanonymizationSpec,
    clear_set: Dataset,
    anon_set: Dataset,
    anonymization: AnonymizationSpec | None = None,
    seed: int = 0,
) -> DeanonymizerModel:
    """Build a reversal model from aligned (clear, anonymized) attacker data.

    ``anonymization`` carries only public knowledge (method and parameters);
    deconvolution methods use it to derive their point-spread function, the
    interpolation method its block size. ``seed`` drives the patch subsample
    of the learned regressor.
    """
    if clear_set.keys() != anon_set.keys():
        raise ValueError("training sets have mismatched (identity, instance) keys")
    if clear_set.dims != anon_set.dims:
        raise ValueError("training sets have mismatched image dimensions")
    model = DeanonymizerModel(
        method=spec.method,
        params=dict(spec.params),
        clear_fingerprint=clear_set.fingerprint,
        anon_fingerprint=anon_set.fingerprint,
    )
    if spec.method in ("wiener", "richardson_lucy"):
        model.psf = _resolve_psf(spec, anonymization)
    elif spec.method == "bicubic_sharpen":
        block = spec.params.get("block")
        if block is None and anonymization is not None and anonymization.method == "pixelate":
            block = anonymization.params["block"]
        model.block = block if block is not None else 1
    elif spec.method == "patch_regressor":
        model.patch = spec.params["patch"]
        model.weights = _train_patch_regressor(
            clear_set, anon_set, model.patch, float(spec.params["ridge"]), seed
        )
    return model


def deanonymize_point(model: DeanonymizerModel, point: DataPoint) -> DataPoint:
    """Apply a trained model to one point; output intensities stay in [0, 1]."""
    img = point.image
    if model.method == "none":
        out = img
    elif model.method == "wiener":
        out = wiener_deconvolve(img, model.psf, float(model.params["nsr"]))
    elif model.method == "richardson_lucy":
        out = richardson_lucy(img, model.psf, int(model.params["iterations"]))
    elif model.method == "bicubic_sharpen":
        out = interpolate_blocks(img, model.block)
    elif model.method == "patch_regressor":
        out = _apply_patch_regressor(model, img)
    else:
        raise ValueError(f"unknown de-anonymization method {model.method!r}")
    return DataPoint(point.identity, point.instance, out)


def deanonymize_dataset(model: DeanonymizerModel, ds: Dataset) -> Dataset:
    """De-anonymize a whole dataset; labels preserved, outputs on the 8-bit grid."""
    points = [deanonymize_point(model, p) for p in ds.points]
    return Dataset(
        [DataPoint(p.identity, p.instance, quantize_image(p.image)) for p in points]
    )
