"""Privacy and utility measures plus the trade-off curve and its area."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, ImageRaster

UTILITY_MEASURES = ("ssim", "psnr_norm")
PSNR_CAP = 50.0
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2
_SSIM_WINDOW = 8
_LUMA = np.array([0.299, 0.587, 0.114])


def _to_gray(img: ImageRaster) -> np.ndarray:
    if img.channels == 1:
        return img.pixels[:, :, 0]
    return img.pixels @ _LUMA


def _box_sums(x: np.ndarray, w: int) -> np.ndarray:
    """Sums over all w x w windows fully inside x (stride 1), via integral image."""
    c = np.cumsum(np.cumsum(x, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    return c[w:, w:] - c[:-w, w:] - c[w:, :-w] + c[:-w, :-w]


def ssim(a: ImageRaster, b: ImageRaster) -> float:
    """Mean structural similarity over sliding 8x8 windows on [0, 1] intensities.

    RGB images are converted to luma first. Window statistics use population
    variance; the window shrinks to min(8, height, width) for tiny images.
    """
    if a.dims != b.dims:
        raise ValueError("images must share dimensions")
    ga, gb = _to_gray(a), _to_gray(b)
    w = min(_SSIM_WINDOW, a.height, a.width)
    n = w * w
    mu_a = _box_sums(ga, w) / n
    mu_b = _box_sums(gb, w) / n
    var_a = _box_sums(ga * ga, w) / n - mu_a * mu_a
    var_b = _box_sums(gb * gb, w) / n - mu_b * mu_b
    cov = _box_sums(ga * gb, w) / n - mu_a * mu_b
    score = ((2.0 * mu_a * mu_b + _SSIM_C1) * (2.0 * cov + _SSIM_C2)) / (
        (mu_a * mu_a + mu_b * mu_b + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
    )
    return float(score.mean())


def mse_psnr(a: ImageRaster, b: ImageRaster) -> tuple[float, float]:
    """Mean squared error and peak signal-to-noise ratio in dB (inf for identical)."""
    if a.dims != b.dims:
        raise ValueError("images must share dimensions")
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    if mse == 0.0:
        return 0.0, math.inf
    return mse, 10.0 * math.log10(1.0 / mse)


def _pair_utility(new_img: ImageRaster, orig_img: ImageRaster, measure: str) -> tuple[float, float]:
    """(raw, mapped-to-[0,1]) utility for one image pair."""
    if measure == "ssim":
        raw = ssim(new_img, orig_img)
        return raw, max(0.0, raw)
    if measure == "psnr_norm":
        _, psnr = mse_psnr(new_img, orig_img)
        capped = min(psnr, PSNR_CAP)
        return capped, capped / PSNR_CAP
    raise ValueError(f"unknown utility measure {measure!r}")


def utility_pairs(new_ds: Dataset, orig_ds: Dataset, measure: str):
    """Per-pair utility rows (identity, instance, raw, mapped) over matching keys."""
    if new_ds.keys() != orig_ds.keys():
        raise ValueError("datasets have mismatched (identity, instance) keys")
    orig_map = orig_ds.point_map
    rows = []
    for p in new_ds.points:
        raw, mapped = _pair_utility(p.image, orig_map[p.key].image, measure)
        rows.append((p.identity, p.instance, raw, mapped))
    return rows


def utility_of(new_ds: Dataset, orig_ds: Dataset, measure: str) -> float:
    """Mean per-pair utility mapped into [0, 1]."""
    rows = utility_pairs(new_ds, orig_ds, measure)
    return float(np.mean([mapped for _, _, _, mapped in rows]))


def privacy_score(accuracy: float, n_identities: int) -> float:
    """Normalized privacy: 0 at perfect recognition, 1 at chance level (clamped)."""
    if n_identities < 2:
        raise ValueError("n_identities must be >= 2")
    if not 0.0 <= accuracy <= 1.0:
        raise ValueError("accuracy must lie in [0, 1]")
    chance = 1.0 / n_identities
    return min(max((1.0 - accuracy) / (1.0 - chance), 0.0), 1.0)


@dataclass(frozen=True)
class TradeoffPoint:
    label: str
    privacy: float
    utility: float
    raw_accuracy: float = 0.0
    balanced_accuracy: float = 0.0
    raw_utility: float = 0.0
    variant: str = "without_deanon"

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "privacy": self.privacy,
            "utility": self.utility,
            "raw_accuracy": self.raw_accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "raw_utility": self.raw_utility,
            "variant": self.variant,
        }


@dataclass(frozen=True)
class TradeoffCurve:
    method: str
    points: tuple[TradeoffPoint, ...]  # sorted by privacy ascending
    auc: float
    chance_level: float
    clear_utility: float


def curve_auc(points) -> float:
    """Area under the privacy-utility curve.

    Points are sorted by privacy; equal-privacy duplicates keep the larger
    utility. The area is the rectangle from privacy 0 to the first point at
    that point's utility, plus trapezoids between consecutive points. Nothing
    is extrapolated past the last point, and a single point contributes
    exactly privacy * utility.
    """
    pts = sorted(((p.privacy, p.utility) for p in points))
    if not pts:
        raise ValueError("cannot integrate an empty curve")
    for privacy, utility in pts:
        if not 0.0 <= privacy <= 1.0 or not 0.0 <= utility <= 1.0:
            raise ValueError("privacy and utility must lie in [0, 1]")
    deduped: list[tuple[float, float]] = []
    for privacy, utility in pts:
        if deduped and deduped[-1][0] == privacy:
            deduped[-1] = (privacy, max(deduped[-1][1], utility))
        else:
            deduped.append((privacy, utility))
    area = deduped[0][0] * deduped[0][1]
    for (p0, u0), (p1, u1) in zip(deduped, deduped[1:]):
        area += (p1 - p0) * (u0 + u1) / 2.0
    return area


def worst_case_auc(auc_without: float, auc_with: float) -> float:
    for value in (auc_without, auc_with):
        if not 0.0 <= value <= 1.0:
            raise ValueError("AUC values must lie in [0, 1]")
    return min(auc_without, auc_with)
