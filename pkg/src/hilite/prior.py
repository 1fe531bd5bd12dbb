"""Highlight location prior.

Positive residual between a highlighted image and its highlight-free
counterpart, optionally contrast-stretched above a percentile cut, and
binarized with Otsu's method for evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import imagecore, pyramid
from .errors import DimensionMismatchError

DEFAULT_ALPHA = 80.0
DEFAULT_BINS = 256


@dataclass(frozen=True)
class PriorConfig:
    alpha_percentile: float = DEFAULT_ALPHA
    apply_stretch: bool = True
    bins: int = DEFAULT_BINS

    def __post_init__(self):
        if not 0.0 <= self.alpha_percentile < 100.0:
            raise ValueError(f"alpha_percentile must be in [0, 100), got {self.alpha_percentile}")
        if self.bins < 2:
            raise ValueError(f"bins must be at least 2, got {self.bins}")


def _same_dims(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{what}: shapes differ, {a.shape} vs {b.shape}")


def residual_map(highlight, gt) -> np.ndarray:
    """``max(highlight - gt, 0)`` on gray images, clipped to [0, 1]."""
    highlight = imagecore.as_image(highlight, "highlight")
    gt = imagecore.as_image(gt, "gt")
    _same_dims(highlight, gt, "residual_map")
    return np.clip(highlight - gt, 0.0, 1.0)


def percentile_nearest_rank(values: np.ndarray, alpha_percentile: float) -> float:
    """Value at 1-based rank ``ceil(alpha / 100 * n)`` of the sorted values.

    Rank 0 (``alpha == 0``) is promoted to rank 1, i.e. the minimum.
    """
    flat = np.sort(np.asarray(values).ravel())
    n = flat.size
    # alpha * n first: keeps integer-valued products exact (80 * 10 / 100 == 8)
    rank = max(1, math.ceil(alpha_percentile * n / 100.0))
    return float(flat[min(rank, n) - 1])


def contrast_stretch(mask, alpha_percentile: float = DEFAULT_ALPHA) -> np.ndarray:
    """Zero everything at or below the percentile cut and rescale the rest to [0, 1]."""
    mask = imagecore.as_image(mask, "mask")
    p = percentile_nearest_rank(mask, alpha_percentile)
    top = float(mask.max())
    if not top > p:
        return np.zeros_like(mask)
    return np.clip((mask - p) / (top - p), 0.0, 1.0).astype(mask.dtype)


def histogram_bins(values, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Bin index per value, with bins right-closed: ``k/bins < v <= (k+1)/bins``.

    Bin 0 also holds ``v == 0``. Right-closed bins make ``bin > k`` coincide
    with ``v > (k + 1) / bins``, so the binary mask agrees with the reported
    threshold.
    """
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    idx = np.ceil(v * bins).astype(np.int64) - 1
    return np.clip(idx, 0, bins - 1)


def _better(num: int, den: int, best_num: int, best_den: int) -> bool:
    """``num/den > best_num/best_den`` in exact integer arithmetic."""
    return num * best_den > best_num * den


def otsu_split(counts: np.ndarray) -> int | None:
    """Index ``k`` of the last bin of the lower class, or None when degenerate.

    Between-class variance for the split after bin ``k`` is proportional to
    ``(S0 * N - S * n0)^2 / (n0 * n1)`` where ``S`` sums bin indices. It is
    compared exactly in integers so ties resolve to the smallest ``k``
    deterministically.
    """
    counts = [int(c) for c in counts]
    total = sum(counts)
    weighted = sum(i * c for i, c in enumerate(counts))
    best_k = None
    best_num, best_den = 0, 1
    n0 = 0
    s0 = 0
    for k, c in enumerate(counts[:-1]):
        n0 += c
        s0 += k * c
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        num = (s0 * total - weighted * n0) ** 2
        den = n0 * n1
        if _better(num, den, best_num, best_den):
            best_k, best_num, best_den = k, num, den
    return best_k


def otsu_threshold(mask, bins: int = DEFAULT_BINS) -> tuple[float, np.ndarray]:
    """Otsu binarization of a soft mask over ``bins`` equal-width buckets on [0, 1].

    Returns ``(threshold, binary)``; pixels strictly above ``threshold`` are 1.
    When every pixel falls in one bucket there is no split: the threshold is
    the mask maximum (the constant itself for a constant mask) and the binary
    mask is all zero.
    """
    mask = imagecore.as_image(mask, "mask")
    idx = histogram_bins(mask, bins)
    counts = np.bincount(idx.ravel(), minlength=bins)
    k = otsu_split(counts)
    if k is None:
        return float(mask.max()), np.zeros(mask.shape, dtype=np.uint8)
    return (k + 1) / bins, (idx > k).astype(np.uint8)


def soft_mask(highlight, gt, cfg: PriorConfig | None = None) -> np.ndarray:
    cfg = cfg or PriorConfig()
    m = residual_map(imagecore.to_grayscale(highlight), imagecore.to_grayscale(gt))
    if cfg.apply_stretch:
        m = contrast_stretch(m, cfg.alpha_percentile)
    return m


def generate_prior(highlight, gt, cfg: PriorConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Grayscale -> positive residual -> optional stretch -> Otsu.

    Returns ``(soft, binary)``. The soft mask is the training supervision
    signal; the binary mask is only for evaluation.
    """
    cfg = cfg or PriorConfig()
    highlight = imagecore.as_image(highlight, "highlight")
    gt = imagecore.as_image(gt, "gt")
    if highlight.shape[:2] != gt.shape[:2]:
        raise DimensionMismatchError(
            f"generate_prior: pair sizes differ, {highlight.shape[:2]} vs {gt.shape[:2]}"
        )
    soft = soft_mask(highlight, gt, cfg)
    _, binary = otsu_threshold(soft, cfg.bins)
    return soft, binary


def generate_prior_lowfreq(highlight, gt, depth: int = pyramid.DEFAULT_DEPTH,
                           cfg: PriorConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Same pipeline on the pyramid bases of both images.

    Output masks have the base resolution.
    """
    base_hl = pyramid.decompose(highlight, depth).base
    base_gt = pyramid.decompose(gt, depth).base
    return generate_prior(np.clip(base_hl, 0, 1), np.clip(base_gt, 0, 1), cfg)


def input_otsu(highlight, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Baseline: Otsu applied directly to the grayscale highlighted image."""
    _, binary = otsu_threshold(imagecore.to_grayscale(highlight), bins)
    return binary
