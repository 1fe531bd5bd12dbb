"""Full-reference image metrics, mask metrics and loss arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import imagecore
from .errors import DimensionMismatchError, ImageTooSmallError, NonFiniteError, UndefinedClassError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b, what: str) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(imagecore.as_image(a, "a"), dtype=np.float64)
    b = np.asarray(imagecore.as_image(b, "b"), dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{what}: shapes differ, {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    """Mean squared difference, summed with ``math.fsum`` so a constant error field gives its exact square."""
    a, b = _pair(a, b, "mse")
    sq = (a - b) ** 2
    return math.fsum(sq.ravel().tolist()) / sq.size


def rmse(a, b, scale: str | int = "unit") -> float:
    """Root mean squared error over all samples jointly.

    ``scale=255`` multiplies the unit-range value by 255.
    """
    if scale not in ("unit", 255, "255"):
        raise ValueError(f"scale must be 'unit' or 255, got {scale!r}")
    value = math.sqrt(mse(a, b))
    return value * 255.0 if scale in (255, "255") else value


def psnr(a, b) -> float:
    """PSNR in dB with peak 1.0; ``math.inf`` for identical images."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    r = len(taps) // 2
    out = ndimage.correlate1d(img, taps, axis=0, mode="constant")
    out = ndimage.correlate1d(out, taps, axis=1, mode="constant")
    return out[r:-r, r:-r]


def ssim_map(a, b) -> np.ndarray:
    """Local SSIM over every fully contained 11x11 Gaussian window.

    Color inputs are converted to luma first.
    """
    a = np.asarray(imagecore.to_grayscale(a), dtype=np.float64)
    b = np.asarray(imagecore.to_grayscale(b), dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"ssim: shapes differ, {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ImageTooSmallError(f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[1]}x{a.shape[0]}")
    taps = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu_a = _filter_valid(a, taps)
    mu_b = _filter_valid(b, taps)
    var_a = _filter_valid(a * a, taps) - mu_a**2
    var_b = _filter_valid(b * b, taps) - mu_b**2
    cov = _filter_valid(a * b, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b) -> float:
    return float(np.mean(ssim_map(a, b)))


# --------------------------------------------------------------------------
# binary masks


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


def mask_confusion(pred, gt) -> ConfusionCounts:
    """Per-pixel confusion counts; nonzero means highlight."""
    pred = np.asarray(pred) != 0
    gt = np.asarray(gt) != 0
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"mask_confusion: shapes differ, {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = pred.size - tp - fp - fn
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise ValueError("accuracy of an empty comparison")
    return (c.tp + c.tn) / c.total


def ber(c: ConfusionCounts) -> float:
    """Balanced error rate in percent."""
    if c.tp + c.fn == 0:
        raise UndefinedClassError("positive")
    if c.tn + c.fp == 0:
        raise UndefinedClassError("negative")
    return 100.0 * 0.5 * (c.fn / (c.tp + c.fn) + c.fp / (c.tn + c.fp))


# --------------------------------------------------------------------------
# losses


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.4
    lambda2: float = 1.0
    lambda3: float = 0.1
    lambda4: float = 0.5
    beta1: float = 0.00005

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "beta1"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def tv(mask) -> float:
    """Anisotropic total variation: mean |dx| plus mean |dy| over forward differences."""
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim < 2 or m.shape[0] < 2 or m.shape[1] < 2:
        raise ImageTooSmallError(f"tv needs at least 2x2, got shape {m.shape}")
    dx = np.abs(np.diff(m, axis=1))
    dy = np.abs(np.diff(m, axis=0))
    return float(dx.mean() + dy.mean())


def mask_loss(pred, target, beta1: float = LossWeights.beta1) -> float:
    """Mean L1 between predicted and target soft masks plus ``beta1 * tv(pred)``."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionMismatchError(f"mask_loss: shapes differ, {p.shape} vs {t.shape}")
    return float(np.mean(np.abs(p - t))) + beta1 * tv(p)


def total_loss(mse: float, ssim_loss: float, dm: float, structure: float, mask: float,
               w: LossWeights | None = None) -> float:
    """``mse + l1*ssim_loss + l2*dm + l3*structure + l4*mask``.

    ``structure`` is whatever feature-space loss the caller computed.
    """
    w = w or LossWeights()
    parts = {"mse": mse, "ssim_loss": ssim_loss, "dm": dm, "structure": structure, "mask": mask}
    for name, value in parts.items():
        if not math.isfinite(value):
            raise NonFiniteError(f"{name} is not finite: {value}")
    return mse + w.lambda1 * ssim_loss + w.lambda2 * dm + w.lambda3 * structure + w.lambda4 * mask
