"""Synthetic document pairs with known highlight support and known shifts.

Used by the test-suite and for calibrating QC thresholds. Paper intensity
is kept low enough that ``page + highlight`` never saturates, so the
additive highlight model holds exactly and the half-max support of the
blobs is a well-defined ground-truth mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PAPER_LEVEL = (0.22, 0.30)
INK_LEVEL = (0.02, 0.08)


@dataclass
class Blob:
    cy: float
    cx: float
    sigma: float
    peak: float


@dataclass
class SyntheticPair:
    highlight: np.ndarray
    gt: np.ndarray
    support: np.ndarray
    blobs: list[Blob] = field(default_factory=list)
    shift: tuple[int, int] = (0, 0)


def document_page(height: int, width: int, rng: np.random.Generator, color: bool = False) -> np.ndarray:
    """Dim paper with a soft illumination gradient and rows of ink strokes."""
    paper = rng.uniform(*PAPER_LEVEL)
    yy, xx = np.mgrid[0:height, 0:width]
    gy, gx = rng.uniform(-0.03, 0.03, size=2)
    page = paper + gy * (yy / max(height - 1, 1) - 0.5) + gx * (xx / max(width - 1, 1) - 0.5)
    ink = rng.uniform(*INK_LEVEL)
    line_h = int(rng.integers(5, 9))
    y = int(rng.integers(2, 6))
    while y + line_h < height - 2:
        x = int(rng.integers(2, 8))
        while x < width - 4:
            glyph_w = int(rng.integers(2, 6))
            stroke = rng.integers(1, 3)
            kind = rng.integers(0, 3)
            if kind == 0:
                page[y:y + line_h, x:x + stroke] = ink
            elif kind == 1:
                page[y + line_h // 2:y + line_h // 2 + stroke, x:x + glyph_w] = ink
            else:
                page[y:y + line_h, x:x + glyph_w] = np.where(
                    rng.random((line_h, glyph_w)) < 0.45, ink, page[y:y + line_h, x:x + glyph_w]
                )
            x += glyph_w + int(rng.integers(1, 4))
            if rng.random() < 0.12:
                x += int(rng.integers(4, 10))
        y += line_h + int(rng.integers(3, 7))
    page = np.clip(page, 0.0, 1.0)
    if color:
        tint = rng.uniform(0.92, 1.0, size=3)
        page = page[:, :, None] * tint
    return page.astype(np.float32)


def gaussian_blob(height: int, width: int, blob: Blob) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    d2 = (yy - blob.cy) ** 2 + (xx - blob.cx) ** 2
    return blob.peak * np.exp(-d2 / (2.0 * blob.sigma**2))


def random_blobs(height: int, width: int, rng: np.random.Generator, count: int = 1,
                 sigma=(5.0, 20.0), peak=(0.3, 0.7)) -> list[Blob]:
    blobs = []
    for _ in range(count):
        s = rng.uniform(*sigma)
        margin = min(s, height / 4, width / 4)
        blobs.append(Blob(
            cy=rng.uniform(margin, height - margin),
            cx=rng.uniform(margin, width - margin),
            sigma=s,
            peak=rng.uniform(*peak),
        ))
    return blobs


def highlight_field(height: int, width: int, blobs: list[Blob]) -> tuple[np.ndarray, np.ndarray]:
    """Summed blob intensities and the union of each blob's half-max disc."""
    total = np.zeros((height, width))
    support = np.zeros((height, width), dtype=bool)
    for b in blobs:
        g = gaussian_blob(height, width, b)
        total += g
        support |= g >= 0.5 * b.peak
    return total, support


def highlight_pair(height: int, width: int, rng: np.random.Generator, n_blobs: int = 1,
                   sigma=(5.0, 20.0), peak=(0.3, 0.7), noise: float = 0.002,
                   color: bool = False) -> SyntheticPair:
    """Page plus additive Gaussian highlights, with independent sensor noise on each image."""
    gt = document_page(height, width, rng, color=color)
    blobs = random_blobs(height, width, rng, n_blobs, sigma, peak)
    field_, support = highlight_field(height, width, blobs)
    if color:
        field_ = field_[:, :, None]
    hl = gt + field_
    gt_noisy = gt + rng.normal(0.0, noise, gt.shape)
    hl = hl + rng.normal(0.0, noise, gt.shape)
    return SyntheticPair(
        highlight=np.clip(hl, 0.0, 1.0).astype(np.float32),
        gt=np.clip(gt_noisy, 0.0, 1.0).astype(np.float32),
        support=support,
        blobs=blobs,
    )


def shifted_pair(height: int, width: int, rng: np.random.Generator, dx: int, dy: int,
                 noise: float = 0.002) -> SyntheticPair:
    """``highlight[y, x] == gt[y - dy, x - dx]``: the highlight view's content moved by (dx, dy)."""
    pad = max(abs(dx), abs(dy)) + 1
    big = document_page(height + 2 * pad, width + 2 * pad, rng)
    gt = big[pad:pad + height, pad:pad + width]
    hl = big[pad - dy:pad - dy + height, pad - dx:pad - dx + width]
    gt = gt + rng.normal(0.0, noise, gt.shape)
    hl = hl + rng.normal(0.0, noise, hl.shape)
    return SyntheticPair(
        highlight=np.clip(hl, 0.0, 1.0).astype(np.float32),
        gt=np.clip(gt, 0.0, 1.0).astype(np.float32),
        support=np.zeros((height, width), dtype=bool),
        shift=(dx, dy),
    )
