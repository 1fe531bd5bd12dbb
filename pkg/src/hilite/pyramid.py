"""Laplacian pyramid decomposition and reconstruction.

Burt-Adelson 5-tap kernel ``[1, 4, 6, 4, 1] / 16``, reflect-101 borders,
ceiling halving for odd sizes. Channels are processed independently.
Reconstruction reuses the exact same expand operator as decomposition, so
``reconstruct(decompose(x))`` returns ``x`` up to float rounding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import imagecore
from .errors import DepthTooLargeError, DimensionMismatchError, ImageTooSmallError

KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
DEFAULT_DEPTH = 2


@dataclass
class Pyramid:
    """High-frequency layers ``highs[0..D-1]`` (finest first) plus the base."""

    highs: list[np.ndarray]
    base: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return len(self.highs)


def _halved(n: int) -> int:
    return (n + 1) // 2


def gaussian_down(img) -> np.ndarray:
    """Blur with the 5-tap kernel and keep even rows/columns."""
    img = imagecore.as_image(img)
    h, w = img.shape[:2]
    if h < 2 or w < 2:
        raise ImageTooSmallError(f"gaussian_down needs at least 2x2, got {w}x{h}")
    out = ndimage.correlate1d(img, KERNEL, axis=0, mode="mirror")
    out = ndimage.correlate1d(out, KERNEL, axis=1, mode="mirror")
    return out[::2, ::2]


def _expand_axis(img: np.ndarray, axis: int, target: int) -> np.ndarray:
    n = img.shape[axis]
    length = min(target, 2 * n)
    shape = list(img.shape)
    shape[axis] = length
    up = np.zeros(shape, dtype=img.dtype)
    dst = [slice(None)] * img.ndim
    src = [slice(None)] * img.ndim
    dst[axis] = slice(0, length, 2)
    src[axis] = slice(0, (length + 1) // 2)
    up[tuple(dst)] = img[tuple(src)]
    if length > 1:
        up = ndimage.correlate1d(up, 2.0 * KERNEL, axis=axis, mode="mirror")
    if target > length:
        pad = [(0, 0)] * img.ndim
        pad[axis] = (0, target - length)
        up = np.pad(up, pad, mode="edge")
    return up


def upsample_to(img, target_w: int, target_h: int) -> np.ndarray:
    """Classical expand: zero insertion, then the kernel scaled by 2 per axis.

    The result has exactly ``target_h x target_w`` pixels; targets beyond
    twice the source size are edge-padded.
    """
    if target_w < 1 or target_h < 1:
        raise ValueError(f"target dimensions must be positive, got {target_w}x{target_h}")
    img = imagecore.as_image(img)
    out = _expand_axis(img, 0, target_h)
    return _expand_axis(out, 1, target_w)


def level_dims(height: int, width: int, depth: int) -> list[tuple[int, int]]:
    """Dimensions of levels ``0..depth`` for an ``height x width`` input."""
    out = [(height, width)]
    for _ in range(depth):
        h, w = out[-1]
        out.append((_halved(h), _halved(w)))
    return out


def max_depth(height: int, width: int) -> int:
    """Largest depth whose base is still at least 2x2."""
    d = 0
    while min(level_dims(height, width, d + 1)[-1]) >= 2:
        d += 1
    return d


def decompose(img, depth: int = DEFAULT_DEPTH) -> Pyramid:
    img = imagecore.as_image(img)
    if depth < 1:
        raise DepthTooLargeError(f"depth must be at least 1, got {depth}")
    h, w = img.shape[:2]
    if min(level_dims(h, w, depth)[-1]) < 2:
        raise DepthTooLargeError(
            f"depth {depth} too large for {w}x{h} image (max {max_depth(h, w)})"
        )
    highs = []
    g = img
    for _ in range(depth):
        down = gaussian_down(g)
        highs.append(g - upsample_to(down, g.shape[1], g.shape[0]))
        g = down
    return Pyramid(highs=highs, base=g)


def reconstruct(pyr: Pyramid, clamp: bool = False) -> np.ndarray:
    """Collapse the pyramid; ``clamp=True`` clips the result to [0, 1] for export."""
    g = pyr.base
    for i in reversed(range(pyr.depth)):
        high = pyr.highs[i]
        hh, hw = high.shape[:2]
        if g.shape[:2] != (_halved(hh), _halved(hw)) or g.ndim != high.ndim or (
            g.ndim == 3 and g.shape[2] != high.shape[2]
        ):
            raise DimensionMismatchError(
                f"level {i} is {high.shape} but the level below is {g.shape}"
            )
        g = high + upsample_to(g, hw, hh)
    if clamp:
        g = np.clip(g, 0.0, 1.0)
    return g


# --------------------------------------------------------------------------
# directory export (lossy: 16-bit quantization)


def save_pyramid(pyr: Pyramid, out_dir) -> list[Path]:
    """Write ``high_<i>.png`` (stored as ``(h + 1) / 2``), ``base.png`` and ``pyramid.json``."""
    out_dir = Path(out_dir)
    written = []
    for i, high in enumerate(pyr.highs):
        p = out_dir / f"high_{i}.png"
        imagecore.save_image((high + 1.0) / 2.0, p, bit_depth=16)
        written.append(p)
    p = out_dir / "base.png"
    imagecore.save_image(pyr.base, p, bit_depth=16)
    written.append(p)
    sidecar = {
        "depth": pyr.depth,
        "channels": imagecore.channels(pyr.base),
        "high_dims": [list(h.shape[:2]) for h in pyr.highs],
        "base_dims": list(pyr.base.shape[:2]),
        "high_encoding": "(h+1)/2, 16-bit",
    }
    p = out_dir / "pyramid.json"
    p.write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    written.append(p)
    return written


def load_pyramid(src_dir) -> Pyramid:
    src_dir = Path(src_dir)
    sidecar = json.loads((src_dir / "pyramid.json").read_text(encoding="utf-8"))
    highs = []
    for i in range(int(sidecar["depth"])):
        stored = imagecore.load_image(src_dir / f"high_{i}.png")
        highs.append(stored * 2.0 - 1.0)
    base = imagecore.load_image(src_dir / "base.png")
    for i, expected in enumerate(sidecar["high_dims"]):
        if list(highs[i].shape[:2]) != list(expected):
            raise DimensionMismatchError(f"high_{i}.png does not match the sidecar dims {expected}")
    return Pyramid(highs=highs, base=base, meta=sidecar)

