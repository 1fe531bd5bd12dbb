"""Pixel containers and raster file I/O.

Images are plain numpy arrays of unit-interval intensities:

* a gray image is ``(H, W)``;
* a color image is ``(H, W, 3)`` in RGB order.

``(H, W, 1)`` is accepted wherever an image is expected and treated as gray.
Intensities are held as float32; quantization only happens in
:func:`save_image`.

Supported files are PNG (8/16-bit, gray, RGB, with or without alpha) and
binary PGM/PPM (``P5``/``P6``, any maxval up to 65535).
"""

from __future__ import annotations

import os
from pathlib import Path

import cv2
import numpy as np

from .errors import (
    CorruptImageError,
    MissingFileError,
    UnsupportedFormatError,
    UnwritablePathError,
)

# decoder failures are reported through exceptions, not OpenCV's log
cv2.utils.logging.setLogLevel(cv2.utils.logging.LOG_LEVEL_SILENT)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_WRITE_EXTENSIONS = {".png", ".pgm", ".ppm"}


def as_image(img, name: str = "image") -> np.ndarray:
    """Validate ``img`` as an image array and return it as float32.

    Accepts ``(H, W)``, ``(H, W, 1)`` and ``(H, W, 3)`` arrays. Values are
    not clipped; callers that need the unit-interval guarantee clip
    themselves.
    """
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[2] not in (1, 3):
        raise ValueError(f"{name}: channels must be 1 or 3, got {arr.shape[2]}")
    if arr.ndim not in (2, 3):
        raise ValueError(f"{name}: expected (H, W) or (H, W, C) array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name}: empty image")
    if arr.dtype != np.float32 and arr.dtype != np.float64:
        arr = arr.astype(np.float32)
    return arr


def channels(img: np.ndarray) -> int:
    return 1 if img.ndim == 2 else img.shape[2]


def dims(img: np.ndarray) -> tuple[int, int]:
    """Return ``(height, width)``."""
    return img.shape[0], img.shape[1]


def to_grayscale(img) -> np.ndarray:
    """Convert to a single-channel ``(H, W)`` image with BT.601 luma weights.

    A 2-D input is returned unchanged (same object).
    """
    arr = as_image(img)
    if arr.ndim == 2:
        return arr
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    gray = arr.astype(np.float64) @ LUMA_WEIGHTS
    return np.clip(gray, 0.0, 1.0).astype(arr.dtype)


# --------------------------------------------------------------------------
# loading


def load_image(path) -> np.ndarray:
    """Load a PNG, PGM or PPM file into a float32 array scaled to [0, 1].

    Raises
    ------
    MissingFileError
        ``path`` does not exist.
    UnsupportedFormatError
        The file is not PNG or binary PGM/PPM.
    CorruptImageError
        The signature is recognized but the header or payload is invalid.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such image file: {path}")
    data = path.read_bytes()
    if data.startswith(_PNG_SIGNATURE):
        return _decode_png(data, path)
    if data[:2] in (b"P5", b"P6"):
        return _decode_pnm(data, path)
    if data[:2] in (b"P1", b"P2", b"P3", b"P4"):
        raise UnsupportedFormatError(f"{path}: only binary PGM/PPM (P5/P6) are supported")
    raise UnsupportedFormatError(f"{path}: not a PNG, PGM or PPM file")


def _decode_png(data: bytes, path: Path) -> np.ndarray:
    raw = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise CorruptImageError(f"{path}: corrupt PNG")
    if raw.dtype == np.uint8:
        maxval = 255.0
    elif raw.dtype == np.uint16:
        maxval = 65535.0
    else:
        raise UnsupportedFormatError(f"{path}: unsupported PNG sample type {raw.dtype}")
    if raw.ndim == 3:
        if raw.shape[2] == 1:
            raw = raw[:, :, 0]
        elif raw.shape[2] == 2:
            # gray + alpha
            raw = raw[:, :, 0]
        else:
            # BGR(A) -> RGB, alpha dropped
            raw = raw[:, :, 2::-1]
    return (raw.astype(np.float64) / maxval).astype(np.float32)


def _pnm_header(data: bytes, path: Path) -> tuple[list[int], int]:
    """Parse width, height, maxval; return them and the payload offset."""
    fields: list[int] = []
    pos = 2
    n = len(data)
    while len(fields) < 3:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise CorruptImageError(f"{path}: corrupt PNM header")
        fields.append(int(data[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not data[pos : pos + 1].isspace():
        raise CorruptImageError(f"{path}: corrupt PNM header")
    return fields, pos + 1


def _decode_pnm(data: bytes, path: Path) -> np.ndarray:
    (width, height, maxval), offset = _pnm_header(data, path)
    if width < 1 or height < 1 or not 1 <= maxval <= 65535:
        raise CorruptImageError(f"{path}: invalid PNM dimensions or maxval")
    nch = 1 if data[:2] == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height * nch
    payload = data[offset : offset + count * dtype.itemsize]
    if len(payload) < count * dtype.itemsize:
        raise CorruptImageError(f"{path}: truncated PNM raster")
    raw = np.frombuffer(payload, dtype=dtype).reshape(height, width, nch)
    if raw.max() > maxval:
        raise CorruptImageError(f"{path}: sample exceeds maxval {maxval}")
    out = raw.astype(np.float64) / maxval
    if nch == 1:
        out = out[:, :, 0]
    return out.astype(np.float32)


# --------------------------------------------------------------------------
# saving


def quantize(img, bit_depth: int) -> np.ndarray:
    """Clip to [0, 1] and round half-up onto the integer grid of ``bit_depth``."""
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    maxval = 255 if bit_depth == 8 else 65535
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    q = np.floor(arr * maxval + 0.5)
    return q.astype(np.uint8 if bit_depth == 8 else np.uint16)


def encode_image(img, fmt: str, bit_depth: int = 8) -> bytes:
    """Encode ``img`` as PNG/PGM/PPM bytes (``fmt`` is the file extension)."""
    arr = as_image(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    q = quantize(arr, bit_depth)
    fmt = fmt.lower()
    if fmt == ".png":
        if q.ndim == 3:
            q = np.ascontiguousarray(q[:, :, ::-1])
        ok, buf = cv2.imencode(".png", q)
        if not ok:
            raise UnsupportedFormatError("PNG encoding failed")
        return buf.tobytes()
    if fmt in (".pgm", ".ppm"):
        want = 1 if fmt == ".pgm" else 3
        if channels(q) != want:
            raise UnsupportedFormatError(f"{fmt} requires {want}-channel data")
        magic = b"P5" if want == 1 else b"P6"
        maxval = 255 if bit_depth == 8 else 65535
        h, w = q.shape[:2]
        header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
        body = q.astype(">u2").tobytes() if bit_depth == 16 else q.tobytes()
        return header + body
    raise UnsupportedFormatError(f"cannot write {fmt!r}; use .png, .pgm or .ppm")


def save_image(img, path, bit_depth: int = 8) -> None:
    """Write ``img`` to ``path``; the format follows the file extension.

    Samples are clipped to [0, 1] and rounded half-up, so a load/save round
    trip is exact to half a quantization step.
    """
    path = Path(path)
    ext = path.suffix.lower()
    if ext not in _WRITE_EXTENSIONS:
        raise UnsupportedFormatError(f"cannot write {ext or 'extension-less'} file {path}")
    payload = encode_image(img, ext, bit_depth)
    parent = path.parent
    if not parent.is_dir():
        raise UnwritablePathError(f"parent directory does not exist: {parent}")
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise UnwritablePathError(f"cannot write {path}: {exc.strerror or exc}") from exc


def is_image_file(path) -> bool:
    return os.path.splitext(str(path))[1].lower() in _WRITE_EXTENSIONS
