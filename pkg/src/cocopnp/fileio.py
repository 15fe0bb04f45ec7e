"""Image and kernel file handling.

Two image formats are supported:

* 8-bit PNG for viewing (lossy: intensities are clipped to [0, 1] and
  quantized to 256 levels).
* A raw float dump for lossless round-trips, used wherever bit-exact
  reproducibility matters.  Layout: magic ``CPNPIMG1`` (8 bytes), then
  height, width, channels as little-endian uint32, then the row-major
  float64 payload, little-endian.

Kernels load from either a small grayscale PNG or a whitespace-separated
text matrix.  Loaded kernels are normalized to sum one; a warning is issued
when the applied renormalization exceeds 1e-6.
"""

from __future__ import annotations

import struct
import warnings
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import ValidationError
from .imaging import as_image

__all__ = [
    "load_png",
    "save_png",
    "read_image_dump",
    "write_image_dump",
    "load_kernel",
]

_DUMP_MAGIC = b"CPNPIMG1"


def load_png(path: str | Path) -> np.ndarray:
    """Load a PNG as a float64 image in [0, 1]."""
    with PILImage.open(path) as img:
        if img.mode in ("L", "I;16", "I"):
            img = img.convert("L")
            arr = np.asarray(img, dtype=np.float64) / 255.0
        else:
            img = img.convert("RGB")
            arr = np.asarray(img, dtype=np.float64) / 255.0
    return as_image(arr)


def save_png(x: np.ndarray, path: str | Path) -> None:
    """Write an image as 8-bit PNG, clipping to [0, 1]."""
    arr = as_image(x)
    q = np.clip(np.rint(np.clip(arr, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    mode = "L" if q.ndim == 2 else "RGB"
    PILImage.fromarray(q, mode=mode).save(path, format="PNG")


def write_image_dump(x: np.ndarray, path: str | Path) -> None:
    """Write a lossless float64 dump of an image."""
    arr = as_image(x)
    h, w = arr.shape[:2]
    c = 1 if arr.ndim == 2 else arr.shape[2]
    header = struct.pack("<8sIII", _DUMP_MAGIC, h, w, c)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_image_dump(path: str | Path) -> np.ndarray:
    """Read a float64 dump written by :func:`write_image_dump`."""
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:8] != _DUMP_MAGIC:
        raise ValidationError(f"{path}: not a CPNPIMG1 dump")
    _, h, w, c = struct.unpack("<8sIII", raw[:20])
    expected = 20 + h * w * c * 8
    if len(raw) != expected:
        raise ValidationError(f"{path}: payload size {len(raw)} != expected {expected}")
    data = np.frombuffer(raw[20:], dtype="<f8").astype(np.float64)
    shape = (h, w) if c == 1 else (h, w, c)
    return as_image(data.reshape(shape))


def load_kernel(path: str | Path) -> np.ndarray:
    """Load a blur kernel from PNG or a plain-text matrix and normalize it."""
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"kernel file not found: {path}")
    if p.suffix.lower() == ".png":
        with PILImage.open(p) as img:
            k = np.asarray(img.convert("L"), dtype=np.float64)
    else:
        k = np.loadtxt(p, dtype=np.float64, ndmin=2)
    if k.ndim != 2 or k.size == 0:
        raise ValidationError(f"{path}: kernel must be a nonempty 2-D matrix")
    if np.any(k < 0) or not np.all(np.isfinite(k)):
        raise ValidationError(f"{path}: kernel entries must be finite and nonnegative")
    total = k.sum()
    if total <= 0:
        raise ValidationError(f"{path}: kernel sums to {total}, cannot normalize")
    if abs(total - 1.0) > 1e-6:
        warnings.warn(
            f"kernel from {path} renormalized (sum was {total:.6g})",
            stacklevel=2,
        )
    return k / total
