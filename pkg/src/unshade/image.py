"""Image containers and linear-radiance I/O.

Conventions used by every module:

- `LinearImage.data` is the single source of truth for indexing: a float32
  array of shape (height, width, channels), row-major, interleaved, in
  linear radiance with an arbitrary global scale. channels is 1 or 3.
- Masks are boolean arrays of shape (height, width) wrapped in BinaryMask.
- EXR files carry linear radiance; PNG is used for masks and previews only
  and never feeds numeric pipelines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as _PILImage

from . import exr

# Rec. 709 luma weights, applied to display-referred (sRGB-encoded) values.
_LUMA = np.array([0.2126, 0.7152, 0.0722], dtype=np.float64)


class IngestionError(ValueError):
    """Raised when a file violates the linear-radiance contract."""


@dataclass(frozen=True)
class LinearImage:
    """Linear-radiance raster; immutable once constructed."""

    data: np.ndarray  # (height, width, channels) float32, finite, >= 0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"LinearImage needs (H, W, 1|3) data, got {np.shape(self.data)}")
        bad = ~np.isfinite(arr) | (arr < 0)
        if bad.any():
            idx = np.argwhere(bad)[0]
            raise IngestionError(
                f"non-finite or negative sample at pixel (y={idx[0]}, x={idx[1]}, "
                f"channel={idx[2]}): {arr[tuple(idx)]!r}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class BinaryMask:
    """Per-pixel boolean mask with the same dimensions as the image it annotates."""

    bits: np.ndarray  # (height, width) bool

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.bits, dtype=bool))
        if arr.ndim != 2:
            raise ValueError(f"BinaryMask needs (H, W) bits, got {np.shape(self.bits)}")
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(self.bits.sum())


def read_linear_exr(path) -> LinearImage:
    """Read an EXR as linear radiance; rejects NaN/Inf/negative samples."""
    arr = exr.read_exr(path)
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise IngestionError(
            f"{path}: non-finite sample at pixel (y={idx[0]}, x={idx[1]}, "
            f"channel={idx[2]})")
    bad = arr < 0
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise IngestionError(
            f"{path}: negative sample at pixel (y={idx[0]}, x={idx[1]}, "
            f"channel={idx[2]}): {arr[tuple(idx)]}")
    return LinearImage(arr)


def write_linear_exr(img: LinearImage, path, compression: str = "zip") -> None:
    """Write 32-bit float EXR with no transfer function; read_linear_exr inverts it."""
    exr.write_exr(path, img.data, compression=compression)


def downsample_box(img: LinearImage, factor: int) -> LinearImage:
    """Box (area-average) downsampling by an integer factor.

    Each output pixel is the arithmetic mean of its factor x factor source
    block; edge blocks average whatever pixels exist. Preserves linear
    radiance means.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor!r}")
    if factor == 1:
        return img
    h, w, c = img.data.shape
    row_edges = np.arange(0, h, factor)
    col_edges = np.arange(0, w, factor)
    acc = np.add.reduceat(img.data.astype(np.float64), row_edges, axis=0)
    acc = np.add.reduceat(acc, col_edges, axis=1)
    row_counts = np.minimum(row_edges + factor, h) - row_edges
    col_counts = np.minimum(col_edges + factor, w) - col_edges
    counts = row_counts[:, None] * col_counts[None, :]
    return LinearImage((acc / counts[:, :, None]).astype(np.float32))


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    """Linear -> sRGB transfer (IEC 61966-2-1), input clipped to [0, 1]."""
    x = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def display_luma(img: LinearImage) -> np.ndarray:
    """Display-referred luma in [0, 1]: sRGB-encode each channel, then Rec. 709 mix."""
    encoded = srgb_encode(img.data)
    if img.channels == 1:
        return encoded[:, :, 0]
    return encoded @ _LUMA


def to_display_gray8(img: LinearImage) -> np.ndarray:
    """8-bit grayscale preview raster: sRGB transfer, Rec. 709 luma, round half up."""
    luma = display_luma(img) * 255.0
    return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


def bilinear_sample(plane: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample a 2-D plane at fractional (x, y) pixel coordinates, clamping at edges."""
    h, w = plane.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None] if plane.ndim == 3 else x - x0
    fy = (y - y0)[..., None] if plane.ndim == 3 else y - y0
    top = plane[y0, x0] * (1 - fx) + plane[y0, x1] * fx
    bot = plane[y1, x0] * (1 - fx) + plane[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_bilinear(img: LinearImage, width: int, height: int) -> LinearImage:
    """Resize with bilinear interpolation (pixel-center aligned)."""
    if width < 1 or height < 1:
        raise ValueError("target size must be positive")
    sx = img.width / width
    sy = img.height / height
    xs = (np.arange(width) + 0.5) * sx - 0.5
    ys = (np.arange(height) + 0.5) * sy - 0.5
    gx, gy = np.meshgrid(xs, ys)
    out = bilinear_sample(img.data.astype(np.float64), gx, gy)
    return LinearImage(np.clip(out, 0.0, None).astype(np.float32))


def write_mask_png(mask: BinaryMask, path) -> None:
    """Persist a mask as 1-bit PNG (255 = true)."""
    _PILImage.fromarray(mask.bits).convert("1").save(path, optimize=False)


def read_mask_png(path) -> BinaryMask:
    arr = np.asarray(_PILImage.open(path).convert("L"))
    return BinaryMask(arr > 127)


def write_preview_png(img: LinearImage, path) -> None:
    """8-bit sRGB preview; never feeds numeric pipelines."""
    encoded = np.clip(np.floor(srgb_encode(img.data) * 255.0 + 0.5), 0, 255).astype(np.uint8)
    if img.channels == 1:
        encoded = encoded[:, :, 0]
    _PILImage.fromarray(encoded).save(path, optimize=False)
