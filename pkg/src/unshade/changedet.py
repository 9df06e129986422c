"""Lighting-invariant scene change analysis for fixed cameras.

Differencing runs on 8-bit display-referred grayscale because the fixed
intensity threshold is only meaningful on that scale; linear radiance has
no fixed scale. Feed albedo images for lighting-invariant behavior, or RGB
for the naive baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._validation import check_same_shape
from .image import BinaryMask, LinearImage, to_display_gray8

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass
class ChangeConfig:
    threshold: int = 30           # 8-bit intensity units
    min_blob_area: int = 25       # pixels
    opening_radius: int = 2       # disk structuring element

    def __post_init__(self):
        if not 0 < self.threshold < 255:
            raise ValueError(f"threshold must lie in (0, 255), got {self.threshold}")
        if self.min_blob_area < 0 or self.opening_radius < 0:
            raise ValueError("areas and radii must be >= 0")


def _disk(radius: int) -> np.ndarray:
    span = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    return dy ** 2 + dx ** 2 <= radius ** 2


def difference_map(reference: LinearImage, source: LinearImage) -> np.ndarray:
    """|gray8(source) - gray8(reference)| as int16."""
    check_same_shape(reference.data, source.data, names=["reference", "source"])
    ref8 = to_display_gray8(reference).astype(np.int16)
    src8 = to_display_gray8(source).astype(np.int16)
    return np.abs(src8 - ref8)


def remove_small_blobs(mask: np.ndarray, min_area: int) -> np.ndarray:
    """Drop 8-connected components smaller than min_area pixels."""
    if min_area <= 1 or not mask.any():
        return mask
    labels, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if n == 0:
        return mask
    areas = np.bincount(labels.reshape(-1))
    keep = areas >= min_area
    keep[0] = False
    return keep[labels]


def opening(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological opening with a disk structuring element (idempotent)."""
    if radius <= 0 or not mask.any():
        return mask
    return ndimage.binary_opening(mask, structure=_disk(radius))


def change_mask(reference: LinearImage, source: LinearImage,
                cfg: ChangeConfig) -> BinaryMask:
    """Threshold the grayscale difference, remove small blobs, then open."""
    delta = difference_map(reference, source)
    mask = delta > cfg.threshold
    mask = remove_small_blobs(mask, cfg.min_blob_area)
    mask = opening(mask, cfg.opening_radius)
    return BinaryMask(mask)


def blob_count(mask: BinaryMask) -> int:
    _, n = ndimage.label(mask.bits, structure=_EIGHT_CONNECTED)
    return int(n)
