"""Instance regions of interest: threshold to a box, crop patches, paste back."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from maskprop.core import BBox, crop, resize_bilinear


@dataclass
class RoiParams:
    threshold: float = 0.5
    margin: float = 0.4
    min_pixels: int = 10
    patch_size: int = 64

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.min_pixels < 1:
            raise ValueError("min_pixels must be >= 1")
        if self.patch_size < 4:
            raise ValueError("patch_size must be >= 4")


def support(prob: np.ndarray, threshold: float) -> np.ndarray:
    return prob >= threshold


def mask_bbox(prob: np.ndarray, params: RoiParams) -> BBox | None:
    """Tight box around ``prob >= threshold``, or ``None`` when the instance is missing."""
    mask = support(prob, params.threshold)
    if np.count_nonzero(mask) < params.min_pixels:
        return None
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return BBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def expand_bbox(b: BBox, margin: float, bounds_w: int, bounds_h: int) -> BBox:
    dx = margin * b.width
    dy = margin * b.height
    return BBox(
        max(0, math.floor(b.x0 - dx)),
        max(0, math.floor(b.y0 - dy)),
        min(bounds_w, math.ceil(b.x1 + dx)),
        min(bounds_h, math.ceil(b.y1 + dy)),
    )


def crop_instance(
    img: np.ndarray, prob: np.ndarray, bbox: BBox, patch_size: int | None
) -> tuple[np.ndarray, np.ndarray]:
    """Crop image and warped probability to ``bbox`` and resize to ``patch_size``².

    ``patch_size=None`` keeps the native crop resolution.
    """
    img_patch, prob_patch = crop(img, bbox), crop(prob, bbox)
    if patch_size is not None:
        img_patch = resize_bilinear(img_patch, patch_size, patch_size)
        prob_patch = resize_bilinear(prob_patch, patch_size, patch_size)
    return img_patch, prob_patch


def crop_flow(flow: np.ndarray, bbox: BBox, patch_size: int) -> np.ndarray:
    """Flow patch for ``bbox`` in patch pixel units."""
    patch = resize_bilinear(crop(flow, bbox), patch_size, patch_size)
    patch[..., 0] *= (patch_size - 1) / max(bbox.width - 1, 1)
    patch[..., 1] *= (patch_size - 1) / max(bbox.height - 1, 1)
    return patch


def paste_instance(full: np.ndarray, patch: np.ndarray, bbox: BBox) -> np.ndarray:
    """Instance map with ``patch`` (resized to the box) inside ``bbox`` and 0 elsewhere."""
    h, w = full.shape[:2]
    bbox.check(w, h)
    out = np.zeros((h, w), dtype=np.float64)
    out[bbox.slices] = resize_bilinear(patch, bbox.width, bbox.height)
    return out
