"""Raster types and pixel utilities shared by every stage.

Rasters are plain numpy arrays, indexed ``[row, col]``:

* image: ``(H, W, 3)`` float64 in [0, 1]
* probability map: ``(H, W)`` float64 in [0, 1]
* flow field: ``(H, W, 2)`` float64, ``(dx, dy)`` in pixels, +x right, +y down
* label map: ``(H, W)`` integer instance ids, 0 = background

Bilinear sampling is corner aligned everywhere: output sample ``u`` of an
``n``-wide resize sits at source coordinate ``u * (W - 1) / (n - 1)``, so the
first and last samples land exactly on the first and last source pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box; ``(x0, y0)`` inclusive, ``(x1, y1)`` exclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y1), slice(self.x0, self.x1)

    def is_valid(self, width: int, height: int) -> bool:
        return 0 <= self.x0 < self.x1 <= width and 0 <= self.y0 < self.y1 <= height

    def check(self, width: int, height: int) -> None:
        if not self.is_valid(width, height):
            raise ValueError(f"bbox {self} outside {width}x{height} raster")

    def iou(self, other: BBox) -> float:
        ix = max(0, min(self.x1, other.x1) - max(self.x0, other.x0))
        iy = max(0, min(self.y1, other.y1) - max(self.y0, other.y0))
        inter = ix * iy
        union = self.width * self.height + other.width * other.height - inter
        return inter / union


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an ``(H, W, 3)`` image."""
    return np.clip(np.asarray(img, dtype=np.float64) @ GRAY_WEIGHTS, 0.0, 1.0)


def _axis_coords(n_out: int, n_in: int) -> np.ndarray:
    if n_out == 1:
        return np.array([(n_in - 1) / 2.0])
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def _lerp_axis(arr: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    n = arr.shape[axis]
    lo = np.clip(np.floor(coords).astype(np.intp), 0, n - 1)
    hi = np.minimum(lo + 1, n - 1)
    t = coords - lo
    shape = [1] * arr.ndim
    shape[axis] = -1
    t = t.reshape(shape)
    a = np.take(arr, lo, axis=axis)
    b = np.take(arr, hi, axis=axis)
    # a + t*(b - a) keeps constants exact (a == b gives a)
    return a + t * (b - a)


def resize_bilinear(arr: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a probability map, image or flow raster.

    Trailing channel axes are carried along untouched; flow vectors are *not*
    rescaled here.
    """
    if new_w < 1 or new_h < 1:
        raise ValueError(f"target size must be positive, got {new_w}x{new_h}")
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape[:2]
    if (w, h) == (new_w, new_h):
        return arr.copy()
    out = _lerp_axis(arr, _axis_coords(new_w, w), axis=1)
    return _lerp_axis(out, _axis_coords(new_h, h), axis=0)


def crop(raster: np.ndarray, bbox: BBox) -> np.ndarray:
    h, w = raster.shape[:2]
    bbox.check(w, h)
    return np.array(raster[bbox.slices], copy=True)


def paste(dst: np.ndarray, patch: np.ndarray, bbox: BBox) -> np.ndarray:
    """Return a copy of ``dst`` with ``patch`` written into ``bbox``."""
    h, w = dst.shape[:2]
    bbox.check(w, h)
    if patch.shape[:2] != (bbox.height, bbox.width):
        raise ValueError(
            f"patch {patch.shape[:2]} does not match bbox {bbox.height}x{bbox.width}"
        )
    out = np.array(dst, copy=True)
    out[bbox.slices] = patch
    return out


def image_to_float(img_u8: np.ndarray) -> np.ndarray:
    return np.asarray(img_u8, dtype=np.float64) / 255.0


def image_to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
