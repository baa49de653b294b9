"""Dense optical flow: coarse-to-fine Horn-Schunck with incremental warping.

All flows are *backward*: ``estimate_flow(prev, next)`` returns ``f`` defined
on the grid of ``next`` such that ``next(x) ~= prev(x + f(x))``. That is the
field a pull-based bilinear warp needs to carry ``prev``-frame data onto the
``next`` frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from maskprop.core import resize_bilinear, to_grayscale

FLO_MAGIC = b"PIEH"

# Horn-Schunck neighbourhood average (centre excluded)
_AVG_KERNEL = np.array(
    [[1 / 12, 1 / 6, 1 / 12], [1 / 6, 0.0, 1 / 6], [1 / 12, 1 / 6, 1 / 12]]
)
_DERIV_CLAMP = 1.0


@dataclass
class FlowParams:
    pyramid_levels: int = 4
    level_scale: float = 0.5
    alpha: float = 0.1
    iterations_per_level: int = 100

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if not 0.0 < self.level_scale < 1.0:
            raise ValueError("level_scale must lie in (0, 1)")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.iterations_per_level < 1:
            raise ValueError("iterations_per_level must be >= 1")


def gaussian_pyramid(field: np.ndarray, levels: int, scale: float) -> list[np.ndarray]:
    """Level 0 is ``field``; each further level is blurred then resized by ``scale``."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    field = np.asarray(field, dtype=np.float64)
    h, w = field.shape
    sigma = 0.5 / scale
    pyramid = [field.copy()]
    for _ in range(levels - 1):
        w, h = max(1, round(w * scale)), max(1, round(h * scale))
        if w < 4 or h < 4:
            raise ValueError(
                f"{field.shape[1]}x{field.shape[0]} field too small for {levels} levels "
                f"at scale {scale}"
            )
        blurred = ndimage.gaussian_filter(pyramid[-1], sigma, mode="nearest")
        pyramid.append(resize_bilinear(blurred, w, h))
    return pyramid


def _central_diff(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.pad(g, 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return gx, gy


def warp_image(g: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Sample ``g`` at ``x + flow(x)`` with edge replication (for intensities)."""
    h, w = g.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = np.stack([ys + flow[..., 1], xs + flow[..., 0]])
    return ndimage.map_coordinates(g, coords, order=1, mode="nearest")


def horn_schunck_level(
    g_prev: np.ndarray, g_next: np.ndarray, init: np.ndarray, params: FlowParams
) -> np.ndarray:
    """Refine ``init`` on one pyramid level with Jacobi Horn-Schunck sweeps.

    The data term is linearised around ``init``: ``g_prev`` is warped by it,
    then the increment ``(du, dv)`` satisfies ``Ix du + Iy dv + It = 0`` where
    ``It = warped_prev - g_next``. The smoothness term acts on the total flow.
    """
    if g_prev.shape != g_next.shape or init.shape != g_prev.shape + (2,):
        raise ValueError(
            f"shape mismatch: prev {g_prev.shape}, next {g_next.shape}, init {init.shape}"
        )
    warped = warp_image(g_prev, init)
    wx, wy = _central_diff(warped)
    nx, ny = _central_diff(g_next)
    ix = np.clip(0.5 * (wx + nx), -_DERIV_CLAMP, _DERIV_CLAMP)
    iy = np.clip(0.5 * (wy + ny), -_DERIV_CLAMP, _DERIV_CLAMP)
    it = np.clip(warped - g_next, -_DERIV_CLAMP, _DERIV_CLAMP)

    u0, v0 = init[..., 0], init[..., 1]
    u, v = u0.copy(), v0.copy()
    denom = params.alpha**2 + ix**2 + iy**2
    for _ in range(params.iterations_per_level):
        u_avg = ndimage.correlate(u, _AVG_KERNEL, mode="nearest")
        v_avg = ndimage.correlate(v, _AVG_KERNEL, mode="nearest")
        resid = (ix * (u_avg - u0) + iy * (v_avg - v0) + it) / denom
        u = u_avg - ix * resid
        v = v_avg - iy * resid
    return np.stack([u, v], axis=-1)


def estimate_flow(prev: np.ndarray, next: np.ndarray, params: FlowParams | None = None) -> np.ndarray:
    """Backward flow from ``next`` to ``prev`` (see module docstring)."""
    params = params or FlowParams()
    if prev.shape != next.shape:
        raise ValueError(f"frame shapes differ: {prev.shape} vs {next.shape}")
    pyr_prev = gaussian_pyramid(to_grayscale(prev), params.pyramid_levels, params.level_scale)
    pyr_next = gaussian_pyramid(to_grayscale(next), params.pyramid_levels, params.level_scale)

    flow = np.zeros(pyr_prev[-1].shape + (2,))
    for level in range(params.pyramid_levels - 1, -1, -1):
        g_prev, g_next = pyr_prev[level], pyr_next[level]
        h, w = g_prev.shape
        if flow.shape[:2] != (h, w):
            ch, cw = flow.shape[:2]
            flow = resize_bilinear(flow, w, h)
            flow[..., 0] *= w / cw
            flow[..., 1] *= h / ch
        flow = horn_schunck_level(g_prev, g_next, flow, params)
    return flow


def endpoint_error(flow: np.ndarray, gt: np.ndarray) -> np.ndarray:
    return np.linalg.norm(flow - gt, axis=-1)


def write_flo(path: str | Path, flow: np.ndarray) -> None:
    """Write a Middlebury ``.flo`` file (float32 payload)."""
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"expected (H, W, 2) flow, got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(FLO_MAGIC)
        fh.write(np.array([w, h], dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())


def read_flo(path: str | Path) -> np.ndarray:
    """Read a Middlebury ``.flo`` file; raises ``ValueError`` on a bad header or size."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != FLO_MAGIC:
        raise ValueError(f"{path}: not a .flo file (bad magic)")
    w, h = (int(v) for v in np.frombuffer(data, dtype="<i4", count=2, offset=4))
    if w <= 0 or h <= 0 or len(data) != 12 + 8 * w * h:
        raise ValueError(f"{path}: header says {w}x{h} but payload is {len(data) - 12} bytes")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w, 2).copy()
