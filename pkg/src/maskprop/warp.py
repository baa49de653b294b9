"""Pull-based bilinear warping of probability maps along a backward flow."""

from __future__ import annotations

import numpy as np


def sample_bilinear(prob: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorised :func:`bilinear_sample`; coordinates outside ``[0, W-1] x [0, H-1]`` give 0."""
    prob = np.asarray(prob, dtype=np.float64)
    h, w = prob.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.where(inside, xs, 0.0)
    yc = np.where(inside, ys, 0.0)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx = xc - x0
    ty = yc - y0
    p00, p01 = prob[y0, x0], prob[y0, x1]
    p10, p11 = prob[y1, x0], prob[y1, x1]
    top = p00 + tx * (p01 - p00)
    bot = p10 + tx * (p11 - p10)
    return np.where(inside, top + ty * (bot - top), 0.0)


def bilinear_sample(prob: np.ndarray, x: float, y: float) -> float:
    return float(sample_bilinear(prob, np.array(x), np.array(y)))


def warp_prob(prob_prev: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Carry ``prob_prev`` onto the grid of the frame ``flow`` is defined on.

    ``out(x, y) = prob_prev(x + dx, y + dy)``; samples that fall out of frame
    read as background (0).
    """
    if flow.shape != prob_prev.shape + (2,):
        raise ValueError(f"flow {flow.shape} does not match map {prob_prev.shape}")
    h, w = prob_prev.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    out = sample_bilinear(prob_prev, xs + flow[..., 0], ys + flow[..., 1])
    return np.clip(out, 0.0, 1.0)
