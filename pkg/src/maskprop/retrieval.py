"""One-shot re-detection of instances the propagation branch has lost.

A per-instance model is fit on frame 0 alone (instance vs everything else)
and later scores whole frames with an uninformative 0.5 prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from maskprop.core import BBox, resize_bilinear
from maskprop.predictor import (
    ColorModel,
    TinyNet,
    TrainConfig,
    fit_color_model,
    forward,
    predict_baseline,
    train,
)
from maskprop.roi import RoiParams, expand_bbox, mask_bbox


@dataclass
class OneShotModel:
    instance_id: int
    predictor: ColorModel | TinyNet
    source_frame: int = 0
    smooth_sigma: float = 1.5

    def probability(self, frame: np.ndarray) -> np.ndarray:
        """Full-frame foreground probability under a uniform 0.5 prior.

        Per-pixel scores are Gaussian-smoothed (``smooth_sigma`` px) so that
        isolated pixels in colour bins unseen on frame 0 cannot form a
        detection on their own.
        """
        if isinstance(self.predictor, ColorModel):
            prob = predict_baseline(self.predictor, frame, np.full(frame.shape[:2], 0.5))
        else:
            h, w = frame.shape[:2]
            size = self.predictor.patch_size
            small = resize_bilinear(frame, size, size)
            prob = resize_bilinear(forward(self.predictor, small, np.full((size, size), 0.5)), w, h)
        if self.smooth_sigma > 0:
            prob = ndimage.gaussian_filter(prob, self.smooth_sigma, mode="nearest")
        return np.clip(prob, 0.0, 1.0)


def merge_to_foreground(labels: np.ndarray) -> np.ndarray:
    """Binary foreground map: every instance id collapses to 1."""
    return (np.asarray(labels) != 0).astype(np.float64)


def _one_shot_patches(frame0, mask, size, margin):
    h, w = mask.shape
    rows, cols = np.nonzero(mask)
    tight = BBox(int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1)
    patches = []
    for box in (BBox(0, 0, w, h), expand_bbox(tight, margin, w, h)):
        img = resize_bilinear(frame0[box.slices], size, size)
        tgt = resize_bilinear(mask[box.slices].astype(np.float64), size, size)
        patches.append((img, np.full((size, size), 0.5), tgt))
    return patches


def fit_one_shot(
    frame0: np.ndarray,
    labels0: np.ndarray,
    instance_id: int,
    base: TinyNet | None = None,
    cfg: TrainConfig | None = None,
    bins: int = 8,
    margin: float = 0.4,
) -> OneShotModel:
    """Fit instance ``instance_id`` from the first frame only.

    Without ``base`` a colour model is fit on the instance-vs-rest split;
    with ``base`` a copy of the network is fine-tuned on frame-0 patches.
    """
    mask = np.asarray(labels0) == instance_id
    if not mask.any():
        raise ValueError(f"instance {instance_id} absent from the first frame")
    if base is None:
        return OneShotModel(instance_id, fit_color_model(frame0, mask.astype(np.float64), bins))
    net = base.copy()
    train(net, _one_shot_patches(frame0, mask, net.patch_size, margin), cfg or TrainConfig(steps=100))
    return OneShotModel(instance_id, net)


def redetect(model: OneShotModel, frame: np.ndarray, roi_params: RoiParams) -> tuple[np.ndarray, BBox | None]:
    prob = model.probability(frame)
    return prob, mask_bbox(prob, roi_params)
