"""Region Jaccard (J) and boundary F-measure (F) with Mean / Recall / Decay."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
from scipy import ndimage


def jaccard(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shapes differ: {pred.shape} vs {gt.shape}")
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a 4-neighbour in the background or on the image border."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    return mask & ~interior


def default_tolerance(shape: tuple[int, int]) -> float:
    return max(1.0, 0.008 * math.hypot(*shape))


def _matched_fraction(src: np.ndarray, dst: np.ndarray, tol: float) -> float:
    dist = ndimage.distance_transform_edt(~dst)
    return np.count_nonzero(dist[src] <= tol) / np.count_nonzero(src)


def boundary_f(pred: np.ndarray, gt: np.ndarray, tol_px: float | None = None) -> float:
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shapes differ: {pred.shape} vs {gt.shape}")
    tol = default_tolerance(pred.shape) if tol_px is None else tol_px
    if tol < 0:
        raise ValueError("tolerance must be >= 0")
    pb, gb = boundary(pred), boundary(gt)
    if not pb.any() and not gb.any():
        return 1.0
    if not pb.any() or not gb.any():
        return 0.0
    precision = _matched_fraction(pb, gb, tol)
    recall = _matched_fraction(gb, pb, tol)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class SequenceStats:
    mean: float
    recall: float
    decay: float


def sequence_stats(scores) -> SequenceStats:
    """Mean, fraction above 0.5, and first-quartile minus last-quartile mean."""
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) < 4:
        raise ValueError(f"need at least 4 frames, got {len(scores)}")
    q = math.ceil(len(scores) / 4)
    return SequenceStats(
        mean=float(scores.mean()),
        recall=float(np.mean(scores > 0.5)),
        decay=float(scores[:q].mean() - scores[-q:].mean()),
    )


def overall(j_mean: float, f_mean: float) -> float:
    """Arithmetic mean of J and F (percent), computed in decimal to avoid binary drift."""
    return float((Decimal(str(j_mean)) + Decimal(str(f_mean))) / 2)


def overall_display(j_mean: float, f_mean: float) -> str:
    """One-decimal rendering of :func:`overall` (half-up)."""
    return str(Decimal(str(overall(j_mean, f_mean))).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass
class InstanceScore:
    sequence: str
    instance_id: int
    j: SequenceStats
    f: SequenceStats
    j_frames: list[float]
    f_frames: list[float]

    def row(self) -> dict:
        return {
            "sequence": self.sequence,
            "instance": self.instance_id,
            **{f"J_{k}": v for k, v in asdict(self.j).items()},
            **{f"F_{k}": v for k, v in asdict(self.f).items()},
        }


def score_instance(sequence: str, instance_id: int, preds, gts, tol_px: float | None = None) -> InstanceScore:
    """Score one instance over aligned lists of label maps."""
    j = [jaccard(p == instance_id, g == instance_id) for p, g in zip(preds, gts)]
    f = [boundary_f(p == instance_id, g == instance_id, tol_px) for p, g in zip(preds, gts)]
    return InstanceScore(sequence, instance_id, sequence_stats(j), sequence_stats(f), j, f)


def summarize(scores: list[InstanceScore]) -> dict:
    """Table-style summary in percent: instances averaged within a sequence, then across sequences."""
    by_seq: dict[str, list[InstanceScore]] = {}
    for s in scores:
        by_seq.setdefault(s.sequence, []).append(s)
    cols = {}
    for measure in ("j", "f"):
        for stat in ("mean", "recall", "decay"):
            per_seq = [np.mean([getattr(getattr(s, measure), stat) for s in group]) for group in by_seq.values()]
            cols[f"{measure.upper()}_{stat}"] = round(100.0 * float(np.mean(per_seq)), 4)
    return {
        "overall": overall(cols["J_mean"], cols["F_mean"]),
        **cols,
        "sequences": len(by_seq),
        "instances": len(scores),
    }
