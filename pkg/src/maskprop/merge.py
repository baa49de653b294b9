"""Resolve per-instance probability maps into one label map per frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MergeParams:
    bg_threshold: float = 0.5
    retrieval_policy: str = "on_missing_only"

    def __post_init__(self):
        if not 0.0 < self.bg_threshold < 1.0:
            raise ValueError("bg_threshold must lie in (0, 1)")
        if self.retrieval_policy != "on_missing_only":
            raise ValueError(f"unsupported retrieval_policy {self.retrieval_policy!r}")


def select_instance_map(
    prop: np.ndarray | None, retr: np.ndarray | None, shape: tuple[int, int] | None = None
) -> np.ndarray:
    """Propagated map if present, else the retrieved one, else all background."""
    if prop is not None:
        return prop
    if retr is not None:
        return retr
    if shape is None:
        raise ValueError("shape is required when both branches are missing")
    return np.zeros(shape)


def argmax_merge(maps, params: MergeParams | None = None) -> np.ndarray:
    """Per pixel, the id of the most probable instance, or 0 below ``bg_threshold``.

    :param maps: iterable of ``(instance_id, prob_map)``; ties go to the smaller id
    """
    params = params or MergeParams()
    maps = sorted(((int(i), np.asarray(m, dtype=np.float64)) for i, m in maps), key=lambda im: im[0])
    if not maps:
        raise ValueError("no instance maps to merge")
    ids = [i for i, _ in maps]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate instance ids {ids}")
    shape = maps[0][1].shape
    if any(m.shape != shape for _, m in maps):
        raise ValueError("instance maps differ in shape")
    stack = np.stack([m for _, m in maps])
    best = np.argmax(stack, axis=0)  # first maximum, i.e. smallest id
    labels = np.asarray(ids, dtype=np.int32)[best]
    labels[np.take_along_axis(stack, best[None], axis=0)[0] < params.bg_threshold] = 0
    return labels
