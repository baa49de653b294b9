"""End-to-end propagation over a sequence, dataset I/O and artifact emission.

Dataset layout (DAVIS style)::

    <root>/JPEGImages/<seq>/00000.png ...   RGB frames (png or jpg)
    <root>/Annotations/<seq>/00000.png ...  indexed-palette PNGs, index = instance id

Frame ``j`` of instance ``k`` is produced from frame ``j-1`` by: backward
flow -> warp -> ROI box (missing -> one-shot re-detection) -> crop ->
predictor -> paste -> optional CRF; instances are then merged by argmax.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from maskprop.core import crop, image_to_float, image_to_uint8
from maskprop.crf import CrfParams, refine
from maskprop.flow import FlowParams, estimate_flow, read_flo, write_flo
from maskprop.merge import MergeParams, argmax_merge, select_instance_map
from maskprop.metrics import InstanceScore, score_instance, summarize
from maskprop.predictor import TinyNet, TrainConfig, fit_color_model, forward, load_checkpoint, predict_baseline
from maskprop.retrieval import OneShotModel, fit_one_shot, redetect
from maskprop.roi import RoiParams, crop_instance, expand_bbox, mask_bbox, paste_instance
from maskprop.warp import warp_prob

log = logging.getLogger(__name__)

FRAME_SUFFIXES = (".png", ".jpg", ".jpeg")
_INDEX_RE = re.compile(r"^\d{5}$")
MIN_SCORED_FRAMES = 4  # quartile statistics need at least four frames


class PipelineError(RuntimeError):
    """Failure tagged with the pipeline stage that raised it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# ------------------------------------------------------------------ palette io


def davis_palette() -> np.ndarray:
    """The 256-entry PASCAL/DAVIS colour map (bit-interleaved index)."""
    pal = np.zeros((256, 3), dtype=np.uint8)
    for i in range(256):
        c, r, g, b = i, 0, 0, 0
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        pal[i] = r, g, b
    return pal


def write_annotation(path: str | Path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("instance ids must fit in 0..255 for palette PNGs")
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    img.putpalette(davis_palette().ravel().tolist())
    img.save(path)


def read_annotation(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode not in ("P", "L", "I", "I;16"):
            raise ValueError(f"{path}: annotations must be indexed or single-channel, got mode {img.mode}")
        return np.array(img, dtype=np.int32)


def read_frame(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return image_to_float(np.array(img.convert("RGB")))


def write_frame(path: str | Path, img: np.ndarray) -> None:
    Image.fromarray(image_to_uint8(img), mode="RGB").save(path)


def overlay(frame: np.ndarray, labels: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Instance colours blended over the frame at ``alpha``; background untouched."""
    colors = davis_palette().astype(np.float64) / 255.0
    out = frame.copy()
    fg = labels > 0
    out[fg] = (1 - alpha) * frame[fg] + alpha * colors[labels[fg]]
    return out


# --------------------------------------------------------------------- dataset


@dataclass
class SequenceDataset:
    name: str
    frame_paths: list[Path]
    annotation_paths: list[Path | None]
    instance_ids: list[int]
    size: tuple[int, int]  # (height, width)

    def __len__(self) -> int:
        return len(self.frame_paths)

    def frame(self, j: int) -> np.ndarray:
        return read_frame(self.frame_paths[j])

    def annotation(self, j: int) -> np.ndarray:
        path = self.annotation_paths[j]
        if path is None:
            raise PipelineError("load", f"{self.name}: no annotation for frame {j}")
        return read_annotation(path)

    @property
    def fully_annotated(self) -> bool:
        return all(p is not None for p in self.annotation_paths)


def _indexed_files(directory: Path, suffixes) -> dict[int, Path]:
    found = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() in suffixes and _INDEX_RE.match(p.stem):
            found[int(p.stem)] = p
    return found


def load_sequence(root: str | Path, name: str) -> SequenceDataset:
    root = Path(root)
    frame_dir, ann_dir = root / "JPEGImages" / name, root / "Annotations" / name
    if not frame_dir.is_dir():
        raise PipelineError("load", f"missing frame directory {frame_dir}")
    frames = _indexed_files(frame_dir, FRAME_SUFFIXES)
    if len(frames) < 2:
        raise PipelineError("load", f"{frame_dir}: need at least 2 frames, found {len(frames)}")
    if sorted(frames) != list(range(len(frames))):
        raise PipelineError("load", f"{frame_dir}: frame indices are not contiguous from 00000")
    anns = _indexed_files(ann_dir, (".png",)) if ann_dir.is_dir() else {}
    if 0 not in anns:
        raise PipelineError("load", f"missing first-frame annotation in {ann_dir}")

    size = None
    for path in [frames[i] for i in range(len(frames))] + list(anns.values()):
        with Image.open(path) as img:
            hw = (img.height, img.width)
        if size is None:
            size = hw
        elif hw != size:
            raise PipelineError("load", f"{path}: size {hw[1]}x{hw[0]} differs from {size[1]}x{size[0]}")

    ids = sorted(int(i) for i in np.unique(read_annotation(anns[0])) if i != 0)
    if not ids:
        raise PipelineError("load", f"{anns[0]}: no instances in first-frame annotation")
    return SequenceDataset(
        name,
        [frames[i] for i in range(len(frames))],
        [anns.get(i) for i in range(len(frames))],
        ids,
        size,
    )


def write_sequence(root: str | Path, name: str, frames, labels, flows=None) -> None:
    """Write frames / annotations (and optional ground-truth ``.flo`` files) in dataset layout."""
    root = Path(root)
    for sub in ("JPEGImages", "Annotations"):
        (root / sub / name).mkdir(parents=True, exist_ok=True)
    for j, (img, lab) in enumerate(zip(frames, labels)):
        write_frame(root / "JPEGImages" / name / f"{j:05d}.png", img)
        write_annotation(root / "Annotations" / name / f"{j:05d}.png", lab)
    if flows is not None:
        (root / "Flow" / name).mkdir(parents=True, exist_ok=True)
        for j, f in enumerate(flows):
            write_flo(root / "Flow" / name / f"{j:05d}_{j + 1:05d}.flo", f)


# ---------------------------------------------------------------------- config

_NESTED = {"flow": FlowParams, "roi": RoiParams, "crf": CrfParams, "merge": MergeParams, "train": TrainConfig}


@dataclass
class PipelineConfig:
    flow: FlowParams = field(default_factory=FlowParams)
    roi: RoiParams = field(default_factory=RoiParams)
    predictor: str = "baseline"
    checkpoint: str | None = None
    color_bins: int = 8
    crf: CrfParams = field(default_factory=CrfParams)
    use_crf: bool = True
    merge: MergeParams = field(default_factory=MergeParams)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=100))
    output_dir: str = "output"
    flow_cache: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.predictor not in ("baseline", "tinynet"):
            raise ValueError(f"predictor must be 'baseline' or 'tinynet', got {self.predictor!r}")
        if self.predictor == "tinynet" and not self.checkpoint:
            raise ValueError("the tinynet predictor needs a checkpoint path")
        if self.color_bins < 1:
            raise ValueError("color_bins must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> PipelineConfig:
        return _from_dict(cls, doc, "config")

    @classmethod
    def from_json(cls, path: str | Path) -> PipelineConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _from_dict(cls, doc, where):
    if not isinstance(doc, dict):
        raise ValueError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ValueError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in doc.items():
        if cls is PipelineConfig and key in _NESTED:
            value = _from_dict(_NESTED[key], value, f"{where}.{key}")
        kwargs[key] = value
    return cls(**kwargs)


# --------------------------------------------------------------- propagation

STATUS_ANNOTATED = "annotated"
STATUS_PROPAGATED = "propagated"
STATUS_RETRIEVED = "retrieved"
STATUS_MISSING = "missing"


@dataclass
class PropagationResult:
    labels: list[np.ndarray]
    status: list[dict[int, str]]  # per frame, per instance
    instance_ids: list[int]


class _Predictor:
    """Applies the configured propagation function to one ROI."""

    def __init__(self, cfg: PipelineConfig, frame0: np.ndarray, labels0: np.ndarray, ids):
        self.net: TinyNet | None = None
        self.color = {}
        if cfg.predictor == "tinynet":
            self.net = load_checkpoint(cfg.checkpoint)
        else:
            for k in ids:
                self.color[k] = fit_color_model(frame0, (labels0 == k).astype(np.float64), cfg.color_bins)

    @property
    def patch_size(self) -> int | None:
        return self.net.patch_size if self.net is not None else None

    def __call__(self, k: int, img_patch: np.ndarray, prior: np.ndarray) -> np.ndarray:
        if self.net is not None:
            return forward(self.net, img_patch, prior)
        return predict_baseline(self.color[k], img_patch, prior)


def _flow_for(ds: SequenceDataset, j: int, prev, cur, cfg: PipelineConfig) -> np.ndarray:
    cache = Path(cfg.flow_cache) / ds.name / f"{j - 1:05d}_{j:05d}.flo" if cfg.flow_cache else None
    if cache is not None and cache.exists():
        try:
            flow = read_flo(cache)
            if flow.shape[:2] == cur.shape[:2]:
                return flow.astype(np.float64)
            log.warning("flow cache %s has wrong size; recomputing", cache)
        except ValueError as err:
            log.warning("invalid flow cache %s (%s); recomputing", cache, err)
    flow = estimate_flow(prev, cur, cfg.flow)
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        write_flo(cache, flow)
    return flow


def _propagate_instance(k, prob_prev, flow, frame, predictor, one_shot, cfg):
    h, w = prob_prev.shape
    roi = cfg.roi
    warped = warp_prob(prob_prev, flow)
    prop = None
    box = mask_bbox(warped, roi)
    if box is not None:
        box = expand_bbox(box, roi.margin, w, h)
        img_p, prior_p = crop_instance(frame, warped, box, predictor.patch_size)
        prop = paste_instance(warped, predictor(k, img_p, prior_p), box)
        if np.count_nonzero(prop >= roi.threshold) < roi.min_pixels:
            prop = None

    retr = None
    if prop is None:
        rprob, rbox = redetect(one_shot, frame, roi)
        if rbox is not None:
            rbox = expand_bbox(rbox, roi.margin, w, h)
            retr = paste_instance(rprob, crop(rprob, rbox), rbox)

    status = STATUS_PROPAGATED if prop is not None else STATUS_RETRIEVED if retr is not None else STATUS_MISSING
    chosen = select_instance_map(prop, retr, (h, w))
    if cfg.use_crf and status != STATUS_MISSING:
        chosen = refine(chosen, frame, cfg.crf)
    return chosen, status


def propagate_sequence(ds: SequenceDataset, cfg: PipelineConfig) -> PropagationResult:
    """Propagate the first-frame annotation through the whole sequence."""
    frame0, labels0 = ds.frame(0), ds.annotation(0)
    ids = ds.instance_ids
    try:
        predictor = _Predictor(cfg, frame0, labels0, ids)
    except (OSError, ValueError) as err:
        raise PipelineError("predictor", str(err)) from err
    base = predictor.net
    train_cfg = dataclasses.replace(cfg.train, seed=cfg.seed)
    one_shot: dict[int, OneShotModel] = {
        k: fit_one_shot(frame0, labels0, k, base=base, cfg=train_cfg, bins=cfg.color_bins, margin=cfg.roi.margin)
        for k in ids
    }

    probs = {k: (labels0 == k).astype(np.float64) for k in ids}
    labels = [labels0.copy()]
    status = [{k: STATUS_ANNOTATED for k in ids}]
    prev = frame0
    for j in range(1, len(ds)):
        cur = ds.frame(j)
        try:
            flow = _flow_for(ds, j, prev, cur, cfg)
        except (OSError, ValueError) as err:
            raise PipelineError("flow", f"{ds.name} frame {j}: {err}") from err
        frame_status = {}
        for k in ids:
            try:
                probs[k], frame_status[k] = _propagate_instance(k, probs[k], flow, cur, predictor, one_shot[k], cfg)
            except (ValueError, FloatingPointError) as err:
                raise PipelineError("propagate", f"{ds.name} frame {j} instance {k}: {err}") from err
        labels.append(argmax_merge(probs.items(), cfg.merge))
        status.append(frame_status)
        log.info("%s frame %d: %s", ds.name, j, frame_status)
        prev = cur
    return PropagationResult(labels, status, ids)


# ------------------------------------------------------------------ evaluation


def evaluate(predictions, gts, instance_ids, sequence: str = "sequence", tol_px: float | None = None):
    """Per-instance J/F statistics and a benchmark-style summary row.

    Frame 0 is the given annotation and is excluded from scoring.

    :return: ``(list of InstanceScore, summary dict)``
    """
    if len(predictions) != len(gts):
        raise PipelineError("eval", f"{len(predictions)} predicted frames but {len(gts)} ground-truth frames")
    if any(g is None for g in gts):
        raise PipelineError("eval", "ground truth missing for some frames")
    preds, gts = list(predictions)[1:], list(gts)[1:]
    try:
        scores = [score_instance(sequence, k, preds, gts, tol_px) for k in instance_ids]
    except ValueError as err:
        raise PipelineError("eval", str(err)) from err
    return scores, summarize(scores)


def write_metrics(out_dir: str | Path, scores: list[InstanceScore], summary: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [s.row() for s in scores]
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))


def write_predictions(out_dir: str | Path, ds: SequenceDataset, result: PropagationResult, overlays: bool = False) -> Path:
    seq_dir = Path(out_dir) / ds.name
    seq_dir.mkdir(parents=True, exist_ok=True)
    for j, lab in enumerate(result.labels):
        write_annotation(seq_dir / f"{j:05d}.png", lab)
    if overlays:
        ov_dir = Path(out_dir) / "overlays" / ds.name
        ov_dir.mkdir(parents=True, exist_ok=True)
        for j, lab in enumerate(result.labels):
            write_frame(ov_dir / f"{j:05d}.png", overlay(ds.frame(j), lab))
    return seq_dir


def run(root, name, cfg: PipelineConfig, overlays: bool = False) -> tuple[PropagationResult, dict | None]:
    """Load, propagate, write predictions and (if fully annotated) metrics."""
    ds = load_sequence(root, name)
    result = propagate_sequence(ds, cfg)
    write_predictions(cfg.output_dir, ds, result, overlays)
    summary = None
    if ds.fully_annotated and len(ds) - 1 < MIN_SCORED_FRAMES:
        log.warning("%s: %d frames after the first is too few to score; metrics skipped", ds.name, len(ds) - 1)
    elif ds.fully_annotated:
        gts = [ds.annotation(j) for j in range(len(ds))]
        scores, summary = evaluate(result.labels, gts, ds.instance_ids, ds.name)
        write_metrics(cfg.output_dir, scores, summary)
    return result, summary


# -------------------------------------------------------- training guidance


def jitter_mask(mask: np.ndarray, rng: np.random.Generator, max_shift: float = 8.0, max_scale: float = 0.1) -> np.ndarray:
    """Randomly shifted and scaled copy of a binary mask (bilinear, values in [0, 1])."""
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    cy, cx = (ys.mean(), xs.mean()) if len(ys) else ((h - 1) / 2, (w - 1) / 2)
    s = 1.0 + rng.uniform(-max_scale, max_scale)
    ty, tx = rng.uniform(-max_shift, max_shift, 2)
    # output (y, x) samples input at c + (p - c - t) / s
    offset = np.array([cy, cx]) - (np.array([cy, cx]) + np.array([ty, tx])) / s
    return ndimage.affine_transform(mask.astype(np.float64), np.eye(2) / s, offset=offset, order=1, mode="constant")


def guidance_samples(frames, labels, roi: RoiParams, rng: np.random.Generator, per_frame: int = 1):
    """Training triples ``(image patch, jittered prior patch, target patch)`` from annotated frames."""
    samples = []
    for img, lab in zip(frames, labels):
        h, w = lab.shape
        for k in (int(i) for i in np.unique(lab) if i != 0):
            target = (lab == k).astype(np.float64)
            for _ in range(per_frame):
                prior = jitter_mask(target, rng)
                box = mask_bbox(prior, roi) or mask_bbox(target, roi)
                if box is None:
                    continue
                box = expand_bbox(box, roi.margin, w, h)
                img_p, prior_p = crop_instance(img, prior, box, roi.patch_size)
                _, target_p = crop_instance(img, target, box, roi.patch_size)
                samples.append((img_p, prior_p, target_p))
    return samples
