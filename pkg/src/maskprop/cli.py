"""Command-line entry point: ``maskprop {run,train-predictor,eval,synth}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from maskprop import pipeline
from maskprop.metrics import summarize
from maskprop.pipeline import PipelineConfig, PipelineError
from maskprop.predictor import TinyNet, TrainConfig, save_checkpoint, train
from maskprop.synth import SynthSpec, generate

log = logging.getLogger("maskprop")


def _config(args) -> PipelineConfig:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.predictor:
        doc["predictor"] = args.predictor
    if args.no_crf:
        doc["use_crf"] = False
    if args.flow_cache:
        doc["flow_cache"] = args.flow_cache
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out:
        doc["output_dir"] = args.out
    try:
        return PipelineConfig.from_dict(doc)
    except (TypeError, ValueError) as err:
        raise PipelineError("config", str(err)) from err


def cmd_run(args) -> int:
    cfg = _config(args)
    result, summary = pipeline.run(args.root, args.seq, cfg, overlays=args.overlays)
    missing = sum(s == pipeline.STATUS_MISSING for frame in result.status for s in frame.values())
    print(f"{args.seq}: {len(result.labels)} frames -> {Path(cfg.output_dir) / args.seq} ({missing} missing instance-frames)")
    if summary is not None:
        print(json.dumps(summary, indent=2))
    return 0


def _sequence_dirs(directory: Path) -> dict[str, Path]:
    if any(p.suffix == ".png" for p in directory.iterdir()):
        return {directory.name: directory}
    return {p.name: p for p in sorted(directory.iterdir()) if p.is_dir() and p.name != "overlays"}


def cmd_eval(args) -> int:
    pred_root, gt_root = Path(args.pred_dir), Path(args.gt_dir)
    preds, gts = _sequence_dirs(pred_root), _sequence_dirs(gt_root)
    if len(gts) == 1 and len(preds) == 1:
        preds = {next(iter(gts)): next(iter(preds.values()))}
    scores = []
    for name, gt_dir in gts.items():
        if name not in preds:
            raise PipelineError("eval", f"no predictions for sequence {name}")
        gt_files = sorted(gt_dir.glob("*.png"))
        pred_files = [preds[name] / p.name for p in gt_files]
        missing = [p.name for p in pred_files if not p.exists()]
        if missing:
            raise PipelineError("eval", f"{name}: missing predicted frames {missing[:3]}")
        gt = [pipeline.read_annotation(p) for p in gt_files]
        pred = [pipeline.read_annotation(p) for p in pred_files]
        ids = sorted(int(i) for i in np.unique(gt[0]) if i != 0)
        seq_scores, _ = pipeline.evaluate(pred, gt, ids, name)
        scores.extend(seq_scores)
    summary = summarize(scores)
    out = Path(args.out) if args.out else pred_root
    pipeline.write_metrics(out, scores, summary)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_synth(args) -> int:
    try:
        spec = SynthSpec.from_json(args.spec)
        seq = generate(spec)
    except (TypeError, ValueError) as err:
        raise PipelineError("synth", str(err)) from err
    name = args.name or spec.name
    pipeline.write_sequence(args.out, name, seq.frames, seq.labels, seq.flows)
    print(f"wrote {len(seq.frames)} frames of '{name}' to {args.out}")
    return 0


def cmd_train(args) -> int:
    try:
        spec = SynthSpec.from_json(args.synth_spec)
        seq = generate(spec)
    except (TypeError, ValueError) as err:
        raise PipelineError("synth", str(err)) from err
    cfg = PipelineConfig.from_dict(json.loads(Path(args.config).read_text())) if args.config else PipelineConfig()
    rng = np.random.default_rng(args.seed)
    roi = dataclasses.replace(cfg.roi, patch_size=args.patch_size)
    samples = pipeline.guidance_samples(seq.frames, seq.labels, roi, rng, per_frame=args.per_frame)
    if not samples:
        raise PipelineError("train", "no training samples could be built from the synthetic sequence")
    net = TinyNet.create(seed=args.seed, patch_size=args.patch_size)
    tcfg = TrainConfig(learning_rate=args.lr, steps=args.steps, batch_size=args.batch_size, seed=args.seed)
    try:
        net, trace = train(net, samples, tcfg)
    except FloatingPointError as err:
        raise PipelineError("train", str(err)) from err
    save_checkpoint(net, args.out)
    print(f"trained on {len(samples)} patches: loss {trace[0]:.4f} -> {np.mean(trace[-10:]):.4f}; saved {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="maskprop", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="propagate the first-frame annotation through a sequence")
    p.add_argument("root")
    p.add_argument("seq")
    p.add_argument("--config")
    p.add_argument("--no-crf", action="store_true")
    p.add_argument("--predictor", choices=("baseline", "tinynet"))
    p.add_argument("--overlays", action="store_true")
    p.add_argument("--flow-cache")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (overrides config output_dir)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train-predictor", help="train a TinyNet checkpoint on a synthetic sequence")
    p.add_argument("--synth-spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--patch-size", type=int, default=64)
    p.add_argument("--per-frame", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predicted annotations against ground truth")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic sequence in dataset layout")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name")
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except PipelineError as err:
        print(f"error {err}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as err:
        print(f"error [{args.command}] {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
