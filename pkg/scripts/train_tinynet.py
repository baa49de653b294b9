"""Train TinyNet on seeded synthetic sequences and report held-out BCE.

Training sequences use seeds ``0 .. train_seqs-1``; held-out ones start at
1000 so the two sets never share a draw.

    python3 scripts/train_tinynet.py --out tinynet.ckpt --steps 400
"""

import argparse
import time

import numpy as np

from maskprop.pipeline import guidance_samples
from maskprop.predictor import TinyNet, TrainConfig, bce_loss, forward, save_checkpoint, train
from maskprop.roi import RoiParams
from maskprop.synth import generate, training_spec

HELD_OUT_SEED = 1000


def build(seeds, roi, rng, per_frame=1):
    samples = []
    for s in seeds:
        seq = generate(training_spec(s))
        samples += guidance_samples(seq.frames, seq.labels, roi, rng, per_frame)
    return samples


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--lr", type=float, default=1.0)
    ap.add_argument("--batch-size", type=int, default=8)
    ap.add_argument("--patch-size", type=int, default=64)
    ap.add_argument("--train-seqs", type=int, default=40)
    ap.add_argument("--val-seqs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    roi = RoiParams(patch_size=args.patch_size)
    train_set = build(range(args.train_seqs), roi, rng)
    val_set = build(range(HELD_OUT_SEED, HELD_OUT_SEED + args.val_seqs), roi, rng)

    def val_loss(net):
        return float(np.mean([bce_loss(forward(net, i, p), t) for i, p, t in val_set]))

    net = TinyNet.create(seed=args.seed, patch_size=args.patch_size)
    print(f"{net.n_params} parameters, {len(train_set)} training / {len(val_set)} held-out patches")
    print(f"held-out BCE before: {val_loss(net):.4f}")
    cfg = TrainConfig(learning_rate=args.lr, steps=args.steps, batch_size=args.batch_size, seed=args.seed)
    t0 = time.perf_counter()
    net, trace = train(net, train_set, cfg)
    print(f"train BCE {trace[0]:.4f} -> {np.mean(trace[-20:]):.4f} in {time.perf_counter() - t0:.1f} s; "
          f"held-out BCE after: {val_loss(net):.4f}")
    save_checkpoint(net, args.out)
    print(f"saved {args.out}")


if __name__ == "__main__":
    main()
