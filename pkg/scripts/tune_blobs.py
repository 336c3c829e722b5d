"""Sweep the blobs noise level and report full-supervision test accuracy.

Used to pick the benchmark's noise so that a model trained on every label
lands near 97% accuracy.

    python3 scripts/tune_blobs.py --center-scale 0.25 --ratios 1.2 1.4 1.6 1.8
"""

import argparse
import dataclasses

import numpy as np

from aggmatch import data, runner
from aggmatch.config import load_config
from aggmatch.trainer import Trainer, predict


def full_supervision_accuracy(cfg, noise, iterations, seed=0):
    d = dataclasses.replace(cfg.dataset, noise=noise)
    train, test = runner.load_datasets(dataclasses.replace(cfg, dataset=d))
    per_class = int(np.bincount(train.labels).min())
    labeled, _ = data.split(train, data.SplitSpec(labels_per_class=per_class, seed=seed))
    tcfg = dataclasses.replace(cfg.train, method="supervised", iterations=iterations, batch_size=64, seed=seed)
    trainer = Trainer(tcfg, labeled, None, cfg.augment, cfg.model.hidden, cfg.model.feature_dim)
    for _ in range(iterations):
        trainer.step()
    _, probs = predict(trainer.state.params, test.instances)
    return float(np.mean(np.argmax(probs, axis=1) == test.labels))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/blobs_default.json")
    ap.add_argument("--center-scale", type=float, default=None)
    ap.add_argument("--ratios", type=float, nargs="+", default=[1.0, 1.4, 1.6, 1.8, 2.0],
                    help="noise as a multiple of the center scale")
    ap.add_argument("--iterations", type=int, default=2000)
    args = ap.parse_args()
    runner.tune_allocator()
    cfg = load_config(args.config)
    if args.center_scale is not None:
        cfg = dataclasses.replace(cfg, dataset=dataclasses.replace(cfg.dataset, center_scale=args.center_scale))
    cs = cfg.dataset.center_scale
    print(f"center_scale={cs}")
    for r in args.ratios:
        acc = full_supervision_accuracy(cfg, r * cs, args.iterations)
        print(f"noise={r * cs:.4f} (ratio {r}): full-supervision test accuracy {acc:.4f}")


if __name__ == "__main__":
    main()
