"""Ablations on the blobs benchmark, one table per study.

    python3 scripts/run_ablations.py [--study NAME ...] [--seeds 0 1 2] [--iterations N]

Studies: noise, thresholding, momentum, terms, orientation, labeled_storage.
Each prints seed-mean final test accuracy per variant.
"""

import argparse
import dataclasses
import json
import time

import numpy as np

from aggmatch import runner
from aggmatch.config import load_config


def with_train(cfg, **kw):
    return dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **kw))


def studies(cfg):
    noisy = dataclasses.replace(cfg, noise=dataclasses.replace(cfg.noise, mapping={0: 1, 1: 0, 2: 3, 3: 2}, rate=0.25))
    return {
        "noise": [
            (f"{m} clean", cfg, m) for m in ("fixmatch", "aggmatch")
        ] + [(f"{m} noisy", noisy, m) for m in ("fixmatch", "aggmatch")],
        "thresholding": [("weighting", cfg, "aggmatch")] + [
            (f"tau_u={t}", with_train(cfg, confidence_mode="thresholding", tau_u=t), "aggmatch") for t in (0.1, 0.5, 1.0, 1.5)
        ],
        "momentum": [
            (f"L=64 lambda_m={lam}", with_train(cfg, queue_size=64, lambda_m=lam), "aggmatch") for lam in (0.0, 0.99, 0.999)
        ],
        "terms": [
            ("cosine only", with_train(cfg, lambda_sim=0.0), "aggmatch"),
            ("cosine + class term", cfg, "aggmatch"),
        ],
        "orientation": [
            (o, with_train(cfg, class_term_orientation=o), "aggmatch") for o in ("negative_distance", "paper_literal")
        ],
        "labeled_storage": [
            (f"store_labeled_onehot={v}", with_train(cfg, store_labeled_onehot=v), "aggmatch") for v in (False, True)
        ],
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/blobs_default.json")
    ap.add_argument("--study", nargs="*", default=None)
    ap.add_argument("--seeds", type=int, nargs="*", default=None)
    ap.add_argument("--iterations", type=int, default=None)
    ap.add_argument("--json", default=None, help="optional path for a JSON summary")
    args = ap.parse_args()
    runner.tune_allocator()
    cfg = load_config(args.config)
    if args.seeds:
        cfg = dataclasses.replace(cfg, seeds=args.seeds)
    if args.iterations:
        cfg = with_train(cfg, iterations=args.iterations)
    data = runner.load_datasets(cfg)
    table = studies(cfg)
    out = {}
    for name in args.study or list(table):
        print(f"== {name}")
        out[name] = {}
        for label, variant, method in table[name]:
            t0 = time.perf_counter()
            accs = [runner.run_one(variant, method, s, data).final["test_acc"] for s in variant.seeds]
            out[name][label] = {"mean": float(np.mean(accs)), "std": float(np.std(accs)), "per_seed": accs}
            print(f"  {label:<32} {np.mean(accs):.4f} +- {np.std(accs):.4f}  ({time.perf_counter() - t0:.0f} s)", flush=True)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(out, fh, indent=2)


if __name__ == "__main__":
    main()
