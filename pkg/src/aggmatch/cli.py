"""Command-line entry point.

    aggmatch run <config.json> [--section.key=value ...]
    aggmatch dump <config.json> --what=features|attention|queue [--method M] [--seed S] [--probe N]

Exit codes: 0 success, 2 invalid config or missing checkpoint, 3 training
aborted (a diagnostic JSON is written next to the metrics).
"""

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import runner
from .aggregation import attention_weights
from .config import load_config
from .errors import ConfigError, ParseError, TrainingAborted
from .trainer import load_checkpoint, predict

log = logging.getLogger("aggmatch")

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3


def _overrides(extra):
    out = []
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(f"unrecognized argument {item!r}; overrides look like --section.key=value")
        out.append(item[2:])
    return out


def cmd_run(args, extra):
    cfg = load_config(args.config, _overrides(extra))
    out = runner.output_dir(cfg)
    try:
        report = runner.run_experiment(cfg)
    except TrainingAborted as e:
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, f"abort_{e.diagnostics.get('method', 'run')}_{e.diagnostics.get('seed', 0)}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(runner._round({"error": str(e), **e.diagnostics}), fh, indent=2)
        print(f"training aborted: {e}; diagnostics in {path}", file=sys.stderr)
        return EXIT_ABORT
    for method, s in report["summary"].items():
        print(f"{method}: test acc {s['test_acc_mean']:.4f} +- {s['test_acc_std']:.4f} over {s['n_seeds']} seed(s)")
    print(f"wrote {os.path.join(out, 'report.json')}")
    return EXIT_OK


def _fmt_row(values):
    return [runner.fmt(v) for v in values]


def cmd_dump(args, extra):
    cfg = load_config(args.config, _overrides(extra))
    method = args.method or cfg.methods[0]
    seed = cfg.seeds[0] if args.seed is None else args.seed
    out = runner.output_dir(cfg)
    ckpt = os.path.join(out, f"checkpoint_{method}_{seed}")
    if not os.path.isfile(os.path.join(ckpt, "state.json")):
        print(f"no checkpoint at {ckpt}; run the experiment first", file=sys.stderr)
        return EXIT_CONFIG
    train_cfg, state = load_checkpoint(ckpt)
    path = os.path.join(out, f"dump_{args.what}_{method}_{seed}.csv")

    if args.what == "queue":
        state.queue.dump_csv(path)
    else:
        _, test = runner.load_datasets(cfg)
        if args.what == "features":
            feats, _ = predict(state.params, test.instances)
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["label", *(f"v{i}" for i in range(feats.shape[1]))])
                for y, f in zip(test.labels, feats):
                    w.writerow([int(y), *_fmt_row(f)])
        else:
            c_feats, c_dists, c_cls = state.queue.contents()
            if len(c_cls) == 0:
                print("queue is empty; nothing to attend over", file=sys.stderr)
                return EXIT_CONFIG
            feats, probs = predict(state.params, test.instances[: args.probe])
            weights = attention_weights(feats, probs, c_feats, c_dists, train_cfg.aggregation)
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["query", *(f"c{j}" for j in range(len(c_cls)))])
                w.writerow(["class", *(int(c) for c in c_cls)])
                for i, row in enumerate(weights):
                    w.writerow([i, *_fmt_row(row)])
    print(f"wrote {path}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="aggmatch", description="AggMatch / FixMatch / supervised experiment runner")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="train every (method, seed) pair of a config")
    run.add_argument("config")
    dump = sub.add_parser("dump", help="write CSV dumps from a saved checkpoint")
    dump.add_argument("config")
    dump.add_argument("--what", required=True, choices=("features", "attention", "queue"))
    dump.add_argument("--method", default=None)
    dump.add_argument("--seed", type=int, default=None)
    dump.add_argument("--probe", type=int, default=16, help="number of test items used as attention queries")
    return p


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    runner.tune_allocator()
    args, extra = build_parser().parse_known_args(argv)
    handler = cmd_run if args.command == "run" else cmd_dump
    try:
        return handler(args, extra)
    except (ConfigError, ParseError, FileNotFoundError) as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAborted as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
