"""Run (method, seed) grids from an ``ExperimentConfig`` and write results."""

import ctypes
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import data
from .errors import TrainingAborted
from .trainer import METRIC_COLUMNS, Trainer

log = logging.getLogger(__name__)

FLOAT_FORMAT = ".9g"
OUTPUT_ROOT_ENV = "AGGMATCH_OUTPUT_ROOT"


def tune_allocator():
    """Keep glibc from returning large numpy temporaries to the OS.

    Each training step allocates several (batch x queue) float arrays; by
    default glibc mmaps them and every step pays the page faults again.
    """
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 256 * 1024 * 1024)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 512 * 1024 * 1024)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


def derive_seed(base, run_seed):
    return int(np.random.SeedSequence([base, run_seed]).generate_state(1)[0])


def output_dir(cfg):
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root:
        return os.path.join(root, os.path.basename(os.path.normpath(cfg.output_dir)))
    return cfg.output_dir


# -- data ----------------------------------------------------------------------

def load_datasets(cfg):
    """(train, test) datasets for a config; the test set is a holdout unless a
    separate test file is given."""
    d = cfg.dataset
    if d.source == "synth":
        full = data.synth(d.kind, d.n, d.classes, d.noise, d.seed, dim=d.dim, center_scale=d.center_scale)
    else:
        full = data.load(d.path, d.source, d.labels_path)
    if d.test_path:
        return full, data.load(d.test_path, d.source, d.test_labels_path)
    return data.holdout(full, d.test_fraction, d.seed)


def make_split(cfg, train, seed):
    """Labeled (with noise applied) and unlabeled sets for one run seed."""
    spec = data.SplitSpec(cfg.split.labels_per_class, derive_seed(cfg.split.seed, seed), cfg.train.batch_size, cfg.train.mu)
    labeled, unlabeled = data.split(train, spec)
    if cfg.noise.rate > 0 and cfg.noise.mapping:
        noise = data.NoiseSpec(cfg.noise.mapping, cfg.noise.rate, derive_seed(cfg.noise.seed, seed))
        labeled = data.inject_noise(labeled, noise)
    return labeled, unlabeled


def augmentation_for(cfg, train):
    aug = cfg.augment
    if aug.grid_shape is None and train.grid_shape is not None:
        aug = dataclasses.replace(aug, grid_shape=tuple(train.grid_shape))
    return aug


# -- runs ----------------------------------------------------------------------

@dataclass
class RunResult:
    method: str
    seed: int
    rows: list
    evals: dict
    wall_clock: float
    final: dict = field(default_factory=dict)
    trainer: Trainer = field(default=None, repr=False)


def run_one(cfg, method, seed, datasets=None, keep_trainer=False):
    """Train one (method, seed) pair; returns a ``RunResult``."""
    train, test = datasets if datasets is not None else load_datasets(cfg)
    labeled, unlabeled = make_split(cfg, train, seed)
    tcfg = dataclasses.replace(cfg.train, method=method, seed=seed)
    trainer = Trainer(tcfg, labeled, unlabeled, augmentation_for(cfg, train), cfg.model.hidden, cfg.model.feature_dim)
    t0 = time.perf_counter()
    try:
        rows, evals = trainer.run(test.instances, test.labels, unlabeled)
    except TrainingAborted as e:
        e.diagnostics.update(method=method, seed=seed)
        raise
    wall = time.perf_counter() - t0
    final = evals[max(evals)] if evals else {}
    return RunResult(method, seed, rows, evals, wall, final, trainer if keep_trainer else None)


def _run_job(args):
    cfg, method, seed, out = args
    tune_allocator()
    result = run_one(cfg, method, seed, keep_trainer=True)
    if out is not None:
        write_metrics_csv(os.path.join(out, f"metrics_{method}_{seed}.csv"), result.rows)
        result.trainer.save(os.path.join(out, f"checkpoint_{method}_{seed}"))
    result.trainer = None
    return result


def run_grid(cfg, out=None, parallel=None, max_workers=None):
    """Run every (method, seed) pair; optionally write per-run outputs to ``out``."""
    jobs = [(cfg, m, s, out) for m in cfg.methods for s in cfg.seeds]
    parallel = cfg.parallel_seeds if parallel is None else parallel
    if parallel and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


# -- serialization -------------------------------------------------------------

def fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), FLOAT_FORMAT)


def write_metrics_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(fmt(row[c]) for c in METRIC_COLUMNS) + "\n")


def _round(value):
    """JSON-ready value: floats at 9 significant digits, NaN as null."""
    if isinstance(value, dict):
        return {str(k): _round(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return None if math.isnan(v) or math.isinf(v) else float(format(v, FLOAT_FORMAT))
    return value


def summarize(results):
    """Per-method mean and population std of final test accuracy."""
    summary = {}
    for method in dict.fromkeys(r.method for r in results):
        accs = np.array([r.final["test_acc"] for r in results if r.method == method])
        per_class = np.array([r.final["per_class_acc"] for r in results if r.method == method])
        summary[method] = {
            "n_seeds": len(accs),
            "test_acc_mean": float(accs.mean()),
            "test_acc_std": float(accs.std()),
            "per_class_acc_mean": per_class.mean(axis=0).tolist(),
        }
    return summary


def build_report(cfg, results, wall_clock):
    runs = []
    for r in results:
        series = [
            {
                "iter": it,
                "precision": m.get("pl_precision"),
                "recall": m.get("pl_recall"),
                "weighted_precision": m.get("pl_weighted_precision"),
                "mean_conf": m.get("mean_conf"),
                "test_acc": m["test_acc"],
                "warmup": m.get("warmup"),
            }
            for it, m in sorted(r.evals.items())
        ]
        runs.append({
            "method": r.method,
            "seed": r.seed,
            "final_test_acc": r.final.get("test_acc"),
            "per_class_acc": r.final.get("per_class_acc"),
            "pseudo_label_series": series,
            "wall_clock_s": r.wall_clock,
        })
    return _round({
        "version": __version__,
        "config": cfg.to_dict(),
        "runs": runs,
        "summary": summarize(results),
        "wall_clock_s": wall_clock,
    })


def run_experiment(cfg):
    """Run the grid and write metrics CSVs, checkpoints and ``report.json``."""
    out = output_dir(cfg)
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    results = run_grid(cfg, out)
    report = build_report(cfg, results, time.perf_counter() - t0)
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return report
