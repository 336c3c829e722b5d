"""Training step and loop for AggMatch, the FixMatch baseline and a
supervised-only baseline.

Per step (AggMatch), in this order:
  1. forward weak/strong unlabeled views under the model;
  2. forward weak unlabeled and labeled views under the momentum model and
     enqueue them (unlabeled through the confidence gate);
  3. partition the queue into M subsets and aggregate each query per subset;
  4. vote -> confidence, mean -> sharpen -> pseudo label;
  5. supervised + weighted unsupervised cross-entropy, SGD, momentum update.

Pseudo labels and confidences are constants with respect to the model
parameters; gradients reach the model only through the labeled weak view
and the unlabeled strong view.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import aggregation as agg
from .confidence import confidence as confidence_of
from .confidence import vote
from .data import BatchStream, SplitSpec, UnlabeledBatch
from .errors import ParameterError, TrainingAborted
from .model import (
    Params,
    backward,
    forward,
    init_params,
    load_params,
    momentum_update,
    save_params,
    sgd_step,
    xent_logit_grad,
)
from .numerics import cross_entropy, one_hot, sharpen
from .queue import ClassBalancedQueue

log = logging.getLogger(__name__)

METHODS = ("aggmatch", "fixmatch", "supervised")
CONFIDENCE_MODES = ("weighting", "thresholding")
LABEL_MODES = ("hard", "soft")


@dataclass
class TrainConfig:
    method: str = "aggmatch"
    iterations: int = 5000
    lr: float = 0.03
    lambda_u: float = 1.0  # unsupervised loss weight
    T: float = 0.5  # sharpening temperature
    tau: float = 0.95  # confidence gate (queue / FixMatch)
    tau_sim: float = 0.05
    lambda_sim: float = 0.5
    lambda_m: float = 0.999
    queue_size: int = 256  # L, per class
    num_subsets: int = 8  # M
    batch_size: int = 32
    mu: int = 3
    confidence_mode: str = "weighting"
    tau_u: float = 1.0  # only used when confidence_mode == "thresholding"
    store_labeled_onehot: bool = False
    class_term_orientation: str = "negative_distance"
    fixmatch_label_mode: str = "hard"
    eval_every: int = 100
    seed: int = 0

    def __post_init__(self):
        checks = [
            (self.method in METHODS, f"method must be one of {METHODS}"),
            (self.iterations >= 0, "iterations must be >= 0"),
            (self.lr >= 0, "lr must be >= 0"),
            (self.lambda_u >= 0, "lambda_u must be >= 0"),
            (self.T > 0, "T must be > 0"),
            (0 < self.tau <= 1, "tau must lie in (0, 1]"),
            (self.tau_sim > 0, "tau_sim must be > 0"),
            (self.lambda_sim >= 0, "lambda_sim must be >= 0"),
            (0 <= self.lambda_m <= 1, "lambda_m must lie in [0, 1]"),
            (self.queue_size >= 1, "queue_size must be >= 1"),
            (1 <= self.num_subsets <= self.queue_size, "num_subsets must lie in [1, queue_size]"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.mu >= 0, "mu must be >= 0"),
            (self.confidence_mode in CONFIDENCE_MODES, f"confidence_mode must be one of {CONFIDENCE_MODES}"),
            (self.tau_u >= 0, "tau_u must be >= 0"),
            (self.class_term_orientation in agg.ORIENTATIONS, f"class_term_orientation must be one of {agg.ORIENTATIONS}"),
            (self.fixmatch_label_mode in LABEL_MODES, f"fixmatch_label_mode must be one of {LABEL_MODES}"),
            (self.eval_every >= 1, "eval_every must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ParameterError(msg)

    @classmethod
    def large_scale(cls, **overrides):
        """Large-batch, long-queue setting meant for image benchmarks."""
        base = dict(batch_size=64, mu=7, queue_size=2048, num_subsets=64, iterations=2**20)
        base.update(overrides)
        return cls(**base)

    @property
    def aggregation(self):
        return agg.AggregationConfig(self.tau_sim, self.lambda_sim, self.class_term_orientation)


@dataclass
class TrainState:
    params: Params
    momentum: Params
    queue: ClassBalancedQueue
    iteration: int = 0


@dataclass
class PseudoLabels:
    targets: np.ndarray  # (n, Y) soft or hard pseudo labels
    confidence: np.ndarray  # (n,)
    accepted: int = 0
    rejected: int = 0
    warmup: bool = False
    votes: np.ndarray = field(default=None, repr=False)


@dataclass
class StepReport:
    iteration: int
    loss: float
    loss_sup: float
    loss_unsup: float
    mean_conf: float
    queue_fill: list
    enqueued: int
    rejected: int
    warmup: bool

    @property
    def enq_accept_rate(self):
        total = self.enqueued + self.rejected
        return self.enqueued / total if total else float("nan")


# -- losses ------------------------------------------------------------------

def supervised_loss(probs, labels):
    """Mean cross-entropy against one-hot labels."""
    probs = np.atleast_2d(probs)
    return float(np.mean(cross_entropy(one_hot(labels, probs.shape[1]), probs)))


def unsupervised_loss(strong_probs, targets, conf):
    """Confidence-weighted mean cross-entropy of strong-view predictions."""
    strong_probs = np.atleast_2d(strong_probs)
    if len(strong_probs) == 0:
        return 0.0
    return float(np.mean(np.asarray(conf) * cross_entropy(targets, strong_probs)))


# -- pseudo labels -----------------------------------------------------------

def fixmatch_pseudo(weak_probs, tau, label_mode="hard", T=0.5):
    """Threshold gate on max probability; hard (argmax) or sharpened targets."""
    p = np.atleast_2d(weak_probs)
    if not 0 < tau <= 1:
        raise ParameterError("tau must lie in (0, 1]")
    conf = (p.max(axis=1) >= tau).astype(np.float64)
    if label_mode == "hard":
        targets = one_hot(np.argmax(p, axis=1), p.shape[1])
    elif label_mode == "soft":
        targets = sharpen(p, T)
    else:
        raise ParameterError(f"unknown label mode {label_mode!r}")
    return PseudoLabels(targets, conf)


def refine_with_queue(weak_features, weak_probs, queue, cfg, rng):
    """Aggregate queries against a fresh queue partition.

    Returns (mean aggregated distribution, vote distribution, confidence).
    """
    part = queue.partition(cfg.num_subsets, rng)
    hyps = agg.aggregate_partition(weak_features, weak_probs, part, cfg.aggregation)
    a = vote(hyps)
    conf = confidence_of(a, cfg.confidence_mode, cfg.tau_u)
    return hyps.mean(axis=1), a, np.asarray(conf, dtype=np.float64)


def aggmatch_pseudo(weak_out, unlabeled_weak, labeled_batch, momentum, queue, cfg, rng, step):
    """Enqueue momentum-model predictions, then build aggregated pseudo labels.

    ``weak_out`` is the model's ``ForwardOutput`` on the weak unlabeled view.
    Before every class holds ``num_subsets`` entries this falls back to
    FixMatch-style soft pseudo labels with the same gate ``tau``.
    """
    n_u = len(unlabeled_weak)
    m_out = forward(np.concatenate([unlabeled_weak, labeled_batch.weak]), momentum)
    accepted = queue.enqueue_unlabeled_batch(m_out.feature[:n_u], m_out.distribution[:n_u], step)
    queue.enqueue_labeled_batch(m_out.feature[n_u:], m_out.distribution[n_u:], labeled_batch.labels, step)
    n_acc = int(accepted.sum())
    if not queue.ready(cfg.num_subsets):
        pl = fixmatch_pseudo(weak_out.distribution, cfg.tau, "soft", cfg.T)
        pl.accepted, pl.rejected, pl.warmup = n_acc, n_u - n_acc, True
        return pl
    p_bar, a, conf = refine_with_queue(weak_out.feature, weak_out.distribution, queue, cfg, rng)
    return PseudoLabels(sharpen(p_bar, cfg.T), conf, n_acc, n_u - n_acc, False, a)


# -- one step ----------------------------------------------------------------

def train_step(state, labeled_batch, unlabeled_batch, cfg, rng):
    """One optimization step; returns (new state, StepReport).

    The queue is mutated in place (it is owned by the state).
    """
    step = state.iteration + 1
    params = state.params
    B = len(labeled_batch.labels)
    num_classes = params.num_classes

    lab = forward(labeled_batch.weak, params)
    y = one_hot(labeled_batch.labels, num_classes)
    loss_sup = supervised_loss(lab.distribution, labeled_batch.labels)
    grads = backward(params, lab.cache, xent_logit_grad(lab.distribution, y) / B)

    n_u = len(unlabeled_batch.weak)
    loss_unsup, mean_conf, pl = 0.0, float("nan"), None
    if cfg.method != "supervised" and n_u:
        both = forward(np.concatenate([unlabeled_batch.weak, unlabeled_batch.strong]), params)
        weak_view = _rows(both, slice(0, n_u))
        strong_cache = [a[n_u:] for a in both.cache]
        strong_probs = both.distribution[n_u:]
        if cfg.method == "fixmatch":
            pl = fixmatch_pseudo(weak_view.distribution, cfg.tau, cfg.fixmatch_label_mode, cfg.T)
        else:
            pl = aggmatch_pseudo(weak_view, unlabeled_batch.weak, labeled_batch, state.momentum, state.queue, cfg, rng, step)
        loss_unsup = unsupervised_loss(strong_probs, pl.targets, pl.confidence)
        mean_conf = float(pl.confidence.mean())
        g_u = backward(params, strong_cache, xent_logit_grad(strong_probs, pl.targets, pl.confidence) / n_u)
        grads = Params(
            [gs + cfg.lambda_u * gu for gs, gu in zip(grads.weights, g_u.weights)],
            [gs + cfg.lambda_u * gu for gs, gu in zip(grads.biases, g_u.biases)],
        )

    loss = loss_sup + cfg.lambda_u * loss_unsup
    if not np.isfinite(loss):
        raise TrainingAborted(
            f"non-finite loss at iteration {step}",
            {
                "iteration": step,
                "loss_sup": loss_sup,
                "loss_unsup": loss_unsup,
                "queue_fill": state.queue.fill().tolist(),
                "labeled_batch": labeled_batch.weak.tolist(),
                "labels": labeled_batch.labels.tolist(),
                "unlabeled_weak": unlabeled_batch.weak.tolist(),
            },
        )
    new_params = sgd_step(params, grads, cfg.lr)
    new_momentum = momentum_update(state.momentum, new_params, cfg.lambda_m)
    report = StepReport(
        iteration=step,
        loss=loss,
        loss_sup=loss_sup,
        loss_unsup=loss_unsup,
        mean_conf=mean_conf,
        queue_fill=state.queue.fill().tolist(),
        enqueued=pl.accepted if pl else 0,
        rejected=pl.rejected if pl else 0,
        warmup=bool(pl.warmup) if pl else False,
    )
    return TrainState(new_params, new_momentum, state.queue, step), report


def _rows(out, sl):
    return type(out)(out.feature[sl], out.distribution[sl], out.logits[sl], [a[sl] for a in out.cache])


# -- evaluation --------------------------------------------------------------

def predict(params, x, chunk=1024):
    feats, probs = [], []
    for i in range(0, len(x), chunk):
        out = forward(x[i:i + chunk], params)
        feats.append(out.feature)
        probs.append(out.distribution)
    return np.concatenate(feats), np.concatenate(probs)


def pool_pseudo_labels(state, x, cfg, rng, chunk=256):
    """Pseudo labels and confidences for a pool of un-augmented instances.

    Mirrors what training would use, without touching the queue.
    Returns (predicted class, confidence).
    """
    feats, probs = predict(state.params, x)
    if cfg.method == "aggmatch" and state.queue.ready(cfg.num_subsets):
        part = state.queue.partition(cfg.num_subsets, rng)
        labels, conf = [], []
        for i in range(0, len(x), chunk):
            hyps = agg.aggregate_partition(feats[i:i + chunk], probs[i:i + chunk], part, cfg.aggregation)
            labels.append(np.argmax(hyps.mean(axis=1), axis=1))
            conf.append(np.asarray(confidence_of(vote(hyps), cfg.confidence_mode, cfg.tau_u), dtype=np.float64))
        return np.concatenate(labels), np.concatenate(conf)
    return np.argmax(probs, axis=1), (probs.max(axis=1) >= cfg.tau).astype(np.float64)


def pseudo_label_metrics(pred, conf, truth, count_threshold=0.5):
    """Precision / recall of pseudo labels against hidden ground truth.

    A pseudo label is counted when its confidence is >= ``count_threshold``.
    Precision is NaN when nothing is counted. Items with unknown truth (-1)
    are ignored.
    """
    known = truth >= 0
    pred, conf, truth = pred[known], conf[known], truth[known]
    correct = pred == truth
    counted = conf >= count_threshold
    n_counted = int(counted.sum())
    precision = float(correct[counted].mean()) if n_counted else float("nan")
    recall = float((correct & counted).sum() / len(truth)) if len(truth) else float("nan")
    wsum = conf.sum()
    weighted = float((conf * correct).sum() / wsum) if wsum > 0 else float("nan")
    return {
        "pl_precision": precision,
        "pl_recall": recall,
        "pl_weighted_precision": weighted,
        "pl_counted": n_counted,
        "mean_conf": float(conf.mean()) if len(conf) else float("nan"),
    }


def evaluate(state, cfg, test_x, test_y, unlabeled=None, rng=None):
    """Test accuracy, per-class accuracy and pseudo-label quality (model θ)."""
    _, probs = predict(state.params, test_x)
    pred = np.argmax(probs, axis=1)
    num_classes = state.params.num_classes
    per_class = [float(np.mean(pred[test_y == c] == c)) if np.any(test_y == c) else float("nan") for c in range(num_classes)]
    metrics = {"test_acc": float(np.mean(pred == test_y)), "per_class_acc": per_class}
    if unlabeled is not None and len(unlabeled) and unlabeled.eval_labels is not None:
        rng = rng if rng is not None else np.random.default_rng(0)
        pl_pred, pl_conf = pool_pseudo_labels(state, unlabeled.instances, cfg, rng)
        metrics.update(pseudo_label_metrics(pl_pred, pl_conf, unlabeled.eval_labels))
    return metrics


# -- loop --------------------------------------------------------------------

METRIC_COLUMNS = (
    "iter", "loss_sup", "loss_unsup", "test_acc", "pl_precision", "pl_recall",
    "mean_conf", "queue_fill_min", "queue_fill_max", "enq_accept_rate",
)


class Trainer:
    """Owns the model, momentum model, queue and every random stream of a run.

    Random streams are derived from ``cfg.seed``: parameter init, labeled
    batches, unlabeled batches, queue partitions and evaluation partitions
    each get an independent child, so the labeled-side trajectory does not
    depend on what the unlabeled side consumes.
    """

    def __init__(self, cfg, labeled, unlabeled, aug, hidden=128, feature_dim=64):
        self.cfg = cfg
        init_ss, batch_ss, part_ss = np.random.SeedSequence(cfg.seed).spawn(3)
        dims = [labeled.instances.shape[1], hidden, feature_dim, labeled.num_classes]
        params = init_params(dims, np.random.default_rng(init_ss))
        queue = ClassBalancedQueue(labeled.num_classes, cfg.queue_size, feature_dim, cfg.tau, cfg.store_labeled_onehot)
        self.state = TrainState(params, params.copy(), queue, 0)
        split_spec = SplitSpec(labels_per_class=1, batch_size=cfg.batch_size, mu=cfg.mu)
        self.stream = BatchStream(labeled, unlabeled, split_spec, aug, np.random.default_rng(batch_ss))
        self.partition_rng = np.random.default_rng(part_ss)
        self.last_batches = None

    def step(self):
        lb = self.stream.next_labeled()
        ub = self.stream.next_unlabeled() if self.cfg.method != "supervised" else _empty_unlabeled(lb)
        self.last_batches = (lb, ub)
        self.state, report = train_step(self.state, lb, ub, self.cfg, self.partition_rng)
        return report

    def evaluate(self, test_x, test_y, unlabeled=None):
        # evaluation partitions come from their own stream, keyed by iteration
        rng = np.random.default_rng(np.random.SeedSequence(self.cfg.seed, spawn_key=(4, self.state.iteration)))
        return evaluate(self.state, self.cfg, test_x, test_y, unlabeled, rng)

    def run(self, test_x, test_y, unlabeled=None, on_row=None):
        """Train for ``cfg.iterations`` steps, evaluating on the configured cadence.

        Returns (rows, evaluations): one metrics row per iteration, and the
        full metric dicts at each evaluation point keyed by iteration.
        """
        rows, evals = [], {}
        for _ in range(self.cfg.iterations):
            report = self.step()
            it = report.iteration
            row = {
                "iter": it,
                "loss_sup": report.loss_sup,
                "loss_unsup": report.loss_unsup,
                "test_acc": float("nan"),
                "pl_precision": float("nan"),
                "pl_recall": float("nan"),
                "mean_conf": report.mean_conf,
                "queue_fill_min": int(min(report.queue_fill)),
                "queue_fill_max": int(max(report.queue_fill)),
                "enq_accept_rate": report.enq_accept_rate,
            }
            if it % self.cfg.eval_every == 0 or it == self.cfg.iterations:
                m = self.evaluate(test_x, test_y, unlabeled)
                m["warmup"] = report.warmup
                evals[it] = m
                row["test_acc"] = m["test_acc"]
                row["pl_precision"] = m.get("pl_precision", float("nan"))
                row["pl_recall"] = m.get("pl_recall", float("nan"))
            rows.append(row)
            if on_row is not None:
                on_row(row)
        return rows, evals

    def save(self, directory):
        """Checkpoint: model and momentum text files, queue arrays, run state."""
        os.makedirs(directory, exist_ok=True)
        save_params(self.state.params, os.path.join(directory, "model.txt"))
        save_params(self.state.momentum, os.path.join(directory, "momentum.txt"))
        np.savez(os.path.join(directory, "queue.npz"), **self.state.queue.state_dict())
        with open(os.path.join(directory, "state.json"), "w", encoding="utf-8") as fh:
            json.dump({
                "iteration": self.state.iteration,
                "queue_fill": self.state.queue.fill().tolist(),
                "train": asdict(self.cfg),
            }, fh, indent=2)


def load_checkpoint(directory):
    """Restore (TrainConfig, TrainState) from ``Trainer.save`` output."""
    with open(os.path.join(directory, "state.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    cfg = TrainConfig(**meta["train"])
    params = load_params(os.path.join(directory, "model.txt"))
    momentum = load_params(os.path.join(directory, "momentum.txt"))
    queue = ClassBalancedQueue(params.num_classes, cfg.queue_size, params.feature_dim, cfg.tau, cfg.store_labeled_onehot)
    with np.load(os.path.join(directory, "queue.npz")) as z:
        queue.load_state_dict(dict(z))
    return cfg, TrainState(params, momentum, queue, meta["iteration"])


def _empty_unlabeled(lb):
    d = lb.weak.shape[1]
    return UnlabeledBatch(np.zeros((0, d)), np.zeros((0, d)))
