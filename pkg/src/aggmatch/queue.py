"""Class-balanced, confidence-gated FIFO memory of (feature, distribution) pairs.

Each class owns a ring buffer of capacity ``L``. Unlabeled entries pass a
confidence gate and go to the buffer of their predicted class; labeled
entries skip the gate and go to the buffer of their ground-truth class.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

UNLABELED = 0
LABELED = 1
_SOURCE_NAMES = {UNLABELED: "unlabeled", LABELED: "labeled"}


@dataclass
class QueueEntry:
    feature: np.ndarray
    distribution: np.ndarray
    source: str = "unlabeled"
    step: int = 0


@dataclass
class QueuePartition:
    """M equally sized, disjoint subsets of the queue.

    Arrays are stacked along the first axis (one row per subset):
    ``features`` (M, k, d), ``distributions`` (M, k, Y), ``classes`` (M, k)
    and ``slots`` (M, k) holding ``class * L + ring_slot`` identifiers.
    """

    features: np.ndarray
    distributions: np.ndarray
    classes: np.ndarray
    slots: np.ndarray

    @property
    def num_subsets(self):
        return self.features.shape[0]

    @property
    def subset_size(self):
        return self.features.shape[1]

    def subset(self, m):
        return [
            QueueEntry(self.features[m, i], self.distributions[m, i], step=-1)
            for i in range(self.subset_size)
        ]


class ClassBalancedQueue:
    def __init__(self, num_classes, capacity, feature_dim, threshold=0.95, store_labeled_onehot=False):
        if capacity < 1:
            raise ParameterError(f"queue capacity must be >= 1, got {capacity}")
        if not 0.0 < threshold <= 1.0:
            raise ParameterError(f"confidence threshold must lie in (0, 1], got {threshold}")
        self.num_classes = num_classes
        self.capacity = capacity
        self.feature_dim = feature_dim
        self.threshold = threshold
        self.store_labeled_onehot = store_labeled_onehot
        self.features = np.zeros((num_classes, capacity, feature_dim))
        self.distributions = np.zeros((num_classes, capacity, num_classes))
        self.steps = np.zeros((num_classes, capacity), dtype=np.int64)
        self.sources = np.zeros((num_classes, capacity), dtype=np.int8)
        self.counts = np.zeros(num_classes, dtype=np.int64)
        self._head = np.zeros(num_classes, dtype=np.int64)  # next write slot

    def __len__(self):
        return int(self.counts.sum())

    def _push(self, cls, feature, distribution, source, step):
        slot = self._head[cls]
        self.features[cls, slot] = feature
        self.distributions[cls, slot] = distribution
        self.steps[cls, slot] = step
        self.sources[cls, slot] = source
        self._head[cls] = (slot + 1) % self.capacity
        self.counts[cls] = min(self.counts[cls] + 1, self.capacity)

    def enqueue_unlabeled(self, entry):
        """Gate on max probability, then append to the predicted class's buffer."""
        p = np.asarray(entry.distribution, dtype=np.float64)
        if p.max() < self.threshold:
            return False
        self._push(int(np.argmax(p)), entry.feature, p, UNLABELED, entry.step)
        return True

    def enqueue_unlabeled_batch(self, features, distributions, step):
        """Enqueue rows in order; returns the boolean acceptance mask."""
        accepted = np.asarray(distributions).max(axis=1) >= self.threshold
        classes = np.argmax(distributions, axis=1)
        for i in np.flatnonzero(accepted):
            self._push(classes[i], features[i], distributions[i], UNLABELED, step)
        return accepted

    def enqueue_labeled(self, entry, label):
        """Append without a gate to the buffer of ``label``.

        The stored distribution is the entry's (momentum-model) prediction, or
        the one-hot of ``label`` when ``store_labeled_onehot`` is set.
        """
        if not 0 <= label < self.num_classes:
            raise ParameterError(f"label {label} out of range [0, {self.num_classes})")
        if self.store_labeled_onehot:
            dist = np.zeros(self.num_classes)
            dist[label] = 1.0
        else:
            dist = np.asarray(entry.distribution, dtype=np.float64)
        self._push(int(label), entry.feature, dist, LABELED, entry.step)

    def enqueue_labeled_batch(self, features, distributions, labels, step):
        for f, p, y in zip(features, distributions, labels):
            self.enqueue_labeled(QueueEntry(f, p, "labeled", step), int(y))

    def order(self, cls):
        """Ring slots of class ``cls``, oldest first."""
        n = self.counts[cls]
        start = (self._head[cls] - n) % self.capacity
        return (start + np.arange(n)) % self.capacity

    def entries(self, cls):
        return [
            QueueEntry(
                self.features[cls, s].copy(),
                self.distributions[cls, s].copy(),
                _SOURCE_NAMES[int(self.sources[cls, s])],
                int(self.steps[cls, s]),
            )
            for s in self.order(cls)
        ]

    def contents(self):
        """All stored entries as stacked arrays: (features, distributions, classes)."""
        slots = [(c, s) for c in range(self.num_classes) for s in self.order(c)]
        if not slots:
            return (np.zeros((0, self.feature_dim)), np.zeros((0, self.num_classes)), np.zeros(0, dtype=np.int64))
        cls, sl = map(np.array, zip(*slots))
        return self.features[cls, sl], self.distributions[cls, sl], cls

    def ready(self, num_subsets):
        """True when every class holds at least ``num_subsets`` entries."""
        return bool(np.all(self.counts >= num_subsets))

    def partition(self, num_subsets, rng):
        """Randomly split each class evenly across ``num_subsets`` disjoint subsets.

        Per class, floor(n / M) * M entries are drawn without replacement and
        dealt out in equal shares; the remainder sits out this call.
        """
        if num_subsets < 1:
            raise ParameterError(f"number of subsets must be >= 1, got {num_subsets}")
        per_subset = []
        for c in range(self.num_classes):
            k = int(self.counts[c]) // num_subsets
            order = self.order(c)
            chosen = order[rng.permutation(len(order))[: k * num_subsets]] if k else order[:0]
            per_subset.append(c * self.capacity + chosen.reshape(num_subsets, k))
        slots = np.concatenate(per_subset, axis=1)
        cls, sl = np.divmod(slots, self.capacity)
        return QueuePartition(self.features[cls, sl], self.distributions[cls, sl], cls, slots)

    def fill(self):
        return self.counts.copy()

    def dump_csv(self, path, float_format=".9g"):
        """Write ``class,step,source,max_prob,f0..f{d-1}``, one row per entry, oldest first."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["class", "step", "source", "max_prob", *(f"f{i}" for i in range(self.feature_dim))])
            for c in range(self.num_classes):
                for s in self.order(c):
                    writer.writerow([
                        c,
                        int(self.steps[c, s]),
                        _SOURCE_NAMES[int(self.sources[c, s])],
                        format(float(self.distributions[c, s].max()), float_format),
                        *(format(float(v), float_format) for v in self.features[c, s]),
                    ])

    def state_dict(self):
        return {
            "features": self.features, "distributions": self.distributions, "steps": self.steps,
            "sources": self.sources, "counts": self.counts, "head": self._head,
        }

    def load_state_dict(self, state):
        self.features = np.array(state["features"], dtype=np.float64)
        self.distributions = np.array(state["distributions"], dtype=np.float64)
        self.steps = np.array(state["steps"], dtype=np.int64)
        self.sources = np.array(state["sources"], dtype=np.int8)
        self.counts = np.array(state["counts"], dtype=np.int64)
        self._head = np.array(state["head"], dtype=np.int64)
