"""Tiny MLP classifier with hand-written backprop.

Architecture: ``input -> hidden -> feature`` (ReLU after each) followed by a
linear head ``feature -> classes`` and a softmax. The last hidden activation
is the feature vector used for similarity search.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ParseError, TrainingAborted
from .numerics import softmax

CHECKPOINT_MAGIC = "AGGMATCH-MLP v1"


@dataclass
class Params:
    """Weights ``W[i]`` of shape (fan_in, fan_out) and biases ``b[i]``.

    The last layer is the classifier head; all earlier layers form the
    feature extractor.
    """

    weights: list
    biases: list

    @property
    def layer_dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def feature_dim(self):
        return self.weights[-1].shape[0]

    @property
    def num_classes(self):
        return self.weights[-1].shape[1]

    def arrays(self):
        return [*self.weights, *self.biases]

    def copy(self):
        return Params([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self):
        return Params([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def all_finite(self):
        return all(np.isfinite(a).all() for a in self.arrays())

    def same_shape(self, other):
        return [a.shape for a in self.arrays()] == [a.shape for a in other.arrays()]

    def equals(self, other):
        return self.same_shape(other) and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


@dataclass
class ForwardOutput:
    feature: np.ndarray
    distribution: np.ndarray
    logits: np.ndarray
    cache: list = field(repr=False, default_factory=list)


def init_params(layer_dims, rng):
    """Glorot-uniform weights, zero biases.

    ``layer_dims`` is ``[input, hidden..., feature, classes]``.
    """
    if len(layer_dims) < 3:
        raise ParameterError("need at least input, feature and class dimensions")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Params(weights, biases)


def forward(x, params):
    """Run the network on a single instance or a batch (rows)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != params.input_dim:
        raise ParameterError(f"input dimension {x.shape[1]} does not match model input {params.input_dim}")
    cache = [x]
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        cache.append(h)
    logits = h @ params.weights[-1] + params.biases[-1]
    probs = softmax(logits)
    if single:
        return ForwardOutput(h[0], probs[0], logits[0], cache)
    return ForwardOutput(h, probs, logits, cache)


def backward(params, cache, dlogits, dfeature=None):
    """Parameter gradients given upstream gradients on logits (and features).

    ``cache`` is ``ForwardOutput.cache`` from the matching forward pass.
    ``dlogits`` has shape (n, classes); ``dfeature`` (optional) has shape
    (n, feature_dim) and is added to the gradient flowing into the feature.
    Gradients are summed over batch rows.
    """
    dlogits = np.atleast_2d(np.asarray(dlogits, dtype=np.float64))
    if len(cache) != len(params.weights) or cache[-1].shape[0] != dlogits.shape[0]:
        raise RuntimeError("cache does not match this model / gradient batch")
    gw = [None] * len(params.weights)
    gb = [None] * len(params.biases)
    gw[-1] = cache[-1].T @ dlogits
    gb[-1] = dlogits.sum(axis=0)
    dh = dlogits @ params.weights[-1].T
    if dfeature is not None:
        dh = dh + np.atleast_2d(dfeature)
    for i in range(len(params.weights) - 2, -1, -1):
        dh = dh * (cache[i + 1] > 0)
        gw[i] = cache[i].T @ dh
        gb[i] = dh.sum(axis=0)
        if i > 0:
            dh = dh @ params.weights[i].T
    return Params(gw, gb)


def xent_logit_grad(probs, targets, weights=None):
    """d/dlogits of sum_b w_b * CE(target_b, softmax(logits_b)).

    Soft targets are allowed; the gradient is w * (p * sum(t) - t).
    """
    probs = np.atleast_2d(probs)
    targets = np.atleast_2d(targets)
    g = probs * targets.sum(axis=1, keepdims=True) - targets
    if weights is not None:
        g = g * np.asarray(weights, dtype=np.float64)[:, None]
    return g


def sgd_step(params, grads, lr):
    """Return ``params - lr * grads``; aborts on non-finite gradients."""
    if lr < 0:
        raise ParameterError(f"learning rate must be non-negative, got {lr}")
    if not params.same_shape(grads):
        raise ParameterError("gradient shapes do not match parameters")
    if not grads.all_finite():
        raise TrainingAborted("non-finite gradient", {"bad_arrays": [i for i, a in enumerate(grads.arrays()) if not np.isfinite(a).all()]})
    return Params(
        [w - lr * g for w, g in zip(params.weights, grads.weights)],
        [b - lr * g for b, g in zip(params.biases, grads.biases)],
    )


def momentum_update(momentum, params, coef):
    """EMA update: momentum <- coef * momentum + (1 - coef) * params."""
    if not 0.0 <= coef <= 1.0:
        raise ParameterError(f"momentum coefficient must lie in [0, 1], got {coef}")
    if not momentum.same_shape(params):
        raise ParameterError("momentum and model parameters differ in shape")
    return Params(
        [coef * m + (1.0 - coef) * p for m, p in zip(momentum.weights, params.weights)],
        [coef * m + (1.0 - coef) * p for m, p in zip(momentum.biases, params.biases)],
    )


def save_params(params, path):
    """Write a text checkpoint.

    Layout: a magic line, a JSON header line with the architecture, then
    for every tensor a ``name shape...`` line followed by one line of
    space-separated floats in round-trip precision.
    """
    header = {
        "layer_dims": params.layer_dims,
        "input_dim": params.input_dim,
        "feature_dim": params.feature_dim,
        "classes": params.num_classes,
    }
    lines = [CHECKPOINT_MAGIC, json.dumps(header)]
    names = [f"W{i}" for i in range(len(params.weights))] + [f"b{i}" for i in range(len(params.biases))]
    for name, arr in zip(names, params.arrays()):
        lines.append(" ".join([name, *map(str, arr.shape)]))
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    lines = raw.decode("utf-8").split("\n")
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ParseError(f"not a checkpoint (expected magic {CHECKPOINT_MAGIC!r})", 0)
    header = json.loads(lines[1])
    dims = header["layer_dims"]
    n = len(dims) - 1
    arrays = []
    pos = 2
    for _ in range(2 * n):
        name, *shape = lines[pos].split()
        shape = tuple(int(s) for s in shape)
        values = np.array([float(v) for v in lines[pos + 1].split()], dtype=np.float64)
        arrays.append(values.reshape(shape))
        pos += 2
    params = Params(arrays[:n], arrays[n:])
    if params.layer_dims != dims:
        raise ParseError("checkpoint tensors disagree with header dimensions")
    return params
