"""Scalar and vector primitives used throughout the package.

All functions accept plain sequences or numpy arrays and return float64
results. Functions that operate on a single distribution also broadcast over
leading axes (the class axis is always the last one), which is what the
vectorized training path relies on.
"""

import logging

import numpy as np
from scipy.special import xlogy

from .errors import ParameterError

log = logging.getLogger(__name__)

EPS = 1e-12
_LN2 = np.log(2.0)


def softmax(scores, temperature=1.0):
    """Softmax of ``scores / temperature`` over the last axis."""
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    z = np.asarray(scores, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise ParameterError("softmax of an empty vector")
    z = z / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cosine_similarity(a, b):
    """Cosine similarity of two feature vectors.

    A zero-norm input has no direction; we return 0 and log a warning rather
    than failing, since degenerate embeddings do occur early in training.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        log.warning("cosine similarity with a zero-norm vector; returning 0")
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def normalize_rows(v):
    """Scale rows to unit L2 norm; zero rows stay zero."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.sqrt(np.einsum("...i,...i->...", v, v))[..., None]
    zero = norms == 0.0
    if zero.any():
        log.warning("%d zero-norm feature vector(s); their cosine similarities are 0", int(zero.sum()))
    return np.divide(v, norms, out=np.zeros_like(v), where=~zero)


def cosine_matrix(a, b):
    """Pairwise cosine similarities between rows of ``a`` and rows of ``b``."""
    out = normalize_rows(a) @ normalize_rows(b).T
    return np.clip(out, -1.0, 1.0, out=out)


def js_distance(p, q):
    """Jensen-Shannon distance with base-2 logs, so the result lies in [0, 1].

    This is the square root of the divergence, which makes it a metric.
    Broadcasts over leading axes.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape[-1] != q.shape[-1]:
        raise ParameterError(f"distribution length mismatch: {p.shape[-1]} vs {q.shape[-1]}")
    m = 0.5 * (p + q)
    div = 0.5 * (xlogy(p, p) - xlogy(p, m)).sum(axis=-1) + 0.5 * (xlogy(q, q) - xlogy(q, m)).sum(axis=-1)
    div = np.clip(div / _LN2, 0.0, 1.0)
    out = np.sqrt(div)
    return float(out) if out.ndim == 0 else out


def js_distance_matrix(p, q):
    """Pairwise JS distances between rows of ``p`` (n, Y) and ``q`` (k, Y).

    Uses JSD = H(m) - (H(p) + H(q)) / 2, which needs a single pass over the
    (n, k, Y) tensor of mixtures.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape[-1] != q.shape[-1]:
        raise ParameterError(f"distribution length mismatch: {p.shape[-1]} vs {q.shape[-1]}")
    hp = -xlogy(p, p).sum(axis=-1)
    hq = -xlogy(q, q).sum(axis=-1)
    # H(s/2) = ln 2 - 0.5 * sum(s ln s) with s = p + q, because sum(s) = 2.
    # Looping over classes with preallocated buffers keeps every temporary a
    # contiguous (n, k) array; this is the hot spot of a training step.
    n, k = len(p), len(q)
    s_log_s = np.zeros((n, k))
    s = np.empty((n, k))
    t = np.empty((n, k))
    for y in range(p.shape[-1]):
        np.add(p[:, y, None], q[None, :, y], out=s)
        np.maximum(s, 1e-300, out=t)
        np.log(t, out=t)
        t *= s
        s_log_s += t
    hm = _LN2 - 0.5 * s_log_s
    div = (hm - 0.5 * (hp[:, None] + hq[None, :])) / _LN2
    return np.sqrt(np.clip(div, 0.0, 1.0))


def entropy(p):
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    h = -xlogy(p, p).sum(axis=-1)
    h = np.maximum(h, 0.0)
    return float(h) if h.ndim == 0 else h


def sharpen(p, T):
    """Temperature sharpening: output proportional to p ** (1 / T)."""
    if not T > 0:
        raise ParameterError(f"sharpening temperature must be positive, got {T}")
    p = np.asarray(p, dtype=np.float64)
    if T == 1.0:
        return p / p.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    # log-domain softmax keeps small T from underflowing every entry
    return softmax(logp / T)


def hard_label(p):
    """Argmax (ties go to the lowest index) and its one-hot vector."""
    p = np.asarray(p, dtype=np.float64)
    k = int(np.argmax(p))
    return k, one_hot(k, p.shape[-1])


def one_hot(labels, num_classes):
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ParameterError(f"label out of range [0, {num_classes})")
    return np.eye(num_classes)[labels]


def cross_entropy(target, pred, eps=EPS):
    """-sum(target * ln(max(pred, eps))); soft targets are fine."""
    target = np.asarray(target, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    ce = -(target * np.log(np.maximum(pred, eps))).sum(axis=-1)
    return float(ce) if ce.ndim == 0 else ce


def is_distribution(p, atol=1e-9):
    p = np.asarray(p, dtype=np.float64)
    return bool(np.all(p >= 0) and np.allclose(p.sum(axis=-1), 1.0, rtol=0.0, atol=atol))
