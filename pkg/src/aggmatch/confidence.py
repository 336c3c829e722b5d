"""Consensus confidence for aggregated pseudo labels.

M hypotheses (one per queue subset) each cast a vote for their argmax class.
The empirical vote distribution ``a`` yields a confidence weight
``exp(-H(a))``, which is 1 exactly when the vote is unanimous and 1/Y for a
uniform split. The thresholding variant keeps an item iff ``H(a) <= tau_u``.
"""

import numpy as np

from .errors import ParameterError
from .numerics import entropy


def vote(hypotheses):
    """Fraction of hypotheses whose argmax is each class.

    Accepts (M, Y) for one item or (n, M, Y) for a batch.
    """
    h = np.asarray(hypotheses, dtype=np.float64)
    if h.ndim < 2 or h.shape[-2] == 0:
        raise ParameterError("voting needs at least one hypothesis")
    M, Y = h.shape[-2:]
    winners = np.argmax(h, axis=-1)  # first maximum wins ties
    counts = (winners[..., None] == np.arange(Y)).sum(axis=-2)
    return counts / M


def confidence_weight(a):
    """exp(-entropy(a)) in (0, 1]."""
    return np.exp(-entropy(a))


def uncertainty_gate(a, tau_u):
    if tau_u < 0:
        raise ParameterError(f"tau_u must be non-negative, got {tau_u}")
    h = entropy(a)
    return (np.asarray(h) <= tau_u).astype(np.float64) if np.ndim(h) else float(h <= tau_u)


def confidence(a, mode="weighting", tau_u=None):
    """Dispatch on the confidence mode: "weighting" or "thresholding"."""
    if mode == "weighting":
        return confidence_weight(a)
    if mode == "thresholding":
        return uncertainty_gate(a, tau_u)
    raise ParameterError(f"unknown confidence mode {mode!r}")
