"""Similarity-weighted aggregation of candidate class distributions.

The similarity between a query and a candidate is the cosine similarity of
their features plus a weighted class term built from the JS distance of
their predicted distributions. Softmax over similarities (with a
temperature) gives attention weights, and the refined distribution is the
weighted average of candidate distributions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyCandidatesError, ParameterError
from .numerics import cosine_matrix, cosine_similarity, js_distance, js_distance_matrix, softmax

ORIENTATIONS = ("negative_distance", "paper_literal")


@dataclass(frozen=True)
class AggregationConfig:
    """``class_term_orientation``: "negative_distance" rewards agreeing
    distributions; "paper_literal" adds the raw distance instead.
    """

    tau_sim: float = 0.05
    lambda_sim: float = 0.5
    class_term_orientation: str = "negative_distance"

    def __post_init__(self):
        if not self.tau_sim > 0:
            raise ParameterError(f"tau_sim must be positive, got {self.tau_sim}")
        if not self.lambda_sim >= 0:
            raise ParameterError(f"lambda_sim must be non-negative, got {self.lambda_sim}")
        if self.class_term_orientation not in ORIENTATIONS:
            raise ParameterError(f"class_term_orientation must be one of {ORIENTATIONS}")

    @property
    def class_sign(self):
        return -1.0 if self.class_term_orientation == "negative_distance" else 1.0


@dataclass
class Query:
    feature: np.ndarray
    distribution: np.ndarray


def similarity(query, candidate, cfg):
    s_class = cfg.class_sign * js_distance(query.distribution, candidate.distribution)
    return cosine_similarity(query.feature, candidate.feature) + cfg.lambda_sim * s_class


def similarity_matrix(q_features, q_dists, c_features, c_dists, cfg):
    """Similarities between every query row and every candidate row."""
    s = cosine_matrix(q_features, c_features)
    if cfg.lambda_sim != 0.0:
        s = s + (cfg.lambda_sim * cfg.class_sign) * js_distance_matrix(q_dists, c_dists)
    return s


def attention_weights(q_features, q_dists, c_features, c_dists, cfg):
    """Softmax(similarity / tau_sim) over candidates; rows sum to 1."""
    if len(c_features) == 0:
        raise EmptyCandidatesError("no aggregation candidates")
    return softmax(similarity_matrix(q_features, q_dists, c_features, c_dists, cfg), cfg.tau_sim)


def aggregate(query, candidates, cfg):
    """Refine one query's distribution from a list of ``QueueEntry`` candidates."""
    if not candidates:
        raise EmptyCandidatesError("no aggregation candidates; use the warm-up fallback")
    feats = np.stack([c.feature for c in candidates])
    dists = np.stack([c.distribution for c in candidates])
    w = attention_weights(np.atleast_2d(query.feature), np.atleast_2d(query.distribution), feats, dists, cfg)
    return w[0] @ dists


def aggregate_batch(q_features, q_dists, c_features, c_dists, cfg):
    """Vectorized ``aggregate``: one refined distribution per query row."""
    return attention_weights(q_features, q_dists, c_features, c_dists, cfg) @ np.asarray(c_dists)


def aggregate_partition(q_features, q_dists, partition, cfg):
    """Aggregate every query against every subset; returns (n_queries, M, Y).

    Similarities are computed once against the union of subsets, then the
    softmax is taken within each subset.
    """
    M, k = partition.features.shape[:2]
    if k == 0:
        raise EmptyCandidatesError("partition subsets are empty; use the warm-up fallback")
    feats = partition.features.reshape(M * k, -1)
    dists = partition.distributions.reshape(M * k, -1)
    s = similarity_matrix(q_features, q_dists, feats, dists, cfg)
    w = softmax(s.reshape(len(s), M, k), cfg.tau_sim)
    # (M, n, k) @ (M, k, Y) -> (M, n, Y)
    return np.matmul(w.transpose(1, 0, 2), partition.distributions).transpose(1, 0, 2)


def aggregate_per_subset(query, partition, cfg):
    """List of M refined distributions for a single query."""
    out = aggregate_partition(np.atleast_2d(query.feature), np.atleast_2d(query.distribution), partition, cfg)
    return list(out[0])


def mean_aggregate(hypotheses):
    h = np.asarray(hypotheses, dtype=np.float64)
    if h.shape[0] == 0:
        raise ParameterError("mean of an empty hypothesis list")
    return h.mean(axis=0)
