"""Slow, loop-based reference implementations used as test oracles."""

import math


def cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0 or nb == 0:
        return 0.0
    return max(-1.0, min(1.0, dot / (na * nb)))


def js(p, q):
    total = 0.0
    for a, b in zip(p, q):
        m = (a + b) / 2
        if a > 0:
            total += 0.5 * a * math.log2(a / m)
        if b > 0:
            total += 0.5 * b * math.log2(b / m)
    return math.sqrt(min(1.0, max(0.0, total)))


def similarity(qf, qp, cf, cp, tau_sim, lambda_sim, sign=-1.0):
    return cosine(qf, cf) + lambda_sim * sign * js(qp, cp)


def aggregate(qf, qp, cands, tau_sim, lambda_sim, sign=-1.0):
    """cands: list of (feature, distribution)."""
    scores = [similarity(qf, qp, f, p, tau_sim, lambda_sim, sign) / tau_sim for f, p in cands]
    top = max(scores)
    ex = [math.exp(s - top) for s in scores]
    z = sum(ex)
    num_classes = len(cands[0][1])
    out = [0.0] * num_classes
    for w, (_, p) in zip(ex, cands):
        for y in range(num_classes):
            out[y] += (w / z) * p[y]
    return out
