"""
Independent reference implementations used as test oracles.

These are deliberately naive (loops, dense inverses, mpmath) and share no
code with the package beyond plain data structures.
"""

import math

import mpmath
import numpy as np

mpmath.mp.dps = 50


def mp_log_sum_exp(v):
    return float(mpmath.log(mpmath.fsum(mpmath.exp(mpmath.mpf(float(x))) for x in v)))


def mp_softmax(v):
    e = [mpmath.exp(mpmath.mpf(float(x))) for x in v]
    total = mpmath.fsum(e)
    return [x / total for x in e]


def mp_cross_entropy(logit_rows, labels):
    """Mean ``-log softmax(row)[label]`` in extended precision."""
    terms = [-mpmath.log(mp_softmax(row)[y]) for row, y in zip(logit_rows, labels)]
    return float(mpmath.fsum(terms) / len(terms))


def mp_entropy(v):
    p = mp_softmax(v)
    return float(-mpmath.fsum(q * mpmath.log(q) for q in p if q > 0))


def normalize_loop(v):
    n = math.sqrt(math.fsum(x * x for x in v))
    return [x / n for x in v]


def project_oracle(weights, bias, x):
    d_embed, d_proj = len(weights), len(weights[0])
    z = [math.fsum(x[i] * weights[i][j] for i in range(d_embed)) + bias[j] for j in range(d_proj)]
    return normalize_loop(z)


def st_oracle(logits):
    neg = [-s for s in logits]
    m = min(neg)
    return m - (math.fsum(neg) - m)


def mahalanobis_dense(means, cov, v):
    inv = np.linalg.inv(cov)
    best = math.inf
    for mu in means:
        d = np.asarray(v) - np.asarray(mu)
        best = min(best, float(d @ inv @ d))
    return best


def two_pass_pooled_cov(features, labels, k):
    """Pooled within-class scatter as the n-weighted average of per-class covariances."""
    features = np.asarray(features)
    n, d = features.shape
    total = np.zeros((d, d))
    for c in range(k):
        pts = features[np.asarray(labels) == c]
        mu = sum(pts) / len(pts)
        scatter = np.zeros((d, d))
        for p in pts:
            scatter += np.outer(p - mu, p - mu)
        total += len(pts) * (scatter / len(pts))
    return total / n


def pairwise_auroc(id_scores, ood_scores):
    wins = 0.0
    for o in ood_scores:
        for i in id_scores:
            if o > i:
                wins += 1.0
            elif o == i:
                wins += 0.5
    return wins / (len(id_scores) * len(ood_scores))


def threshold_scan_fpr(id_scores, ood_scores, target_tpr):
    """Try every candidate threshold, keep the smallest reaching the ID recall."""
    candidates = sorted(set(id_scores) | set(ood_scores))
    for t in candidates:
        recall = sum(1 for s in id_scores if s <= t) / len(id_scores)
        if recall >= target_tpr - 1e-12:
            return sum(1 for s in ood_scores if s <= t) / len(ood_scores)
    raise AssertionError("no threshold reached the target")


def central_difference(f, params, step=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. every entry of each array.

    ``params`` is a list of numpy arrays mutated in place while probing.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f()
            flat[i] = orig - step
            lo = f()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


def rel_error(analytic, numeric, floor=1e-8):
    a, n = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < floor:
        return float(np.linalg.norm(a - n))
    return float(np.linalg.norm(a - n) / scale)
