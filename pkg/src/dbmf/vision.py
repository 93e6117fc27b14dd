"""
Vision branch: a linear softmax classifier (VLinear) plus class-conditional
Gaussian statistics with one shared covariance, scored by the minimum
Mahalanobis distance to any class mean.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyInput, LabelOutOfRange, TooFewSamples, TrainingDiverged
from .data import minibatch_indices
from .numerics import cholesky, log_sum_exp, softmax, spd_solve

log = logging.getLogger(__name__)

RIDGE_SCALE = 1e-6


def extract_features(embeddings):
    """Features fed to the Gaussian statistics. Raw embeddings for now."""
    return np.asarray(embeddings, dtype=np.float64)


@dataclass
class VisionBranch:
    weights: np.ndarray   # (d_embed, K)
    bias: np.ndarray      # (K,)
    class_names: tuple = ()

    @property
    def num_classes(self):
        return self.weights.shape[1]

    def copy(self):
        return VisionBranch(self.weights.copy(), self.bias.copy(), tuple(self.class_names))

    def to_dict(self):
        return {"weights": self.weights.tolist(), "bias": self.bias.tolist(),
                "class_names": list(self.class_names)}

    @classmethod
    def from_dict(cls, d):
        w = np.asarray(d["weights"], dtype=np.float64)
        return cls(w.reshape(-1, len(d["bias"])), np.asarray(d["bias"], dtype=np.float64),
                   tuple(d["class_names"]))


def init_vision_branch(d_embed, class_names):
    k = len(class_names)
    return VisionBranch(np.zeros((d_embed, k)), np.zeros(k), tuple(class_names))


def vision_logits(branch, embeddings):
    x = np.asarray(embeddings, dtype=np.float64)
    if x.shape[-1] != branch.weights.shape[0]:
        raise DimensionMismatch(f"expected dim {branch.weights.shape[0]}, got {x.shape[-1]}")
    return x @ branch.weights + branch.bias


def _check_labels(labels, k):
    y = np.asarray(labels, dtype=np.int64)
    if y.size == 0:
        raise EmptyInput("cross-entropy needs a nonempty batch")
    if y.min() < 0 or y.max() >= k:
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    return y


def loss_cross_entropy(branch, embeddings, labels):
    y = _check_labels(labels, branch.num_classes)
    z = vision_logits(branch, embeddings)
    return float(np.mean(log_sum_exp(z, axis=1) - z[np.arange(y.size), y]))


def loss_and_gradients_ce(branch, embeddings, labels):
    """Returns ``(loss, grad_weights, grad_bias)``."""
    y = _check_labels(labels, branch.num_classes)
    x = np.asarray(embeddings, dtype=np.float64)
    z = vision_logits(branch, x)
    rows = np.arange(y.size)
    loss = float(np.mean(log_sum_exp(z, axis=1) - z[rows, y]))
    g = softmax(z, axis=1)
    g[rows, y] -= 1.0
    g /= y.size
    return loss, x.T @ g, g.sum(axis=0)


def train_vision(branch, dataset, config):
    train = dataset.subset(split="train", ood=False)
    x, y = train.embeddings(), train.labels()
    if x.shape[0] == 0 or set(range(branch.num_classes)) - set(y.tolist()):
        raise EmptyInput("every class needs at least one training sample")
    branch = branch.copy()
    rng = np.random.default_rng(config.seed)
    trace = []
    for step, idx in enumerate(minibatch_indices(rng, x.shape[0], config.batch_size, config.steps)):
        loss, gw, gb = loss_and_gradients_ce(branch, x[idx], y[idx])
        if not math.isfinite(loss):
            raise TrainingDiverged(f"vision loss became {loss} at step {step}")
        branch.weights -= config.learning_rate * gw
        branch.bias -= config.learning_rate * gb
        if not (np.all(np.isfinite(branch.weights)) and np.all(np.isfinite(branch.bias))):
            raise TrainingDiverged(f"vision parameters overflowed at step {step}")
        trace.append(loss)
    log.info("vision branch: final loss %.6g", trace[-1])
    return branch, trace


def vision_accuracy(branch, embeddings, labels):
    return float(np.mean(np.argmax(vision_logits(branch, embeddings), axis=1) == np.asarray(labels)))


@dataclass
class GaussianStats:
    means: np.ndarray        # (K, d)
    covariance: np.ndarray   # (d, d), unregularized
    epsilon: float
    chol: np.ndarray = None  # factor of covariance + epsilon * I

    def __post_init__(self):
        if self.chol is None:
            d = self.covariance.shape[0]
            self.chol = cholesky(self.covariance + self.epsilon * np.eye(d))

    @property
    def dim(self):
        return self.means.shape[1]

    def to_dict(self):
        return {"means": self.means.tolist(), "covariance": self.covariance.tolist(),
                "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["means"], dtype=np.float64),
                   np.asarray(d["covariance"], dtype=np.float64), float(d["epsilon"]))


def default_epsilon(covariance):
    d = covariance.shape[0]
    eps = RIDGE_SCALE * float(np.trace(covariance)) / d
    # all-identical features give a zero trace; keep the ridge strictly positive
    return eps if eps > 0 else RIDGE_SCALE


def fit_gaussian_stats(features, labels, num_classes=None, epsilon=None):
    """Per-class means and the pooled within-class covariance (divide by n).

    Args:
        features: (n, d) feature matrix.
        labels: (n,) integer class labels.
        num_classes: K; inferred from the labels when omitted.
        epsilon: ridge added before factorization; defaults to
            ``1e-6 * trace(cov) / d``.
    """
    v = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if v.ndim != 2 or v.shape[0] != y.size:
        raise DimensionMismatch("features and labels disagree in length")
    if y.size < 2:
        raise TooFewSamples("need at least 2 samples to fit Gaussian statistics")
    k = int(y.max()) + 1 if num_classes is None else num_classes
    means = np.zeros((k, v.shape[1]))
    centred = np.empty_like(v)
    for c in range(k):
        mask = y == c
        if not mask.any():
            raise TooFewSamples(f"class {c} has no samples")
        means[c] = v[mask].mean(axis=0)
        centred[mask] = v[mask] - means[c]
    cov = centred.T @ centred / y.size
    cov = 0.5 * (cov + cov.T)
    if epsilon is None:
        epsilon = default_epsilon(cov)
    return GaussianStats(means, cov, float(epsilon))


def mahalanobis_all(stats, features):
    """(n, K) squared Mahalanobis distances to every class mean."""
    v = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if v.shape[1] != stats.dim:
        raise DimensionMismatch(f"feature dim {v.shape[1]} != stats dim {stats.dim}")
    diffs = v[:, None, :] - stats.means[None, :, :]          # (n, K, d)
    flat = diffs.reshape(-1, stats.dim).T                     # (d, n*K)
    solved = spd_solve(stats.chol, flat)
    q = np.sum(flat * solved, axis=0).reshape(v.shape[0], stats.means.shape[0])
    return np.maximum(q, 0.0)


def score_sv_batch(stats, features):
    return mahalanobis_all(stats, features).min(axis=1)


def score_sv(stats, feature):
    v = np.asarray(feature, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatch("score_sv takes a single feature vector")
    return float(score_sv_batch(stats, v)[0])
