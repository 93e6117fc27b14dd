"""Post-hoc unimodal OOD scores. Every score is oriented higher = more OOD."""

from enum import Enum

import numpy as np

from .errors import EmptyInput
from .numerics import log_sum_exp, softmax
from .vision import score_sv, score_sv_batch


class BaselineKind(str, Enum):
    MSP = "msp"
    MAX_LOGIT = "maxlogit"
    ENERGY = "energy"
    ENTROPY = "entropy"
    MAHALANOBIS = "mahalanobis"


def _logits(v):
    z = np.asarray(v, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise EmptyInput("baseline scores need at least one logit")
    return z


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def score_msp(logits):
    """Negative maximum softmax probability."""
    return _out(-np.max(softmax(_logits(logits)), axis=-1))


def score_max_logit(logits):
    return _out(-np.max(_logits(logits), axis=-1))


def score_energy(logits):
    """Negative free energy at temperature 1, ``-logsumexp(z)``."""
    return _out(-np.asarray(log_sum_exp(_logits(logits), axis=-1)))


def score_entropy(logits):
    z = _logits(logits)
    logp = z - np.expand_dims(np.asarray(log_sum_exp(z, axis=-1)), -1)
    return _out(-np.sum(np.exp(logp) * logp, axis=-1))


def score_mahalanobis_vanilla(stats, feature):
    return score_sv(stats, feature)


LOGIT_SCORERS = {
    BaselineKind.MSP: score_msp,
    BaselineKind.MAX_LOGIT: score_max_logit,
    BaselineKind.ENERGY: score_energy,
    BaselineKind.ENTROPY: score_entropy,
}


def baseline_scores(kind, logits=None, stats=None, features=None):
    """Vectorised scores for a batch; logits or features as the kind requires."""
    kind = BaselineKind(kind)
    if kind is BaselineKind.MAHALANOBIS:
        return score_sv_batch(stats, features)
    return np.asarray(LOGIT_SCORERS[kind](np.atleast_2d(logits)), dtype=np.float64)
