"""
Text-image branch: a linear image projection aligned to K learnable class
prototypes.

Image features are ``I = normalize(x @ W + b)`` and logits are
``s_j = <I, T_j> / tau`` with ``tau = exp(log_tau)``. Training minimises the
contrastive cross-entropy over the K prototypes plus ``lam`` times the
text-separation penalty that pulls every pairwise prototype similarity
towards ``-1/(K-1)``, the best achievable worst-case similarity.

The frozen text encoder is replaced by one learnable unit vector per class
prompt; the prompt string only seeds the initialisation.
"""

import hashlib
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptyInput,
    InvalidK,
    LabelOutOfRange,
    TrainingDiverged,
    ZeroVector,
)
from .data import minibatch_indices
from .numerics import log_sum_exp, softmax

log = logging.getLogger(__name__)

TAU_INIT = 0.07
TAU_MIN, TAU_MAX = 1e-3, 100.0
LAMBDA_RANGE = (1.0, 1.5)
PROMPT_TEMPLATE = "a photo of normal {}"


@dataclass
class TrainConfig:
    """Mini-batch gradient descent settings, shared by both branches.

    ``lam`` weights the text-separation term and is ignored by the vision
    branch.
    """

    batch_size: int = 32
    learning_rate: float = 0.1
    steps: int = 500
    lam: float = 1.0
    seed: int = 0
    allow_out_of_range: bool = False

    def __post_init__(self):
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError("learning_rate must be > 0")
        if not math.isfinite(self.lam) or self.lam < 0:
            raise ConfigError("lambda must be finite and non-negative")
        lo, hi = LAMBDA_RANGE
        if not lo <= self.lam <= hi:
            if not self.allow_out_of_range:
                raise ConfigError(f"lambda={self.lam} outside [{lo}, {hi}]")
            log.warning("lambda=%s outside the recommended range [%s, %s]", self.lam, lo, hi)

    def to_dict(self):
        return asdict(self)


@dataclass
class TextImageBranch:
    weights: np.ndarray      # (d_embed, d_proj)
    bias: np.ndarray         # (d_proj,)
    prototypes: np.ndarray   # (K, d_proj), unit rows
    log_tau: float
    class_names: tuple = ()
    prompts: tuple = ()

    @property
    def tau(self):
        return math.exp(self.log_tau)

    @property
    def d_embed(self):
        return self.weights.shape[0]

    @property
    def d_proj(self):
        return self.weights.shape[1]

    @property
    def num_classes(self):
        return self.prototypes.shape[0]

    def copy(self):
        return TextImageBranch(self.weights.copy(), self.bias.copy(), self.prototypes.copy(),
                               float(self.log_tau), tuple(self.class_names), tuple(self.prompts))

    def to_dict(self):
        return {
            "d_embed": self.d_embed,
            "d_proj": self.d_proj,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "prototypes": self.prototypes.tolist(),
            "log_tau": self.log_tau,
            "class_names": list(self.class_names),
            "prompts": list(self.prompts),
        }

    @classmethod
    def from_dict(cls, d):
        w = np.asarray(d["weights"], dtype=np.float64).reshape(d["d_embed"], d["d_proj"])
        return cls(w, np.asarray(d["bias"], dtype=np.float64),
                   np.asarray(d["prototypes"], dtype=np.float64).reshape(-1, d["d_proj"]),
                   float(d["log_tau"]), tuple(d["class_names"]), tuple(d["prompts"]))


@dataclass
class TSCGradients:
    weights: np.ndarray
    bias: np.ndarray
    prototypes: np.ndarray
    log_tau: float


def _prompt_seed(prompt):
    return int.from_bytes(hashlib.sha256(prompt.encode("utf-8")).digest()[:8], "little")


def init_text_image_branch(d_embed, class_names, d_proj=None, seed=0, tau=TAU_INIT):
    """Fresh branch: seeded Gaussian TLinear, zero bias, prompt-seeded prototypes."""
    k = len(class_names)
    if k < 2:
        raise InvalidK("need at least 2 classes")
    d_proj = min(d_embed, 64) if d_proj is None else d_proj
    if d_proj < k - 1:
        raise ConfigError(f"d_proj={d_proj} cannot hold {k} separated prototypes (need >= K-1)")
    rng = np.random.default_rng(seed)
    weights = rng.standard_normal((d_embed, d_proj)) / math.sqrt(d_embed)
    prompts = tuple(PROMPT_TEMPLATE.format(name) for name in class_names)
    protos = np.empty((k, d_proj))
    for j, prompt in enumerate(prompts):
        v = np.random.default_rng([_prompt_seed(prompt), seed]).standard_normal(d_proj)
        protos[j] = v / np.linalg.norm(v)
    return TextImageBranch(weights, np.zeros(d_proj), protos, math.log(tau),
                           tuple(class_names), prompts)


def simplex_frame(k, dim):
    """K unit vectors in R^dim with every pairwise dot product ``-1/(K-1)``."""
    if k < 2:
        raise InvalidK("simplex frame needs k >= 2")
    if dim < k - 1:
        raise ConfigError("simplex frame needs dim >= k-1")
    centred = np.eye(k) - 1.0 / k
    # orthonormal basis of the (k-1)-dim subspace orthogonal to the ones vector
    _, _, vt = np.linalg.svd(centred)
    coords = centred @ vt[: k - 1].T
    coords /= np.linalg.norm(coords, axis=1, keepdims=True)
    out = np.zeros((k, dim))
    out[:, : k - 1] = coords
    return out


def eta_star(k):
    if k < 2:
        raise InvalidK(f"eta* is undefined for k={k}")
    return -1.0 / (k - 1)


def project_images(branch, embeddings):
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != branch.d_embed:
        raise DimensionMismatch(f"expected (n, {branch.d_embed}) embeddings, got {x.shape}")
    z = x @ branch.weights + branch.bias
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ZeroVector("projected feature has zero norm")
    return z / norms


def project_image(branch, embedding):
    x = np.asarray(embedding, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("project_image takes a single embedding")
    return project_images(branch, x[None, :])[0]


def similarities(branch, image_feature):
    """Logits ``<I, T_j> / tau`` for one feature or a batch of features."""
    return np.asarray(image_feature, dtype=np.float64) @ branch.prototypes.T / branch.tau


def logits(branch, embeddings):
    return similarities(branch, project_images(branch, embeddings))


def _check_labels(labels, k):
    y = np.asarray(labels, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    return y


def loss_contrastive(branch, embeddings, labels):
    y = _check_labels(labels, branch.num_classes)
    if y.size == 0:
        raise EmptyInput("contrastive loss needs a nonempty batch")
    s = logits(branch, embeddings)
    return float(np.mean(log_sum_exp(s, axis=1) - s[np.arange(y.size), y]))


def _gram_offsets(prototypes):
    k = prototypes.shape[0]
    offsets = prototypes @ prototypes.T - eta_star(k)
    np.fill_diagonal(offsets, 0.0)
    return offsets


def loss_text_separation(branch_or_prototypes):
    t = getattr(branch_or_prototypes, "prototypes", branch_or_prototypes)
    t = np.asarray(t, dtype=np.float64)
    k = t.shape[0]
    return float(np.sum(_gram_offsets(t) ** 2) / (k * k - k))


def loss_tsc(branch, embeddings, labels, lam):
    """Contrastive loss plus ``lam`` times the separation loss.

    An empty batch contributes zero contrastive loss.
    """
    lc = loss_contrastive(branch, embeddings, labels) if len(labels) else 0.0
    return lc + lam * loss_text_separation(branch)


def loss_and_gradients_tsc(branch, embeddings, labels, lam):
    k = branch.num_classes
    y = _check_labels(labels, k)
    grads = TSCGradients(np.zeros_like(branch.weights), np.zeros_like(branch.bias),
                         np.zeros_like(branch.prototypes), 0.0)
    loss = 0.0
    if y.size:
        x = np.asarray(embeddings, dtype=np.float64)
        n = y.size
        z = x @ branch.weights + branch.bias
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            raise ZeroVector("projected feature has zero norm")
        feats = z / norms
        tau = branch.tau
        s = feats @ branch.prototypes.T / tau
        rows = np.arange(n)
        loss = float(np.mean(log_sum_exp(s, axis=1) - s[rows, y]))

        g_s = softmax(s, axis=1)
        g_s[rows, y] -= 1.0
        g_s /= n
        grads.prototypes += g_s.T @ feats / tau
        grads.log_tau = float(-np.sum(g_s * s))
        g_feat = g_s @ branch.prototypes / tau
        # back through z -> z/|z|
        g_z = (g_feat - feats * np.sum(feats * g_feat, axis=1, keepdims=True)) / norms
        grads.weights = x.T @ g_z
        grads.bias = g_z.sum(axis=0)

    offsets = _gram_offsets(branch.prototypes)
    loss += lam * float(np.sum(offsets ** 2) / (k * k - k))
    grads.prototypes += lam * 4.0 / (k * k - k) * offsets @ branch.prototypes
    return loss, grads


def gradients_tsc(branch, embeddings, labels, lam):
    return loss_and_gradients_tsc(branch, embeddings, labels, lam)[1]


def train_text_image(branch, dataset, config):
    """Train on the ID samples of the train split.

    Returns:
        (trained branch, per-step loss trace). The input branch is not mutated.
    """
    train = dataset.subset(split="train", ood=False)
    x, y = train.embeddings(), train.labels()
    if x.shape[0] == 0 or set(range(branch.num_classes)) - set(y.tolist()):
        raise EmptyInput("every class needs at least one training sample")
    branch = branch.copy()
    rng = np.random.default_rng(config.seed)
    lo, hi = math.log(TAU_MIN), math.log(TAU_MAX)
    trace = []
    for step, idx in enumerate(minibatch_indices(rng, x.shape[0], config.batch_size, config.steps)):
        loss, g = loss_and_gradients_tsc(branch, x[idx], y[idx], config.lam)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"text-image loss became {loss} at step {step}")
        lr = config.learning_rate
        branch.weights -= lr * g.weights
        branch.bias -= lr * g.bias
        branch.prototypes -= lr * g.prototypes
        branch.prototypes /= np.linalg.norm(branch.prototypes, axis=1, keepdims=True)
        branch.log_tau = min(max(branch.log_tau - lr * g.log_tau, lo), hi)
        if not all(np.all(np.isfinite(p)) for p in (branch.weights, branch.bias, branch.prototypes)):
            raise TrainingDiverged(f"text-image parameters overflowed at step {step}")
        trace.append(loss)
    log.info("text-image branch: final loss %.6g, tau %.4g", trace[-1], branch.tau)
    return branch, trace


def st_from_logits(s):
    """``2 * min_j(-s_j) - sum_j(-s_j)``; works row-wise on a batch."""
    s = np.asarray(s, dtype=np.float64)
    return 2.0 * np.min(-s, axis=-1) - np.sum(-s, axis=-1)


def score_st(branch, embedding):
    return float(st_from_logits(similarities(branch, project_image(branch, embedding))))


def score_st_batch(branch, embeddings):
    return st_from_logits(logits(branch, embeddings))


def accuracy(branch, embeddings, labels):
    return float(np.mean(np.argmax(logits(branch, embeddings), axis=1) == np.asarray(labels)))
