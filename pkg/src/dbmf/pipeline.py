"""
End-to-end training and scoring.

Training order follows the method: text-image branch first, then the vision
branch, then the Gaussian statistics, the score standardizer (fitted on the
ID training split) and finally the decision threshold.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import text_image as ti
from . import vision as vb
from .baselines import BaselineKind, baseline_scores
from .errors import ConfigError, EmptyInput
from .fusion import DetectorConfig, ScoreStandardizer, calibrate_gamma, fit_standardizer, fuse
from .metrics import evaluate, scored

log = logging.getLogger(__name__)

SCORERS = ("dbmf", "st-only", "sv-only") + tuple(k.value for k in BaselineKind)
ABLATION_ROWS = (("Text-image", "st-only"), ("Vision", "sv-only"), ("DBMF", "dbmf"))


@dataclass
class DBMFModel:
    text_branch: ti.TextImageBranch
    vision_branch: vb.VisionBranch
    stats: vb.GaussianStats
    standardizer: ScoreStandardizer
    omega: float
    gamma: float

    def raw_scores(self, embeddings):
        """(S_t, S_v) for a batch of embeddings."""
        st = ti.score_st_batch(self.text_branch, embeddings)
        sv = vb.score_sv_batch(self.stats, vb.extract_features(embeddings))
        return st, sv

    def fused_scores(self, embeddings, omega=None):
        st, sv = self.raw_scores(embeddings)
        return fuse(self.standardizer, st, sv, self.omega if omega is None else omega)

    def scores(self, embeddings, scorer="dbmf", omega=None):
        if scorer == "dbmf":
            return np.atleast_1d(self.fused_scores(embeddings, omega))
        if scorer == "st-only":
            return ti.score_st_batch(self.text_branch, embeddings)
        if scorer == "sv-only":
            return vb.score_sv_batch(self.stats, vb.extract_features(embeddings))
        if scorer in {k.value for k in BaselineKind}:
            return baseline_scores(
                scorer,
                logits=vb.vision_logits(self.vision_branch, embeddings),
                stats=self.stats,
                features=vb.extract_features(embeddings),
            )
        raise ConfigError(f"unknown scorer {scorer!r}; choose from {', '.join(SCORERS)}")


@dataclass
class TrainResult:
    model: DBMFModel
    text_trace: list
    vision_trace: list
    summary: dict


def train_pipeline(dataset, text_config, vision_config, detector_config=None,
                   d_proj=None, epsilon=None):
    """Train both branches on ``dataset``'s ID train split and fit the detector."""
    detector_config = detector_config or DetectorConfig()
    train = dataset.subset(split="train", ood=False)
    if not train.samples:
        raise EmptyInput("dataset has no ID samples in the train split")
    x, y = train.embeddings(), train.labels()

    text0 = ti.init_text_image_branch(dataset.dim, dataset.class_names, d_proj=d_proj,
                                      seed=text_config.seed)
    text_branch, text_trace = ti.train_text_image(text0, dataset, text_config)
    vision0 = vb.init_vision_branch(dataset.dim, dataset.class_names)
    vision_branch, vision_trace = vb.train_vision(vision0, dataset, vision_config)

    stats = vb.fit_gaussian_stats(vb.extract_features(x), y, dataset.num_classes, epsilon)
    st = ti.score_st_batch(text_branch, x)
    sv = vb.score_sv_batch(stats, vb.extract_features(x))
    standardizer = fit_standardizer(st, sv)
    fused = fuse(standardizer, st, sv, detector_config.omega)
    gamma = detector_config.gamma
    if gamma is None:
        gamma = calibrate_gamma(fused, detector_config.target_tpr)

    model = DBMFModel(text_branch, vision_branch, stats, standardizer,
                      detector_config.omega, gamma)
    summary = {
        "n_train": int(y.size),
        "text_image_accuracy": ti.accuracy(text_branch, x, y),
        "vision_accuracy": vb.vision_accuracy(vision_branch, x, y),
        "text_image_final_loss": text_trace[-1],
        "vision_final_loss": vision_trace[-1],
        "tau": text_branch.tau,
        "max_prototype_similarity": max_prototype_similarity(text_branch.prototypes),
        "omega": detector_config.omega,
        "gamma": gamma,
    }
    return TrainResult(model, text_trace, vision_trace, summary)


def max_prototype_similarity(prototypes):
    g = prototypes @ prototypes.T
    np.fill_diagonal(g, -np.inf)
    return float(g.max())


def evaluate_model(model, dataset, scorer="dbmf", omega=None, target_tpr=0.95, bandwidth=None):
    """Score the test split and build an :class:`EvalReport`."""
    test = dataset.subset(split="test")
    scores = model.scores(test.embeddings(), scorer, omega)
    samples = scored(test.ids(), scores, test.ood_flags())
    report = evaluate(samples, target_tpr, bandwidth, scorer=scorer)
    if scorer == "dbmf":
        w = model.omega if omega is None else omega
        report.extra = {"omega": w, "gamma": model.gamma,
                        "n_flagged_ood": int(np.sum(scores > model.gamma))}
    return report


def ablation(model, dataset, target_tpr=0.95, bandwidth=None):
    rows = []
    for label, scorer in ABLATION_ROWS:
        r = evaluate_model(model, dataset, scorer, target_tpr=target_tpr, bandwidth=bandwidth)
        rows.append({"method": label, "auroc": r.auroc, "fpr95": r.fpr95})
    return rows
