"""
OOD evaluation: AUROC, FPR at a target ID recall, ROC points and the
score-density curves used for distribution plots.

Scores are oriented higher = more OOD. For AUROC and the ROC curve the OOD
samples are the positive class; FPR95 follows the usual convention of
treating ID as positive, so it reports the fraction of OOD samples that
pass as ID once 95% of ID samples are accepted.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateDistribution, OneClassOnly
from .numerics import (
    DEFAULT_GRID_SIZE,
    DensityCurve,
    gaussian_kde,
    minmax_rescale,
    silverman_bandwidth,
)


@dataclass(frozen=True)
class ScoredSample:
    id: str
    score: float
    is_ood: bool


def _split(samples):
    scores = np.array([s.score for s in samples], dtype=np.float64)
    ood = np.array([s.is_ood for s in samples], dtype=bool)
    if not ood.any() or ood.all():
        raise OneClassOnly("need at least one ID and one OOD sample")
    return scores, ood


def scored(ids, scores, is_ood):
    return [ScoredSample(i, float(s), bool(o)) for i, s, o in zip(ids, scores, is_ood)]


def auroc(samples):
    """P(random OOD score > random ID score), ties counted as one half."""
    scores, ood = _split(samples)
    n_ood, n_id = int(ood.sum()), int((~ood).sum())
    ranks = rankdata(scores, method="average")
    u = float(ranks[ood].sum()) - n_ood * (n_ood + 1) / 2.0
    return u / (n_ood * n_id)


def fpr_at_tpr(samples, target_tpr=0.95):
    scores, ood = _split(samples)
    id_sorted = np.sort(scores[~ood])
    rank = max(1, math.ceil(target_tpr * id_sorted.size - 1e-9))
    threshold = id_sorted[rank - 1]
    return float(np.mean(scores[ood] <= threshold))


def roc_curve(samples):
    """ROC points ``(fpr, tpr)`` sweeping the threshold down over distinct scores."""
    scores, ood = _split(samples)
    order = np.argsort(-scores, kind="mergesort")
    s, pos = scores[order], ood[order]
    tp = np.cumsum(pos)
    fp = np.cumsum(~pos)
    # keep the last index of each run of equal scores
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tpr = np.r_[0.0, tp[last] / tp[-1]]
    fpr = np.r_[0.0, fp[last] / fp[-1]]
    return list(zip(fpr.tolist(), tpr.tolist()))


def trapezoid_area(points):
    pts = np.asarray(points, dtype=np.float64)
    return float(np.trapezoid(pts[:, 1], pts[:, 0]))


def density_report(samples, bandwidth=None, grid_size=DEFAULT_GRID_SIZE):
    """Joint min-max rescale to [0, 1], then one Gaussian KDE per group.

    Both curves share one grid. Without an explicit ``bandwidth`` each group
    uses its own Silverman bandwidth and the grid is padded by three of the
    larger bandwidth on each side.
    """
    scores, ood = _split(samples)
    if ood.sum() < 2 or (~ood).sum() < 2:
        raise DegenerateDistribution("need at least 2 samples per group for a density")
    rescaled = minmax_rescale(scores)
    groups = rescaled[~ood], rescaled[ood]
    if bandwidth is None:
        bws = [silverman_bandwidth(g) if np.std(g) > 0 else 1e-3 for g in groups]
    else:
        bws = [float(bandwidth)] * 2
    pad = 3.0 * max(bws)
    grid = np.linspace(0.0 - pad, 1.0 + pad, grid_size)
    id_curve, ood_curve = (gaussian_kde(g, h, grid) for g, h in zip(groups, bws))
    return id_curve, ood_curve


def overlap_area(a, b):
    return float(np.trapezoid(np.minimum(a.ys, b.ys), a.xs))


@dataclass
class EvalReport:
    auroc: float
    fpr95: float
    roc_points: list
    id_density: DensityCurve
    ood_density: DensityCurve
    n_id: int
    n_ood: int
    scorer: str = "dbmf"
    samples: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "scorer": self.scorer,
            "auroc": self.auroc,
            "fpr95": self.fpr95,
            "n_id": self.n_id,
            "n_ood": self.n_ood,
            "roc_points": [list(p) for p in self.roc_points],
            "id_density": self.id_density.to_dict(),
            "ood_density": self.ood_density.to_dict(),
            "samples": [{"id": s.id, "score": s.score, "is_ood": s.is_ood} for s in self.samples],
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            auroc=d["auroc"], fpr95=d["fpr95"],
            roc_points=[tuple(p) for p in d["roc_points"]],
            id_density=DensityCurve.from_dict(d["id_density"]),
            ood_density=DensityCurve.from_dict(d["ood_density"]),
            n_id=d["n_id"], n_ood=d["n_ood"], scorer=d.get("scorer", "dbmf"),
            samples=[ScoredSample(s["id"], s["score"], s["is_ood"]) for s in d.get("samples", [])],
            extra=d.get("extra", {}),
        )


def evaluate(samples, target_tpr=0.95, bandwidth=None, scorer="dbmf"):
    id_curve, ood_curve = density_report(samples, bandwidth)
    n_ood = sum(s.is_ood for s in samples)
    return EvalReport(
        auroc=auroc(samples),
        fpr95=fpr_at_tpr(samples, target_tpr),
        roc_points=roc_curve(samples),
        id_density=id_curve,
        ood_density=ood_curve,
        n_id=len(samples) - n_ood,
        n_ood=n_ood,
        scorer=scorer,
        samples=list(samples),
    )


def write_report_json(report, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_report_json(path):
    with open(path, encoding="utf-8") as fh:
        return EvalReport.from_dict(json.load(fh))


def write_scores_csv(samples, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "score", "is_ood"])
        for s in samples:
            w.writerow([s.id, repr(s.score), int(s.is_ood)])


def write_density_csv(id_curve, ood_curve, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "x", "y"])
        for name, curve in (("id", id_curve), ("ood", ood_curve)):
            for x, y in zip(curve.xs.tolist(), curve.ys.tolist()):
                w.writerow([name, repr(x), repr(y)])
