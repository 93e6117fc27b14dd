"""
Score fusion and the threshold decision.

Both branch scores are z-scored with statistics fitted on calibration
scores, then combined as ``z(st) + omega * z(sv)``. A sample is OOD when
the fused score is strictly above ``gamma``.
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, TooFewSamples
from .numerics import zscore_fit

log = logging.getLogger(__name__)

OMEGA_RANGE = (1.0, 3.0)
ID, OOD = "ID", "OOD"


@dataclass(frozen=True)
class ScoreStandardizer:
    mean_st: float
    std_st: float
    mean_sv: float
    std_sv: float

    def z_st(self, st):
        return (np.asarray(st, dtype=np.float64) - self.mean_st) / self.std_st

    def z_sv(self, sv):
        return (np.asarray(sv, dtype=np.float64) - self.mean_sv) / self.std_sv

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(d[k]) for k in ("mean_st", "std_st", "mean_sv", "std_sv")})


@dataclass(frozen=True)
class DetectorConfig:
    omega: float = 1.0
    gamma: float | None = None
    target_tpr: float = 0.95
    allow_out_of_range: bool = False

    def __post_init__(self):
        if not math.isfinite(self.omega):
            raise ConfigError("omega must be finite")
        lo, hi = OMEGA_RANGE
        if not lo <= self.omega <= hi:
            if not self.allow_out_of_range:
                raise ConfigError(f"omega={self.omega} outside [{lo}, {hi}]")
            log.warning("omega=%s outside the recommended range [%s, %s]", self.omega, lo, hi)
        if not 0.0 < self.target_tpr <= 1.0:
            raise ConfigError("target_tpr must lie in (0, 1]")
        if self.gamma is not None and not math.isfinite(self.gamma):
            raise ConfigError("gamma must be finite")


def fit_standardizer(st_scores, sv_scores):
    mean_st, std_st = zscore_fit(st_scores)
    mean_sv, std_sv = zscore_fit(sv_scores)
    return ScoreStandardizer(mean_st, std_st, mean_sv, std_sv)


def fuse(standardizer, st, sv, omega):
    """Fused OOD score; scalars in, scalar out, arrays in, array out."""
    out = standardizer.z_st(st) + omega * standardizer.z_sv(sv)
    return float(out) if np.ndim(out) == 0 else out


def decide(score, gamma):
    return OOD if score > gamma else ID


def calibrate_gamma(fused_id_scores, target_tpr=0.95):
    """Smallest ID score ``g`` with at least ``target_tpr`` of ID scores ``<= g``."""
    s = np.sort(np.asarray(fused_id_scores, dtype=np.float64))
    if s.size < 20:
        raise TooFewSamples(f"need >= 20 calibration scores, got {s.size}")
    if not 0.0 < target_tpr <= 1.0:
        raise ConfigError("target_tpr must lie in (0, 1]")
    # tolerance guards against 0.95 * n landing a hair above an integer
    rank = max(1, math.ceil(target_tpr * s.size - 1e-9))
    return float(s[rank - 1])
