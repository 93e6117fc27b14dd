"""
Small dense linear-algebra and statistics kernel.

Everything here works in float64 on plain numpy arrays. Matrices are 2-D
arrays, vectors 1-D arrays.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    DegenerateDistribution,
    DimensionMismatch,
    EmptyInput,
    InvalidBandwidth,
    NotSPD,
)

_SQRT_2PI = math.sqrt(2.0 * math.pi)
DEFAULT_GRID_SIZE = 256


@dataclass(frozen=True)
class DensityCurve:
    """Density values ``ys`` evaluated on an increasing grid ``xs``."""

    xs: np.ndarray
    ys: np.ndarray

    def integral(self):
        return float(np.trapezoid(self.ys, self.xs))

    def mode(self):
        return float(self.xs[int(np.argmax(self.ys))])

    def to_dict(self):
        return {"xs": self.xs.tolist(), "ys": self.ys.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["xs"], dtype=np.float64), np.asarray(d["ys"], dtype=np.float64))


def _as_vector(v, name="v"):
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def cholesky(a):
    """Lower-triangular ``L`` with ``L @ L.T == a``.

    Args:
        a: symmetric positive-definite matrix.

    Raises:
        DimensionMismatch: if ``a`` is not square.
        NotSPD: if ``a`` is not symmetric or a pivot is not positive.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"cholesky needs a square matrix, got {a.shape}")
    scale = max(float(np.max(np.abs(a))), np.finfo(np.float64).tiny) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise NotSPD("matrix is not symmetric")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotSPD("non-positive pivot; regularize the covariance") from exc


def spd_solve(chol, b):
    """Solve ``(chol @ chol.T) x = b`` by two triangular solves.

    ``b`` may be a vector or a matrix of right-hand sides (one per column).
    """
    chol = np.asarray(chol, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if chol.ndim != 2 or chol.shape[0] != chol.shape[1] or b.shape[0] != chol.shape[0]:
        raise DimensionMismatch(f"cannot solve system {chol.shape} with rhs {b.shape}")
    y = solve_triangular(chol, b, lower=True, check_finite=False)
    return solve_triangular(chol.T, y, lower=False, check_finite=False)


def log_sum_exp(v, axis=-1):
    """Shift-stable ``log(sum(exp(v)))`` along ``axis``."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise EmptyInput("log_sum_exp of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    out = np.squeeze(out, axis=axis)
    return float(out) if out.ndim == 0 else out


def softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise EmptyInput("softmax of an empty vector")
    e = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def zscore_fit(values):
    """Return ``(mean, std)`` using the population (1/n) convention."""
    values = _as_vector(values, "values")
    if values.size < 2:
        raise DegenerateDistribution("need at least 2 values to standardize")
    mean = float(np.mean(values))
    std = float(np.sqrt(np.mean((values - mean) ** 2)))
    if std < 1e-12:
        raise DegenerateDistribution("scores are constant (std < 1e-12)")
    return mean, std


def minmax_rescale(values):
    values = _as_vector(values, "values")
    if values.size < 2:
        raise DegenerateDistribution("need at least 2 values to rescale")
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        raise DegenerateDistribution("all values equal; min-max range is zero")
    return (values - lo) / (hi - lo)


def silverman_bandwidth(samples):
    """Rule-of-thumb ``1.06 * sigma * n**(-1/5)``, population sigma."""
    samples = _as_vector(samples, "samples")
    if samples.size == 0:
        raise EmptyInput("bandwidth of an empty sample")
    sigma = float(np.std(samples))
    if sigma <= 0.0:
        raise DegenerateDistribution("cannot pick a bandwidth for constant samples")
    return 1.06 * sigma * samples.size ** (-0.2)


def kde_grid(lo, hi, bandwidth, size=DEFAULT_GRID_SIZE):
    """Evenly spaced grid over ``[lo - 3h, hi + 3h]``."""
    if not bandwidth > 0:
        raise InvalidBandwidth(f"bandwidth must be positive, got {bandwidth}")
    return np.linspace(lo - 3.0 * bandwidth, hi + 3.0 * bandwidth, size)


def gaussian_kde(samples, bandwidth, grid):
    """Gaussian kernel density of ``samples`` evaluated on ``grid``."""
    samples = _as_vector(samples, "samples")
    grid = _as_vector(grid, "grid")
    if samples.size == 0:
        raise EmptyInput("KDE needs at least one sample")
    if not (np.isfinite(bandwidth) and bandwidth > 0):
        raise InvalidBandwidth(f"bandwidth must be positive, got {bandwidth}")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise DimensionMismatch("grid must be strictly increasing")
    u = (grid[:, None] - samples[None, :]) / bandwidth
    ys = np.exp(-0.5 * u * u).sum(axis=1) / (samples.size * bandwidth * _SQRT_2PI)
    return DensityCurve(grid.copy(), ys)
