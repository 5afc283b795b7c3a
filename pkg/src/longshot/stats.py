"""Pure numerical kernel: cosine, ranks, rank/linear correlation, OLS, histogram MI.

All functions are pure over immutable inputs and safe for concurrent use.
Correlations use average ranks for ties and are clamped against rounding so
results always land in [-1, 1].
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateInputError, ValidationError

ArrayLike = Sequence[float] | np.ndarray


def _as_vector(x: ArrayLike, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise ValidationError(f"{name} must be 1-dimensional, got shape {v.shape}")
    if v.size == 0:
        raise ValidationError(f"{name} is empty")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} contains non-finite entries")
    return v


def _paired(x: ArrayLike, y: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    u = _as_vector(x, "x")
    v = _as_vector(y, "y")
    if u.size != v.size:
        raise ValidationError(f"length mismatch: {u.size} != {v.size}")
    return u, v


def cosine(u: ArrayLike, v: ArrayLike) -> float:
    """Dot product of two unit-norm vectors, clamped to [-1, 1]."""
    a = _as_vector(u, "u")
    b = _as_vector(v, "v")
    if a.size != b.size:
        raise ValidationError(f"dimension mismatch: {a.size} != {b.size}")
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def ranks(x: ArrayLike) -> np.ndarray:
    """1-based ranks with average ranks assigned to ties."""
    v = _as_vector(x, "x")
    n = v.size
    order = np.argsort(v, kind="mergesort")
    sorted_v = v[order]
    ranked = np.arange(1, n + 1, dtype=float)
    boundaries = np.flatnonzero(np.diff(sorted_v) != 0)
    starts = np.concatenate(([0], boundaries + 1))
    stops = np.concatenate((boundaries + 1, [n]))
    for s, e in zip(starts, stops):
        if e - s > 1:
            ranked[s:e] = (s + 1 + e) / 2.0
    out = np.empty(n, dtype=float)
    out[order] = ranked
    return out


def _pearson_unchecked(u: np.ndarray, v: np.ndarray) -> float:
    du = u - u.mean()
    dv = v - v.mean()
    denom = np.sqrt(np.sum(du * du) * np.sum(dv * dv))
    return float(np.clip(np.sum(du * dv) / denom, -1.0, 1.0))


def _check_correlation_inputs(u: np.ndarray, v: np.ndarray) -> None:
    if u.size < 3:
        raise ValidationError(f"correlation needs n >= 3, got n = {u.size}")
    if np.all(u == u[0]):
        raise DegenerateInputError("x is constant: correlation undefined")
    if np.all(v == v[0]):
        raise DegenerateInputError("y is constant: correlation undefined")


def spearman(x: ArrayLike, y: ArrayLike) -> float:
    """Rank correlation: Pearson correlation of the average-rank vectors."""
    u, v = _paired(x, y)
    _check_correlation_inputs(u, v)
    return _pearson_unchecked(ranks(u), ranks(v))


def pearson(x: ArrayLike, y: ArrayLike) -> float:
    """Sample Pearson correlation coefficient."""
    u, v = _paired(x, y)
    _check_correlation_inputs(u, v)
    return _pearson_unchecked(u, v)


class OlsFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float


def ols_fit(x: ArrayLike, y: ArrayLike) -> OlsFit:
    """Least-squares line y = slope*x + intercept with its R².

    R² is defined as 0 when y has zero variance: a response that never moves
    is treated as entirely unexplained by x.
    """
    u, v = _paired(x, y)
    if u.size < 2:
        raise ValidationError(f"ols_fit needs n >= 2, got n = {u.size}")
    if np.all(u == u[0]):
        raise DegenerateInputError("x is constant: slope undefined")
    if np.all(v == v[0]):
        # constant response: exactly flat fit, R^2 = 0 by convention
        return OlsFit(slope=0.0, intercept=float(v[0]), r_squared=0.0)
    du = u - u.mean()
    slope = float(np.sum(du * v) / np.sum(du * du))
    intercept = float(v.mean() - slope * u.mean())
    residuals = v - (slope * u + intercept)
    ss_res = float(np.sum(residuals * residuals))
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    if ss_tot == 0.0:
        r_squared = 0.0
    else:
        r_squared = float(np.clip(1.0 - ss_res / ss_tot, 0.0, 1.0))
    return OlsFit(slope=slope, intercept=intercept, r_squared=r_squared)


def mutual_information(x: ArrayLike, y: ArrayLike, bins: int) -> float:
    """Plug-in mutual information in bits over an equal-width 2-D histogram.

    The histogram spans the observed ranges; empty cells contribute zero.
    Degenerate input (a constant coordinate) yields 0 by convention.
    """
    u, v = _paired(x, y)
    if bins < 2:
        raise ValidationError(f"bins must be >= 2, got {bins}")
    if np.all(u == u[0]) or np.all(v == v[0]):
        return 0.0
    counts, _, _ = np.histogram2d(u, v, bins=bins)
    joint = counts / counts.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log2(joint[nz] / (px @ py)[nz])))
    return max(mi, 0.0)
