"""Distance and similarity primitives shared by every model.

The batch exemplar kernel has two implementations: a numba-compiled one and
a pure-numpy one.  Set ``CATFIT_BACKEND=numpy`` (or ``numba``) to choose;
by default numba is used when it imports.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from ..errors import ModelError
from . import _numpy

VARIANCE_FLOOR_SCALE = 1e-8


def _select_backend():
    requested = os.environ.get("CATFIT_BACKEND", "").strip().lower()
    if requested not in ("", "numba", "numpy"):
        raise ImportError(f"CATFIT_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numpy":
        return "numpy", _numpy
    try:
        from . import _numba
    except ImportError:
        if requested == "numba":
            raise
        return "numpy", _numpy
    return "numba", _numba


BACKEND, _impl = _select_backend()


def backend_module(name: str | None = None):
    """Kernel module for ``name`` (``"numba"``/``"numpy"``), default the active one."""
    if name is None or name == BACKEND:
        return _impl
    if name == "numpy":
        return _numpy
    if name == "numba":
        from . import _numba
        return _numba
    raise ValueError(f"unknown backend {name!r}")


def exemplar_side(Y, X, w, beta, need_sq=True):
    """Batch log summed exemplar similarity and responsibility-weighted squared diffs.

    See :func:`catfit.kernels._numpy.exemplar_side` for the exact outputs.
    """
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if X.shape[0] == 0:
        raise ModelError("empty exemplar set")
    return _impl.exemplar_side(Y, X, w, float(beta), need_sq)


def weighted_sq_distances(Y, X, w):
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    return _impl.weighted_sq_distances(Y, X, w)


# --------------------------------------------------------------------------
# Scalar primitives


def _vectors(*arrays):
    out = [np.asarray(a, dtype=np.float64).ravel() for a in arrays]
    if len({a.shape for a in out}) != 1:
        raise ModelError("length mismatch: " + " vs ".join(str(a.size) for a in out))
    return out


def mahalanobis_sq(y, mu, sigma_diag) -> float:
    """Squared Mahalanobis distance under a diagonal covariance."""
    y, mu, sigma_diag = _vectors(y, mu, sigma_diag)
    if np.any(sigma_diag <= 0):
        raise ModelError("variance entries must be strictly positive")
    diff = y - mu
    return float(np.sum(diff * diff / sigma_diag))


def weighted_minkowski(y, x, w, r: float = 2.0) -> float:
    """``[sum_k w_k |x_k - y_k|**r] ** (1/r)``."""
    y, x, w = _vectors(y, x, w)
    return float(np.sum(w * np.abs(x - y) ** r) ** (1.0 / r))


def exp_similarity(distance, beta: float = 1.0, q: float = 2.0):
    """Exemplar similarity ``exp(-beta * d**q)``.

    Prototype similarity is ``exp(-md)`` with ``md`` already a squared
    distance, i.e. ``exp_similarity(md, beta=1, q=1)``.
    """
    return np.exp(-beta * np.power(distance, q))


def prototype_similarity(md):
    return np.exp(-np.asarray(md))


# --------------------------------------------------------------------------
# Covariance and attention parameter containers


COVARIANCE_KINDS = (
    "identity",
    "shared-diagonal-empirical",
    "shared-vector-fitted",
    "per-category-pooled-scalar-empirical",
    "per-category-diagonal-empirical",
    "per-category-scalar-fitted",
    "per-category-vector-fitted",
)


@dataclass(frozen=True)
class CovarianceSpec:
    """Diagonal covariance for both categories.

    ``values`` maps ``"A"``/``"B"`` to a positive scalar or per-dimension vector.
    Shared kinds store the same array under both keys.
    """

    kind: str
    values: dict

    def __post_init__(self):
        if self.kind not in COVARIANCE_KINDS:
            raise ModelError(f"unknown covariance kind {self.kind!r}")
        for cat in ("A", "B"):
            v = np.asarray(self.values[cat], dtype=np.float64)
            if np.any(~np.isfinite(v)) or np.any(v <= 0):
                raise ModelError("covariance entries must be finite and > 0")

    @property
    def shared(self) -> bool:
        return self.kind in ("identity", "shared-diagonal-empirical", "shared-vector-fitted")

    def diag(self, category: str, n_features: int) -> np.ndarray:
        v = np.asarray(self.values[category], dtype=np.float64)
        return np.broadcast_to(v, (n_features,)).copy()


@dataclass(frozen=True)
class AttentionWeights:
    """Positive dimension weights summing to one."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or np.any(w <= 0) or not math.isclose(w.sum(), 1.0, rel_tol=0, abs_tol=1e-9):
            raise ModelError("attention weights must be positive and sum to one")
        object.__setattr__(self, "w", w)

    @classmethod
    def from_logits(cls, logits) -> "AttentionWeights":
        return cls(softmax(logits))

    @classmethod
    def uniform(cls, n_features: int) -> "AttentionWeights":
        return cls(np.full(n_features, 1.0 / n_features))


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


# --------------------------------------------------------------------------
# Empirical category statistics


@dataclass(frozen=True)
class CategoryStats:
    mu: np.ndarray
    var_diag: np.ndarray
    pooled: float
    n: int


def variance_floor(values: np.ndarray) -> float:
    """Additive floor for empirical variances: 1e-8 x the mean feature variance."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 2:
        mean_var = 0.0
    else:
        mean_var = float(np.mean(np.var(values, axis=0, ddof=1)))
    floor = VARIANCE_FLOOR_SCALE * mean_var
    # all-constant features: fall back to an absolute floor
    return floor if floor > 0 else np.finfo(np.float64).tiny ** 0.5


def empirical_stats(values: np.ndarray, floor: float) -> CategoryStats:
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 2:
        raise ModelError(f"need at least 2 members for empirical statistics, got {values.shape[0]}")
    mu = values.mean(axis=0)
    var = values.var(axis=0, ddof=1) + floor
    return CategoryStats(mu=mu, var_diag=var, pooled=float(var.mean()), n=values.shape[0])


def empirical_category_stats(features, category: str, rows=None):
    """Mean, floored per-dimension variance (n-1) and pooled scalar of one category.

    ``rows`` restricts the computation (and the floor) to a training subset.
    Returns ``(mu, var_diag, pooled_scalar)``.
    """
    if rows is None:
        rows = np.arange(features.n_stimuli)
    rows = np.asarray(rows, dtype=np.intp)
    members = features.category_rows(category, rows)
    floor = variance_floor(features.values[rows])
    stats = empirical_stats(features.values[members], floor)
    return stats.mu, stats.var_diag, stats.pooled
