"""Non-negative dimension reweighting fitted to pairwise similarity ratings.

Each rated pair contributes one regression row ``f_i * f_j`` (elementwise),
so that ``X @ w`` predicts ``sum_k w_k f_ik f_jk``.  Weights are fitted by
non-negative least squares with an L2 penalty implemented as extra rows
``sqrt(lambda) * I`` with zero targets; the penalty is chosen by k-fold
cross-validation over pairs.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import evaluation
from .data import FeatureMatrix, SimilarityRatings, _read_rows
from .errors import ConvergenceError, DataError, FitError, ValidationError
from .rng import substream

KKT_TOL = 1e-10
DEFAULT_LAMBDA_GRID = tuple(np.logspace(-2, 6, 9).tolist())


@dataclass(frozen=True, eq=False)
class PairDesign:
    pairs: tuple[tuple[str, str], ...]
    rows: np.ndarray
    targets: np.ndarray

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)


def build_pair_design(features: FeatureMatrix, ratings: SimilarityRatings) -> PairDesign:
    """One row per rated pair, in sorted id-pair order."""
    ratings.validate_against(features)
    triples = sorted(ratings.pairs)
    ia = features.indices([a for a, _, _ in triples])
    ib = features.indices([b for _, b, _ in triples])
    rows = features.values[ia] * features.values[ib]
    targets = np.array([r for _, _, r in triples], dtype=np.float64)
    return PairDesign(tuple((a, b) for a, b, _ in triples), rows, targets)


def nnls(A, b, tol: float = KKT_TOL, max_iter: int | None = None) -> tuple[np.ndarray, float]:
    """Lawson-Hanson active-set solver for ``min ||Ax - b||`` subject to ``x >= 0``.

    ``tol`` is relative to ``max|A^T b|``.  Returns ``(x, residual norm)``.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = A.shape
    if b.shape != (m,):
        raise ValidationError("target length does not match design rows")
    if max_iter is None:
        max_iter = 3 * n + 50
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    atb = A.T @ b
    scale = max(float(np.max(np.abs(atb))) if n else 0.0, np.finfo(float).tiny)
    thresh = tol * scale
    w = atb.copy()
    it = 0
    while np.any(~passive) and np.max(np.where(passive, -np.inf, w)) > thresh:
        it += 1
        if it > max_iter:
            res = float(np.linalg.norm(A @ x - b))
            raise ConvergenceError(
                f"NNLS did not converge in {max_iter} iterations; residual norm {res:.6g}, "
                f"max dual violation {float(np.max(np.where(passive, -np.inf, w))):.3g}"
            )
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        while True:
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if np.all(z[passive] > 0):
                break
            # step back to the boundary and drop variables that hit zero
            bad = passive & (z <= 0)
            alpha = np.min(x[bad] / (x[bad] - z[bad]))
            x = x + alpha * (z - x)
            passive &= x > 10 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(x))))
            x[~passive] = 0.0
            if not np.any(passive):
                z = np.zeros(n)
                break
        x = z
        w = A.T @ (b - A @ x)
    return x, float(np.linalg.norm(A @ x - b))


def _augment(X: np.ndarray, s: np.ndarray, lam: float):
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    if lam == 0:
        return X, s
    n = X.shape[1]
    return np.vstack([X, np.sqrt(lam) * np.eye(n)]), np.concatenate([s, np.zeros(n)])


def nnls_ridge(X, s, lam: float) -> np.ndarray:
    """``argmin ||Xw - s||^2 + lam ||w||^2`` over ``w >= 0`` via row augmentation."""
    A, b = _augment(np.asarray(X, dtype=np.float64), np.asarray(s, dtype=np.float64), float(lam))
    return nnls(A, b)[0]


def r_squared(y, yhat) -> float:
    """Held-out coefficient of determination ``1 - SS_res / SS_tot``."""
    y = np.asarray(y, dtype=np.float64)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - yhat) ** 2))
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else -np.inf
    return 1.0 - ss_res / ss_tot


@dataclass(frozen=True, eq=False)
class SimilarityWeights:
    w: np.ndarray
    lam: float
    cv_score: float
    cv_scores: dict

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("similarity weights must be finite and >= 0")
        object.__setattr__(self, "w", w)


def pair_folds(n_pairs: int, n_folds: int, seed: int) -> list[np.ndarray]:
    """Validation index sets partitioning the pairs (sizes differ by at most one)."""
    if n_folds < 2 or n_folds > n_pairs:
        raise ValidationError(f"need 2 <= n_folds <= number of pairs ({n_pairs})")
    order = substream(seed, "transform-folds").permutation(n_pairs)
    return [np.sort(order[f::n_folds]) for f in range(n_folds)]


def fit_similarity_weights(features: FeatureMatrix, ratings: SimilarityRatings,
                           lambda_grid=DEFAULT_LAMBDA_GRID, n_folds: int = 5, seed: int = 0) -> SimilarityWeights:
    """Cross-validate the ridge penalty over pairs, then refit on every pair.

    With a single-value grid no cross-validation is run and ``cv_score`` is NaN.
    Ties in held-out R^2 go to the smallest penalty.
    """
    grid = sorted(float(x) for x in lambda_grid)
    if not grid:
        raise ValidationError("lambda grid must not be empty")
    design = build_pair_design(features, ratings)
    X, s = design.rows, design.targets
    if len(grid) == 1:
        return SimilarityWeights(nnls_ridge(X, s, grid[0]), grid[0], float("nan"), {})
    folds = pair_folds(design.n_pairs, n_folds, seed)
    scores = {}
    for lam in grid:
        vals = []
        for val in folds:
            train = np.setdiff1d(np.arange(design.n_pairs), val)
            w = nnls_ridge(X[train], s[train], lam)
            vals.append(r_squared(s[val], X[val] @ w))
        scores[lam] = float(np.mean(vals))
    finite = {lam: v for lam, v in scores.items() if np.isfinite(v)}
    if not finite:
        raise FitError("every ridge penalty gave a degenerate held-out fit")
    best = max(finite.values())
    lam = min(l for l, v in finite.items() if v == best)
    return SimilarityWeights(nnls_ridge(X, s, lam), lam, best, scores)


def apply_transform(features: FeatureMatrix, weights) -> FeatureMatrix:
    """Scale column ``k`` by ``sqrt(w_k)`` so row inner products become ``sum_k w_k f_ik f_jk``."""
    w = np.asarray(getattr(weights, "w", weights), dtype=np.float64)
    if w.shape != (features.n_features,):
        raise ValidationError(f"weight vector has length {w.size}, features have {features.n_features} dims")
    if np.any(w < 0):
        raise ValidationError("weights must be non-negative")
    return features.with_values(features.values * np.sqrt(w))


def similarity_fit_quality(features: FeatureMatrix, ratings: SimilarityRatings, weights) -> float:
    """Squared Pearson correlation between predicted inner products and ratings."""
    w = np.asarray(getattr(weights, "w", weights), dtype=np.float64)
    design = build_pair_design(features, ratings)
    r = evaluation.pearson(design.rows @ w, design.targets)
    if r is None:
        warnings.warn("zero variance in predicted or rated similarities; r^2 reported as 0", stacklevel=2)
        return 0.0
    return r * r


def pairwise_distances(features: FeatureMatrix) -> np.ndarray:
    """Euclidean distance matrix of the rows, for external MDS or clustering."""
    X = features.values
    sq = np.einsum("ij,ij->i", X, X)
    d2 = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.maximum(d2, 0.0))


def write_weights(path, weights) -> None:
    w = np.asarray(getattr(weights, "w", weights), dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["dim", "weight"])
        for k, v in enumerate(w):
            out.writerow([k, repr(float(v))])


def load_weights(path) -> np.ndarray:
    header, rows = _read_rows(path)
    if header != ["dim", "weight"]:
        raise DataError(f"{path}: header must be dim,weight")
    try:
        dims = [int(r[0]) for r in rows]
        w = np.array([float(r[1]) for r in rows])
    except (ValueError, IndexError):
        raise DataError(f"{path}: malformed weight row") from None
    if dims != list(range(len(dims))):
        raise DataError(f"{path}: dims must be 0..{len(dims) - 1} in order")
    return w


def write_distances(path, features: FeatureMatrix) -> None:
    D = pairwise_distances(features)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["id", *features.stimulus_ids])
        for sid, row in zip(features.stimulus_ids, D):
            out.writerow([sid, *(repr(float(v)) for v in row)])
