"""Scoring and model comparison.

Correlations are Pearson correlations between per-stimulus proportions of
category-B choices.  Random half-splits are drawn per stimulus: the number
of B choices landing in one half is hypergeometric, which is exactly the
distribution obtained by shuffling that stimulus's individual trials.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import DataError, JudgmentSet, _read_rows
from .rng import substream

PROBABILITY_CLAMP = 1e-6

GROUP_ORDER = ("Prototype - Linear", "Prototype - Quadratic", "Exemplar", "Baseline", "Ceiling")
FAMILY_GROUP = {
    "prototype-linear": "Prototype - Linear",
    "hyperplane": "Prototype - Linear",
    "prototype-quadratic": "Prototype - Quadratic",
    "exemplar": "Exemplar",
    "baseline": "Baseline",
}


def aic(k: int, max_log_likelihood: float) -> float:
    """Akaike information criterion ``2k - 2 LL``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return 2 * k - 2 * max_log_likelihood


def spearman_brown(r: float) -> float:
    """Step a half-length reliability up to full length: ``2r / (1 + r)``."""
    return 2.0 * r / (1.0 + r)


def pearson(x, y) -> float | None:
    """Pearson correlation, or ``None`` when either vector has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    # the mean of a constant vector need not round back to that constant
    if x.size == 0 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx <= 0.0 or syy <= 0.0:
        return None
    # sqrt of the product keeps r == 1 exact for identical vectors
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def _half_split(n_a: np.ndarray, n_b: np.ndarray, rng: np.random.Generator):
    """Proportion of B choices in each random half, per stimulus."""
    n = n_a + n_b
    half = n // 2 + (n % 2) * rng.integers(0, 2, size=n.size)
    a1 = rng.hypergeometric(n_a, n_b, half)
    b1 = half - a1
    b2 = n_b - b1
    return b1 / half, b2 / (n - half)


def _check_splittable(judgments: JudgmentSet):
    n = judgments.n_total
    if np.any(n < 2):
        bad = judgments.stimulus_ids[int(np.flatnonzero(n < 2)[0])]
        raise DataError(f"stimulus {bad!r} has fewer than 2 trials; cannot split in half")


def split_half_reliability(judgments: JudgmentSet, n_splits: int = 100, seed: int = 0) -> tuple[float, float]:
    """Mean split-half correlation and its Spearman-Brown corrected value."""
    _check_splittable(judgments)
    rs = []
    degenerate = 0
    for s in range(n_splits):
        p1, p2 = _half_split(judgments.n_a, judgments.n_b, substream(seed, "splits", s))
        r = pearson(p1, p2)
        if r is None:
            degenerate += 1
            r = 0.0
        rs.append(r)
    if degenerate:
        warnings.warn(f"{degenerate}/{n_splits} half-splits had zero variance; counted as r = 0", stacklevel=2)
    raw = float(np.mean(rs))
    return raw, spearman_brown(raw)


def prediction_correlation(predictions, judgments: JudgmentSet, n_splits: int = 100, seed: int = 0) -> float:
    """Mean correlation of predicted P(B) with each half's observed proportions.

    ``predictions`` is aligned with ``judgments.stimulus_ids``.
    """
    pred = np.asarray(predictions, dtype=np.float64)
    if pred.shape != (len(judgments.stimulus_ids),):
        raise DataError("predictions must cover every judged stimulus")
    _check_splittable(judgments)
    vals = []
    degenerate = 0
    for s in range(n_splits):
        p1, p2 = _half_split(judgments.n_a, judgments.n_b, substream(seed, "splits", s))
        r1, r2 = pearson(pred, p1), pearson(pred, p2)
        if r1 is None or r2 is None:
            degenerate += 1
            vals.append(0.0)
        else:
            vals.append(0.5 * (r1 + r2))
    if degenerate:
        warnings.warn(
            f"{degenerate}/{n_splits} splits had zero variance in predictions or proportions; counted as 0",
            stacklevel=2,
        )
    return float(np.mean(vals))


# --------------------------------------------------------------------------
# Scores, baseline and reports


@dataclass(frozen=True)
class ModelScore:
    name: str
    ll: float
    k: int
    correlation: float
    family: str = "baseline"
    layer: str | None = None
    aic: float = field(default=float("nan"))

    def __post_init__(self):
        object.__setattr__(self, "aic", aic(self.k, self.ll))

    def to_dict(self) -> dict:
        return {
            "name": self.name, "family": self.family, "layer": self.layer,
            "ll": self.ll, "aic": self.aic, "correlation": self.correlation, "k": self.k,
        }


@dataclass(frozen=True, eq=False)
class BaselinePredictions:
    """External classifier probabilities, renormalised to sum to one per stimulus."""

    stimulus_ids: tuple[str, ...]
    p_a: np.ndarray
    p_b: np.ndarray

    def __post_init__(self):
        p_a = np.asarray(self.p_a, dtype=np.float64)
        p_b = np.asarray(self.p_b, dtype=np.float64)
        if np.any(p_a < 0) or np.any(p_b < 0) or not np.all(np.isfinite(p_a + p_b)):
            raise DataError("baseline probabilities must be finite and >= 0")
        tot = p_a + p_b
        if np.any(tot <= 0):
            raise DataError("baseline probabilities sum to zero for some stimulus")
        object.__setattr__(self, "stimulus_ids", tuple(self.stimulus_ids))
        object.__setattr__(self, "p_a", p_a / tot)
        object.__setattr__(self, "p_b", p_b / tot)

    def aligned_p_b(self, judgments: JudgmentSet) -> np.ndarray:
        index = {sid: i for i, sid in enumerate(self.stimulus_ids)}
        missing = [sid for sid in judgments.stimulus_ids if sid not in index]
        if missing:
            raise DataError(f"baseline has no prediction for stimulus {missing[0]!r}")
        return self.p_b[[index[sid] for sid in judgments.stimulus_ids]]


def load_baseline(path) -> BaselinePredictions:
    header, rows = _read_rows(path)
    if header != ["id", "p_A", "p_B"]:
        raise DataError(f"{path}: header must be id,p_A,p_B")
    ids, pa, pb = [], [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 3:
            raise DataError(f"{path}:{lineno}: ragged row")
        try:
            pa.append(float(row[1]))
            pb.append(float(row[2]))
        except ValueError:
            raise DataError(f"{path}:{lineno}: probability is not a number") from None
        ids.append(row[0].strip())
    return BaselinePredictions(ids, pa, pb)


def counts_log_likelihood(p_b, n_a, n_b) -> float:
    p_b = np.asarray(p_b, dtype=np.float64)
    return float(np.sum(n_b * np.log(p_b) + n_a * np.log1p(-p_b)))


def score_baseline(
    baseline: BaselinePredictions, judgments: JudgmentSet, n_splits: int = 100, seed: int = 0,
    name: str = "nn-softmax", layer: str | None = None,
) -> ModelScore:
    """Score external predictions under the counts likelihood with k = 1."""
    p_b = baseline.aligned_p_b(judgments)
    eps = PROBABILITY_CLAMP
    clipped = np.clip(p_b, eps, 1.0 - eps)
    if np.any(clipped != p_b):
        warnings.warn(
            f"{int(np.sum(clipped != p_b))} baseline probabilities clamped to [{eps:g}, {1 - eps:g}]",
            stacklevel=2,
        )
    ll = counts_log_likelihood(clipped, judgments.n_a, judgments.n_b)
    corr = prediction_correlation(clipped, judgments, n_splits=n_splits, seed=seed)
    return ModelScore(name=name, ll=ll, k=1, correlation=corr, family="baseline", layer=layer)


@dataclass
class ReportRow:
    score: ModelScore
    group: str
    best_ll: bool = False
    best_aic: bool = False
    best_correlation: bool = False


@dataclass
class Report:
    rows: list[ReportRow]
    ceiling: float | None = None
    ceiling_raw: float | None = None

    def to_dict(self) -> dict:
        out = {
            "rows": [
                dict(r.score.to_dict(), group=r.group, best_ll=r.best_ll,
                     best_aic=r.best_aic, best_correlation=r.best_correlation)
                for r in self.rows
            ],
        }
        if self.ceiling is not None:
            out["ceiling"] = {"name": "split-half reliability", "correlation": self.ceiling,
                              "raw_correlation": self.ceiling_raw}
        return out

    def to_text(self) -> str:
        lines = []
        header = f"{'Model':<30}{'LL':>14}{'AIC':>14}{'Correlation':>13}{'k':>8}"
        current = None
        for row in self.rows:
            key = (row.score.layer, row.group)
            if key != current:
                if current is not None:
                    lines.append("")
                if row.score.layer is not None and (current is None or current[0] != row.score.layer):
                    lines.append(f"== {row.score.layer} ==")
                lines.append(row.group)
                lines.append(header)
                current = key
            s = row.score
            mark = lambda flag: "*" if flag else " "
            lines.append(
                f"  {s.name:<28}{s.ll:>13,.1f}{mark(row.best_ll)}{s.aic:>13,.1f}{mark(row.best_aic)}"
                f"{s.correlation:>12.2f}{mark(row.best_correlation)}{s.k:>8d}"
            )
        if self.ceiling is not None:
            lines += ["", "Ceiling", header,
                      f"  {'split-half reliability':<28}{'-':>14}{'-':>14}{self.ceiling:>13.2f}{'-':>8}"]
        lines += ["", "* best in class"]
        return "\n".join(lines) + "\n"


def _sort_key(score: ModelScore):
    return (-score.ll, score.aic, score.name)


def compare_models(scores: Sequence[ModelScore], ceiling: float | None = None,
                   ceiling_raw: float | None = None) -> Report:
    """Group scores by layer and model class, order by LL, then AIC, then name."""
    if not scores:
        raise ValueError("no scores to compare")
    layers: list = []
    for s in scores:
        if s.layer not in layers:
            layers.append(s.layer)
    rows: list[ReportRow] = []
    for layer in layers:
        for group in GROUP_ORDER:
            members = sorted(
                (s for s in scores if s.layer == layer and FAMILY_GROUP.get(s.family, "Baseline") == group),
                key=_sort_key,
            )
            if not members:
                continue
            best_ll = members[0]
            best_aic = min(members, key=lambda s: (s.aic, -s.ll, s.name))
            best_corr = min(members, key=lambda s: (-s.correlation, -s.ll, s.name))
            for s in members:
                rows.append(ReportRow(s, group, s is best_ll, s is best_aic, s is best_corr))
    return Report(rows, ceiling=ceiling, ceiling_raw=ceiling_raw)
