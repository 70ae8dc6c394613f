"""Mini-batch Adam with k-fold cross-validation, early stopping and a learning-rate grid.

For every learning rate every fold is trained from the same start point on
shuffled stimulus batches; the held-out NLL is recorded every
``eval_every`` batches.  The early-stopping checkpoint minimises the mean
held-out NLL across folds, the learning rate with the lowest such minimum
wins, and the fold parameters at that checkpoint are averaged (in the
unconstrained space) to give the final model, scored on every stimulus.
"""
from __future__ import annotations

import logging
import sys
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from . import evaluation, models
from .data import FeatureMatrix, JudgmentSet
from .errors import FitError, ValidationError
from .rng import substream

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    n_folds: int = 5
    batch_size: int = 256
    eval_every: int = 10
    max_steps: int = 5000
    learning_rate_grid: tuple[float, ...] = (1e-3, 3e-3, 1e-2, 3e-2)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    n_splits: int = 100

    def __post_init__(self):
        object.__setattr__(self, "learning_rate_grid", tuple(float(x) for x in self.learning_rate_grid))
        if self.n_folds < 2:
            raise ValidationError("n_folds must be >= 2")
        if self.batch_size < 1 or self.eval_every < 1 or self.max_steps < 0:
            raise ValidationError("batch_size and eval_every must be >= 1, max_steps >= 0")
        if not self.learning_rate_grid or any(lr <= 0 for lr in self.learning_rate_grid):
            raise ValidationError("learning_rate_grid must be a non-empty list of positive rates")
        if self.n_splits < 1:
            raise ValidationError("n_splits must be >= 1")

    @classmethod
    def from_mapping(cls, doc: dict) -> "FitConfig":
        known = cls.__dataclass_fields__
        unknown = set(doc) - set(known)
        if unknown:
            raise ValidationError(f"unknown fit config key(s): {', '.join(sorted(unknown))}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "FitConfig":
        """Read the top-level keys of a TOML file (sub-tables are ignored)."""
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        return cls.from_mapping({k: v for k, v in doc.items() if not isinstance(v, dict)})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["learning_rate_grid"] = list(self.learning_rate_grid)
        return d


def make_folds(stimulus_ids, n_folds: int, seed: int, labels=None) -> list[tuple[list, list]]:
    """Deterministic k-fold partition, stratified by ``labels`` when given.

    Ids are shuffled within each label, the label blocks are concatenated,
    and position ``p`` goes to fold ``p % n_folds``; fold sizes therefore
    differ by at most one and each category is spread evenly.
    """
    ids = list(stimulus_ids)
    if n_folds > len(ids):
        raise ValidationError(f"n_folds={n_folds} exceeds the number of stimuli ({len(ids)})")
    if n_folds < 2:
        raise ValidationError("n_folds must be >= 2")
    rng = substream(seed, "folds")
    if labels is None:
        groups = [np.arange(len(ids))]
    else:
        labels = np.asarray(labels)
        # strata in first-occurrence order, so swapping label names leaves folds unchanged
        groups = [np.flatnonzero(labels == lab) for lab in dict.fromkeys(labels.tolist())]
    order = np.concatenate([rng.permutation(g) for g in groups])
    fold_of = np.empty(len(ids), dtype=np.intp)
    fold_of[order] = np.arange(len(ids)) % n_folds
    out = []
    for f in range(n_folds):
        val = [ids[i] for i in range(len(ids)) if fold_of[i] == f]
        train = [ids[i] for i in range(len(ids)) if fold_of[i] != f]
        out.append((train, val))
    return out


def adam_step(params, grad, moments, t: int, alpha: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns ``(new_params, (m, v))``."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    m, v = moments
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return params - alpha * m_hat / (np.sqrt(v_hat) + eps), (m, v)


@dataclass
class FoldTrajectory:
    steps: np.ndarray
    val_nll: np.ndarray
    snapshots: np.ndarray
    diverged: bool = False


def checkpoint_steps(config: FitConfig) -> np.ndarray:
    return np.arange(0, config.max_steps + 1, config.eval_every)


def batch_gradient_scale(n_train: int, batch_len: int) -> float:
    """Factor making a batch gradient an unbiased estimate of the full-train gradient."""
    return n_train / batch_len


def fit_fold(spec: models.ModelSpec, features: FeatureMatrix, judgments: JudgmentSet,
             train_rows, val_rows, config: FitConfig, learning_rate: float,
             rng: np.random.Generator, init=None) -> FoldTrajectory:
    """Train one fold; statistics are frozen from ``train_rows`` only."""
    train_rows = np.asarray(train_rows, dtype=np.intp)
    val_rows = np.asarray(val_rows, dtype=np.intp)
    if np.intersect1d(train_rows, val_rows).size:
        raise ValidationError("train and validation rows overlap")
    state = models.build_state(spec, features, train_rows)
    theta = np.array(state.params.values if init is None else init, dtype=np.float64)
    n_a, n_b = judgments.aligned(features)
    Ytr, atr, btr = features.values[train_rows], n_a[train_rows], n_b[train_rows]
    Yva, ava, bva = features.values[val_rows], n_a[val_rows], n_b[val_rows]
    n_train = train_rows.size

    steps = checkpoint_steps(config)
    val_nll = np.full(steps.size, np.inf)
    snapshots = np.full((steps.size, spec.n_params), np.nan)

    def evaluate(idx, theta):
        val_nll[idx] = models.nll_from_logits(models.logits(state.with_values(theta), Yva), ava, bva)
        snapshots[idx] = theta
        return np.isfinite(val_nll[idx]) and np.all(np.isfinite(theta))

    moments = (np.zeros_like(theta), np.zeros_like(theta))
    with np.errstate(over="ignore", invalid="ignore"):
        if not evaluate(0, theta):
            return FoldTrajectory(steps, val_nll, snapshots, diverged=True)
        step, ckpt = 0, 1
        while step < config.max_steps:
            perm = rng.permutation(n_train)
            for start in range(0, n_train, config.batch_size):
                batch = perm[start:start + config.batch_size]
                _, g = models.nll_and_grad(state.with_values(theta), Ytr[batch], atr[batch], btr[batch])
                g *= batch_gradient_scale(n_train, batch.size)
                step += 1
                theta, moments = adam_step(
                    theta, g, moments, step, learning_rate,
                    config.adam_beta1, config.adam_beta2, config.adam_epsilon,
                )
                if step % config.eval_every == 0:
                    if not evaluate(ckpt, theta):
                        log.warning("%s lr=%g diverged at step %d", spec.variant, learning_rate, step)
                        val_nll[ckpt:] = np.inf
                        return FoldTrajectory(steps, val_nll, snapshots, diverged=True)
                    ckpt += 1
                if step >= config.max_steps:
                    break
    return FoldTrajectory(steps, val_nll, snapshots)


@dataclass
class GridPoint:
    learning_rate: float
    folds: list[FoldTrajectory]
    mean_val_nll: np.ndarray
    best_index: int
    best_value: float

    @property
    def diverged(self) -> bool:
        # one non-finite fold disqualifies the rate even if early checkpoints were finite
        return any(f.diverged for f in self.folds) or not np.isfinite(self.best_value)


def early_stop_index(mean_val_nll) -> int:
    """Checkpoint with the lowest mean held-out NLL (first one on ties)."""
    return int(np.argmin(np.asarray(mean_val_nll)))


@dataclass
class FitResult:
    spec: models.ModelSpec
    grid: list[GridPoint]
    chosen_learning_rate: float
    early_stop_index: int
    early_stop_step: int
    fold_params: np.ndarray
    averaged_params: models.ParamVector
    state: models.ModelState
    score: evaluation.ModelScore
    folds: list[tuple[list, list]] = field(repr=False, default_factory=list)

    @property
    def ll(self) -> float:
        return self.score.ll

    def trajectories_dict(self) -> dict:
        def clean(a):
            return [float(x) if np.isfinite(x) else None for x in np.asarray(a, dtype=np.float64)]

        return {
            "model": self.spec.variant,
            "checkpoint_steps": self.grid[0].folds[0].steps.tolist(),
            "chosen_learning_rate": self.chosen_learning_rate,
            "early_stop_index": self.early_stop_index,
            "early_stop_step": self.early_stop_step,
            "grid": [
                {
                    "learning_rate": gp.learning_rate,
                    "diverged": gp.diverged,
                    "best_index": gp.best_index,
                    "best_mean_val_nll": float(gp.best_value) if np.isfinite(gp.best_value) else None,
                    "mean_val_nll": clean(gp.mean_val_nll),
                    "fold_val_nll": [clean(f.val_nll) for f in gp.folds],
                }
                for gp in self.grid
            ],
        }

    def params_dict(self) -> dict:
        return {
            "params": self.averaged_params.to_dict(),
            "materialized": self.averaged_params.materialized(),
            "fold_params": [
                models.ParamVector(self.spec, p).to_dict()["blocks"] for p in self.fold_params
            ],
        }


def fit_model(spec: models.ModelSpec, features: FeatureMatrix, judgments: JudgmentSet,
              config: FitConfig | None = None, layer: str | None = None) -> FitResult:
    """Cross-validated fit over the learning-rate grid; see module docstring."""
    config = config or FitConfig()
    rows = judgments.judged_rows(features)
    ids = [features.stimulus_ids[i] for i in rows]
    folds = make_folds(ids, config.n_folds, config.seed, labels=features.labels[rows])
    fold_rows = [(features.indices(tr), features.indices(va)) for tr, va in folds]

    grid = []
    for lr in config.learning_rate_grid:
        trajs = [
            fit_fold(spec, features, judgments, tr, va, config, lr, substream(config.seed, "batches", f))
            for f, (tr, va) in enumerate(fold_rows)
        ]
        mean = np.mean([t.val_nll for t in trajs], axis=0)
        mean[~np.isfinite(mean)] = np.inf
        best = early_stop_index(mean)
        gp = GridPoint(lr, trajs, mean, best, float(mean[best]))
        if gp.diverged:
            log.warning("%s: learning rate %g diverged; discarded", spec.variant, lr)
        grid.append(gp)

    live = [gp for gp in grid if not gp.diverged]
    if not live:
        raise FitError(
            f"{spec.variant}: all learning rates diverged "
            f"({', '.join(f'{gp.learning_rate:g}' for gp in grid)}); "
            "initial validation NLL per fold: "
            + ", ".join(f"{t.val_nll[0]:.4g}" for t in grid[0].folds)
        )
    chosen = min(live, key=lambda gp: gp.best_value)
    fold_params = np.array([t.snapshots[chosen.best_index] for t in chosen.folds])
    averaged = models.ParamVector(spec, fold_params.mean(axis=0))

    state = models.build_state(spec, features, rows, params=averaged)
    score = score_state(state, features, judgments, config, layer=layer)
    return FitResult(
        spec=spec, grid=grid, chosen_learning_rate=chosen.learning_rate,
        early_stop_index=chosen.best_index,
        early_stop_step=int(chosen.folds[0].steps[chosen.best_index]),
        fold_params=fold_params, averaged_params=averaged, state=state, score=score, folds=folds,
    )


def score_state(state: models.ModelState, features: FeatureMatrix, judgments: JudgmentSet,
                config: FitConfig, layer: str | None = None) -> evaluation.ModelScore:
    """LL, AIC and split-half prediction correlation over every judged stimulus."""
    rows = features.indices(judgments.stimulus_ids)
    L = models.logits(state, features.values[rows])
    ll = -models.nll_from_logits(L, judgments.n_a, judgments.n_b)
    if np.any(judgments.n_total < 2):
        log.warning("some stimuli have a single trial; correlation not computed")
        corr = float("nan")
    else:
        corr = evaluation.prediction_correlation(expit(L), judgments, n_splits=config.n_splits, seed=config.seed)
    return evaluation.ModelScore(
        name=state.spec.variant, ll=ll, k=state.spec.n_params, correlation=corr,
        family=state.spec.family, layer=layer,
    )
