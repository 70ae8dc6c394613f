"""Synthetic stimuli and judgments for recovery studies.

Features are category-conditional Gaussians; the generating model's
statistics are frozen from the full synthetic set, its P(B) is evaluated
per stimulus and judgments are drawn binomially.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import models
from .data import FeatureMatrix, JudgmentSet
from .errors import ValidationError
from .rng import substream

LAYOUTS = ("gaussian", "xor")


def simulate_features(n_stimuli: int, n_features: int, layout: str = "gaussian",
                      separation: float = 1.0, noise: float = 1.0, seed: int = 0) -> FeatureMatrix:
    """Two categories of diagonal Gaussian clusters.

    ``gaussian``: one cluster per category, means at -+separation/2 on every
    dimension.  ``xor``: two clusters per category on the first two
    dimensions (A at (+s, +s) and (-s, -s), B at (+s, -s) and (-s, +s)), so no
    linear boundary separates the categories; remaining dimensions are noise.
    """
    if layout not in LAYOUTS:
        raise ValidationError(f"unknown layout {layout!r}; choose from {', '.join(LAYOUTS)}")
    if n_stimuli < 4 or n_features < 1 or noise <= 0:
        raise ValidationError("need n_stimuli >= 4, n_features >= 1 and noise > 0")
    if layout == "xor" and n_features < 2:
        raise ValidationError("xor layout needs at least 2 features")
    rng = substream(seed, "simulate-features")
    is_b = np.arange(n_stimuli) % 2 == 1
    X = rng.normal(scale=noise, size=(n_stimuli, n_features))
    half = separation / 2.0
    if layout == "gaussian":
        X += np.where(is_b, half, -half)[:, None]
    else:
        cluster = rng.integers(0, 2, size=n_stimuli)
        sx = np.where(cluster == 0, 1.0, -1.0)
        sy = np.where(is_b, -sx, sx)
        X[:, 0] += separation * sx
        X[:, 1] += separation * sy
    labels = np.where(is_b, "B", "A")
    width = len(str(n_stimuli - 1))
    ids = [f"s{i:0{width}d}" for i in range(n_stimuli)]
    return FeatureMatrix(ids, X, labels)


@dataclass
class Simulation:
    features: FeatureMatrix
    judgments: JudgmentSet
    state: models.ModelState
    p_b: np.ndarray

    @property
    def truth_ll(self) -> float:
        return -models.negative_log_likelihood(self.state, self.features, self.judgments)

    def truth_dict(self) -> dict:
        return {
            "model": self.state.spec.variant,
            "params": self.state.params.to_dict(),
            "materialized": self.state.params.materialized(),
            "truth_ll": self.truth_ll,
            "p_b": dict(zip(self.features.stimulus_ids, self.p_b.tolist())),
        }


def generator_params(spec: models.ModelSpec, stats: models.FrozenStats, gamma: float = 1.0,
                     beta: float = 1.0, values=None) -> models.ParamVector:
    """Full parameter vector: explicit ``values`` or the default start point with gamma/beta set."""
    if values is not None:
        return models.ParamVector(spec, values)
    if gamma < 0 or beta <= 0:
        raise ValidationError("gamma must be >= 0 and beta > 0")
    theta = np.array(models.initial_params(spec, stats).values)
    theta[0] = np.log(gamma) if gamma > 0 else -np.inf
    sl = spec.block_slices()
    if "beta_log" in sl:
        theta[sl["beta_log"]] = np.log(beta)
    # gamma = 0 makes every logit exactly 0 regardless of the other blocks
    with np.errstate(divide="ignore"):
        return models.ParamVector(spec, theta)


def simulate_judgments(state: models.ModelState, features: FeatureMatrix,
                       trials_per_stimulus: int, seed: int = 0) -> tuple[JudgmentSet, np.ndarray]:
    if trials_per_stimulus < 1:
        raise ValidationError("trials_per_stimulus must be >= 1")
    with np.errstate(invalid="ignore"):
        L = models.logits(state, features.values)
    L = np.where(np.isfinite(L), L, 0.0) if state.params.values[0] == -np.inf else L
    p_b = expit(L)
    rng = substream(seed, "simulate-judgments")
    n_b = rng.binomial(trials_per_stimulus, p_b)
    return JudgmentSet(features.stimulus_ids, trials_per_stimulus - n_b, n_b), p_b


def simulate(variant: str, n_stimuli: int, n_features: int, trials_per_stimulus: int,
             gamma: float = 1.0, beta: float = 1.0, layout: str = "gaussian",
             separation: float = 1.0, noise: float = 1.0, seed: int = 0, values=None) -> Simulation:
    features = simulate_features(n_stimuli, n_features, layout, separation, noise, seed)
    spec = models.ModelSpec(variant, n_features)
    stats = models.FrozenStats.from_features(features)
    state = models.ModelState(spec, generator_params(spec, stats, gamma, beta, values), stats)
    judgments, p_b = simulate_judgments(state, features, trials_per_stimulus, seed)
    return Simulation(features, judgments, state, p_b)
