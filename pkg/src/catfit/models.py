"""The eleven categorization models.

Every model produces a decision logit ``L(y) = gamma * log(S(y, t_B) / S(y, t_A))``
so that ``p(choose B | y) = sigmoid(L)``.  Parameters are held in an
unconstrained vector (log scales for gamma, beta and fitted variances,
softmax logits for attention weights) whose block layout is fixed per
variant; see :data:`BLOCK_LAYOUT`.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy.special import expit

from . import kernels
from .data import FeatureMatrix, JudgmentSet
from .errors import ModelError

# name -> family, in the order used by reports
VARIANTS = {
    "identity": "prototype-linear",
    "common-variance": "prototype-linear",
    "common-vector-variance": "prototype-linear",
    "hyperplane-nobias": "hyperplane",
    "hyperplane-bias": "hyperplane",
    "category-pooled-variance": "prototype-quadratic",
    "category-variance": "prototype-quadratic",
    "category-scalar-variance": "prototype-quadratic",
    "category-vector-variance": "prototype-quadratic",
    "exemplar-noattention": "exemplar",
    "exemplar-attention": "exemplar",
}
MODEL_NAMES = tuple(VARIANTS)

# ordered (block name, size) with size expressed as (constant, multiple of N_f)
BLOCK_LAYOUT = {
    "identity": [("gamma_log", (1, 0))],
    "common-variance": [("gamma_log", (1, 0))],
    "common-vector-variance": [("gamma_log", (1, 0)), ("log_var", (0, 1))],
    "hyperplane-nobias": [("gamma_log", (1, 0)), ("v", (0, 1))],
    "hyperplane-bias": [("gamma_log", (1, 0)), ("v", (0, 1)), ("d", (1, 0))],
    "category-pooled-variance": [("gamma_log", (1, 0))],
    "category-variance": [("gamma_log", (1, 0))],
    "category-scalar-variance": [("gamma_log", (1, 0)), ("log_var_A", (1, 0)), ("log_var_B", (1, 0))],
    "category-vector-variance": [("gamma_log", (1, 0)), ("log_var_A", (0, 1)), ("log_var_B", (0, 1))],
    "exemplar-noattention": [("gamma_log", (1, 0)), ("beta_log", (1, 0))],
    "exemplar-attention": [("gamma_log", (1, 0)), ("beta_log", (1, 0)), ("attention_logits", (0, 1))],
}

COVARIANCE_KIND = {
    "identity": "identity",
    "common-variance": "shared-diagonal-empirical",
    "common-vector-variance": "shared-vector-fitted",
    "category-pooled-variance": "per-category-pooled-scalar-empirical",
    "category-variance": "per-category-diagonal-empirical",
    "category-scalar-variance": "per-category-scalar-fitted",
    "category-vector-variance": "per-category-vector-fitted",
}


@dataclass(frozen=True)
class ModelSpec:
    variant: str
    n_features: int

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ModelError(
                f"unknown model {self.variant!r}; valid names: {', '.join(MODEL_NAMES)}"
            )
        if self.n_features < 1:
            raise ModelError("n_features must be >= 1")

    @property
    def family(self) -> str:
        return VARIANTS[self.variant]

    def blocks(self) -> list[tuple[str, int]]:
        return [(name, c + m * self.n_features) for name, (c, m) in BLOCK_LAYOUT[self.variant]]

    @cached_property
    def _slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, size in self.blocks():
            out[name] = slice(start, start + size)
            start += size
        return out

    def block_slices(self) -> dict[str, slice]:
        return self._slices

    @cached_property
    def n_params(self) -> int:
        return sum(size for _, size in self.blocks())


def n_params(variant: str, n_features: int) -> int:
    return ModelSpec(variant, n_features).n_params


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Unconstrained parameter vector with a variant tag."""

    spec: ModelSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if values.size != self.spec.n_params:
            raise ModelError(
                f"{self.spec.variant} expects {self.spec.n_params} parameters, got {values.size}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def block(self, name: str) -> np.ndarray:
        return self.values[self.spec.block_slices()[name]]

    @property
    def gamma(self) -> float:
        return float(np.exp(self.values[0]))

    @property
    def beta(self) -> float:
        return float(np.exp(self.block("beta_log")[0]))

    @property
    def attention(self) -> np.ndarray:
        if self.spec.variant == "exemplar-attention":
            return kernels.softmax(self.block("attention_logits"))
        return np.full(self.spec.n_features, 1.0 / self.spec.n_features)

    def to_dict(self) -> dict:
        return {
            "variant": self.spec.variant,
            "n_features": self.spec.n_features,
            "blocks": [
                {"name": name, "values": self.block(name).tolist()} for name, _ in self.spec.blocks()
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ParamVector":
        spec = ModelSpec(doc["variant"], int(doc["n_features"]))
        names = [b["name"] for b in doc["blocks"]]
        expected = [name for name, _ in spec.blocks()]
        if names != expected:
            raise ModelError(f"block order {names} does not match {expected}")
        return cls(spec, np.concatenate([np.asarray(b["values"], dtype=np.float64) for b in doc["blocks"]]))

    def materialized(self) -> dict:
        """Constrained parameter values keyed by symbol, for reports."""
        out = {"gamma": self.gamma}
        v = self.spec.variant
        if v.startswith("exemplar"):
            out["beta"] = self.beta
            out["attention"] = self.attention.tolist()
        for name in ("log_var", "log_var_A", "log_var_B"):
            if name in self.spec.block_slices():
                out[name[4:]] = np.exp(self.block(name)).tolist()
        if v.startswith("hyperplane"):
            out["v"] = self.block("v").tolist()
            out["d"] = float(self.block("d")[0]) if "d" in self.spec.block_slices() else 0.0
        return out


@dataclass(frozen=True, eq=False)
class FrozenStats:
    """Per-category statistics computed once from the training rows."""

    mu_a: np.ndarray
    mu_b: np.ndarray
    var_all: np.ndarray
    var_a: np.ndarray
    var_b: np.ndarray
    pooled_a: float
    pooled_b: float
    exemplars_a: np.ndarray
    exemplars_b: np.ndarray

    @classmethod
    def from_features(cls, features: FeatureMatrix, rows=None) -> "FrozenStats":
        if rows is None:
            rows = np.arange(features.n_stimuli)
        rows = np.asarray(rows, dtype=np.intp)
        values = features.values
        floor = kernels.variance_floor(values[rows])
        rows_a = features.category_rows("A", rows)
        rows_b = features.category_rows("B", rows)
        if rows_a.size == 0 or rows_b.size == 0:
            raise ModelError("training rows must contain both categories")
        sa = kernels.empirical_stats(values[rows_a], floor)
        sb = kernels.empirical_stats(values[rows_b], floor)
        var_all = values[rows].var(axis=0, ddof=1) + floor
        return cls(
            mu_a=sa.mu, mu_b=sb.mu, var_all=var_all,
            var_a=sa.var_diag, var_b=sb.var_diag, pooled_a=sa.pooled, pooled_b=sb.pooled,
            exemplars_a=np.ascontiguousarray(values[rows_a]),
            exemplars_b=np.ascontiguousarray(values[rows_b]),
        )

    def swapped(self) -> "FrozenStats":
        return FrozenStats(
            self.mu_b, self.mu_a, self.var_all, self.var_b, self.var_a,
            self.pooled_b, self.pooled_a, self.exemplars_b, self.exemplars_a,
        )


def initial_params(spec: ModelSpec, stats: FrozenStats) -> ParamVector:
    """Start point: gamma = beta = 1, uniform attention, flat hyperplane, empirical log-variance."""
    values = np.zeros(spec.n_params)
    sl = spec.block_slices()
    log_var = np.log(stats.var_all)
    for name in ("log_var", "log_var_A", "log_var_B"):
        if name in sl:
            size = sl[name].stop - sl[name].start
            values[sl[name]] = log_var if size == spec.n_features else np.log(stats.var_all.mean())
    return ParamVector(spec, values)


@dataclass(frozen=True, eq=False)
class ModelState:
    spec: ModelSpec
    params: ParamVector
    stats: FrozenStats

    def with_values(self, values) -> "ModelState":
        return replace(self, params=ParamVector(self.spec, values))

    def covariance(self) -> kernels.CovarianceSpec:
        """Materialised diagonal covariance (prototype families only)."""
        v = self.spec.variant
        if v not in COVARIANCE_KIND:
            raise ModelError(f"{v} has no covariance")
        p = self.params
        if v == "identity":
            vals = {"A": 1.0, "B": 1.0}
        elif v == "common-variance":
            vals = {"A": self.stats.var_all, "B": self.stats.var_all}
        elif v == "common-vector-variance":
            s = np.exp(p.block("log_var"))
            vals = {"A": s, "B": s}
        elif v == "category-pooled-variance":
            vals = {"A": self.stats.pooled_a, "B": self.stats.pooled_b}
        elif v == "category-variance":
            vals = {"A": self.stats.var_a, "B": self.stats.var_b}
        else:
            vals = {"A": np.exp(p.block("log_var_A")), "B": np.exp(p.block("log_var_B"))}
        return kernels.CovarianceSpec(COVARIANCE_KIND[v], vals)


def build_state(spec: ModelSpec, features: FeatureMatrix, rows=None, params=None) -> ModelState:
    """Freeze statistics from ``rows`` of ``features`` and attach parameters."""
    if features.n_features != spec.n_features:
        raise ModelError(f"spec expects {spec.n_features} features, matrix has {features.n_features}")
    stats = FrozenStats.from_features(features, rows)
    if params is None:
        params = initial_params(spec, stats)
    elif not isinstance(params, ParamVector):
        params = ParamVector(spec, params)
    return ModelState(spec, params, stats)


# --------------------------------------------------------------------------
# Logits and their Jacobians w.r.t. the unconstrained parameters


def _prototype(state: ModelState, Y: np.ndarray, jac: bool):
    cov = state.covariance()
    nf = state.spec.n_features
    sig_a, sig_b = cov.diag("A", nf), cov.diag("B", nf)
    da = (Y - state.stats.mu_a) ** 2
    db = (Y - state.stats.mu_b) ** 2
    qa, qb = da / sig_a, db / sig_b
    md_a, md_b = qa.sum(axis=1), qb.sum(axis=1)
    gamma = state.params.gamma
    L = gamma * (md_a - md_b)
    if not jac:
        return L, None
    J = np.zeros((Y.shape[0], state.spec.n_params))
    J[:, 0] = L
    sl = state.spec.block_slices()
    v = state.spec.variant
    if v == "common-vector-variance":
        J[:, sl["log_var"]] = gamma * (qb - qa)
    elif v == "category-scalar-variance":
        J[:, sl["log_var_A"]] = (-gamma * md_a)[:, None]
        J[:, sl["log_var_B"]] = (gamma * md_b)[:, None]
    elif v == "category-vector-variance":
        J[:, sl["log_var_A"]] = -gamma * qa
        J[:, sl["log_var_B"]] = gamma * qb
    return L, J


def _hyperplane(state: ModelState, Y: np.ndarray, jac: bool):
    p = state.params
    v = p.block("v")
    d = p.block("d")[0] if state.spec.variant == "hyperplane-bias" else 0.0
    gamma = p.gamma
    L = gamma * (2.0 * (Y @ v) + d)
    if not jac:
        return L, None
    sl = state.spec.block_slices()
    J = np.zeros((Y.shape[0], state.spec.n_params))
    J[:, 0] = L
    J[:, sl["v"]] = 2.0 * gamma * Y
    if "d" in sl:
        J[:, sl["d"]] = gamma
    return L, J


def _exemplar(state: ModelState, Y: np.ndarray, jac: bool):
    p = state.params
    w = p.attention
    beta = p.beta
    gamma = p.gamma
    lse_a, sq_a = kernels.exemplar_side(Y, state.stats.exemplars_a, w, beta, need_sq=jac)
    lse_b, sq_b = kernels.exemplar_side(Y, state.stats.exemplars_b, w, beta, need_sq=jac)
    L = gamma * (lse_b - lse_a)
    if not jac:
        return L, None
    sl = state.spec.block_slices()
    J = np.zeros((Y.shape[0], state.spec.n_params))
    J[:, 0] = L
    dsq = sq_b - sq_a
    J[:, sl["beta_log"]] = (-gamma * beta * (dsq @ w))[:, None]
    if "attention_logits" in sl:
        G = -gamma * beta * dsq
        J[:, sl["attention_logits"]] = w * (G - (G @ w)[:, None])
    return L, J


_DISPATCH = {
    "prototype-linear": _prototype,
    "prototype-quadratic": _prototype,
    "hyperplane": _hyperplane,
    "exemplar": _exemplar,
}


def logits(state: ModelState, Y) -> np.ndarray:
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if Y.shape[1] != state.spec.n_features:
        raise ModelError(f"expected {state.spec.n_features} features, got {Y.shape[1]}")
    return _DISPATCH[state.spec.family](state, Y, False)[0]


def logits_and_jacobian(state: ModelState, Y) -> tuple[np.ndarray, np.ndarray]:
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if Y.shape[1] != state.spec.n_features:
        raise ModelError(f"expected {state.spec.n_features} features, got {Y.shape[1]}")
    return _DISPATCH[state.spec.family](state, Y, True)


def decision_logit(state: ModelState, y) -> float:
    """Logit of choosing B for one stimulus vector; positive favours B."""
    return float(logits(state, np.asarray(y, dtype=np.float64)[None, :])[0])


def predict_proba_b(state: ModelState, Y) -> np.ndarray:
    return expit(logits(state, Y))


def choice_probability(s_a: float, s_b: float, gamma: float) -> float:
    """Luce-Shepard probability of choosing A: ``S_A**g / (S_A**g + S_B**g)``."""
    if s_a <= 0 or s_b <= 0:
        raise ModelError("similarities must be strictly positive")
    return float(expit(gamma * (np.log(s_a) - np.log(s_b))))


def hyperplane_from_prototypes(mu_a, mu_b) -> tuple[np.ndarray, float]:
    """``(v, d)`` with ``2 y.v + d == |y - mu_a|^2 - |y - mu_b|^2`` for every ``y``."""
    mu_a = np.asarray(mu_a, dtype=np.float64)
    mu_b = np.asarray(mu_b, dtype=np.float64)
    if mu_a.shape != mu_b.shape:
        raise ModelError("prototype length mismatch")
    return mu_b - mu_a, float(mu_a @ mu_a - mu_b @ mu_b)


# --------------------------------------------------------------------------
# Likelihood


def nll_from_logits(L, n_a, n_b) -> float:
    """``-sum[n_B log sigmoid(L) + n_A log sigmoid(-L)]`` in a stable form."""
    L = np.asarray(L, dtype=np.float64)
    return float(np.sum(n_b * np.logaddexp(0.0, -L) + n_a * np.logaddexp(0.0, L)))


def nll_and_grad(state: ModelState, Y, n_a, n_b) -> tuple[float, np.ndarray]:
    L, J = logits_and_jacobian(state, Y)
    g = (n_a + n_b) * expit(L) - n_b
    return nll_from_logits(L, n_a, n_b), J.T @ g


def _subset(features: FeatureMatrix, judgments: JudgmentSet, subset):
    n_a, n_b = judgments.aligned(features)
    if subset is None:
        rows = judgments.judged_rows(features)
    else:
        rows = np.asarray(subset, dtype=np.intp)
        if rows.size == 0:
            raise ModelError("empty stimulus subset")
        if np.any(n_a[rows] + n_b[rows] < 1):
            raise ModelError("subset contains stimuli without judgments")
    return features.values[rows], n_a[rows], n_b[rows]


def negative_log_likelihood(state: ModelState, features: FeatureMatrix, judgments: JudgmentSet, subset=None) -> float:
    """Counts-weighted NLL over ``subset`` rows (default: every judged stimulus)."""
    Y, n_a, n_b = _subset(features, judgments, subset)
    return nll_from_logits(logits(state, Y), n_a, n_b)


def gradient(state: ModelState, features: FeatureMatrix, judgments: JudgmentSet, subset=None) -> np.ndarray:
    """Analytic gradient of :func:`negative_log_likelihood` in the unconstrained space."""
    Y, n_a, n_b = _subset(features, judgments, subset)
    return nll_and_grad(state, Y, n_a, n_b)[1]
