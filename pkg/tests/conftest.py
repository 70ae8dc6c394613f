import numpy as np
import pytest
from hypothesis import settings

from catfit import models
from catfit.data import FeatureMatrix, JudgmentSet

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_problem(rng, n_stimuli=8, n_features=3, max_trials=12):
    """Small random features (both categories present) with random counts."""
    labels = np.array(["A", "B"] * (n_stimuli // 2) + ["A"] * (n_stimuli % 2))
    rng.shuffle(labels)
    X = rng.normal(size=(n_stimuli, n_features))
    ids = [f"s{i}" for i in range(n_stimuli)]
    n = rng.integers(1, max_trials + 1, size=n_stimuli)
    n_b = rng.binomial(n, 0.5)
    return FeatureMatrix(ids, X, labels), JudgmentSet(ids, n - n_b, n_b)


def random_state(variant, fm, rng, scale=0.5):
    spec = models.ModelSpec(variant, fm.n_features)
    state = models.build_state(spec, fm)
    return state.with_values(state.params.values + scale * rng.normal(size=spec.n_params))


def central_difference(state, Y, n_a, n_b, h=1e-5):
    theta = np.array(state.params.values)
    out = np.empty_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        out[i] = (models.nll_from_logits(models.logits(state.with_values(tp), Y), n_a, n_b)
                  - models.nll_from_logits(models.logits(state.with_values(tm), Y), n_a, n_b)) / (2 * h)
    return out


def gradient_error(analytic, numeric):
    scale = max(np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in config.acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy(rng):
    return random_problem(rng)
