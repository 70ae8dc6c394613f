import math

import numpy as np
import pytest

from catfit import fitting, models, simulate
from catfit.errors import ValidationError


def test_features_layouts():
    fm = simulate.simulate_features(40, 3, separation=4.0, noise=0.5, seed=1)
    a, b = fm.values[fm.labels == "A"], fm.values[fm.labels == "B"]
    assert len(a) == len(b) == 20
    assert np.all(b.mean(axis=0) - a.mean(axis=0) > 3.0)
    xor = simulate.simulate_features(400, 2, layout="xor", separation=2.0, noise=0.3, seed=1)
    prod = xor.values[:, 0] * xor.values[:, 1]
    assert np.mean((prod < 0) == (xor.labels == "B")) > 0.95
    # category means coincide in expectation; random cluster choice gives SE ~0.2 per coordinate
    diff = xor.values[xor.labels == "A"].mean(axis=0) - xor.values[xor.labels == "B"].mean(axis=0)
    assert np.all(np.abs(diff) < 4 * np.sqrt(2 * (4 + 0.09) / 200))


def test_features_validation():
    with pytest.raises(ValidationError, match="layout"):
        simulate.simulate_features(10, 2, layout="ring")
    with pytest.raises(ValidationError):
        simulate.simulate_features(10, 1, layout="xor")
    with pytest.raises(ValidationError):
        simulate.simulate_features(10, 2, noise=0.0)


def test_gamma_zero_random_responding():
    sim = simulate.simulate("exemplar-attention", 300, 3, 50, gamma=0.0, seed=3)
    assert np.all(sim.p_b == 0.5)
    n = sim.judgments.total_trials
    prop = sim.judgments.n_b.sum() / n
    assert abs(prop - 0.5) < 3 * math.sqrt(0.25 / n)
    assert sim.truth_ll == pytest.approx(-n * math.log(2), rel=1e-12)


def test_separation_limit():
    sim = simulate.simulate("identity", 100, 3, 50, gamma=3.0, separation=8.0, noise=0.5, seed=2)
    m = sim.features.values.mean(axis=1)
    far = np.abs(m) > 3.0
    assert far.sum() > 50
    n = sim.judgments.n_total[far]
    unanimous = (sim.judgments.n_a[far] == n) | (sim.judgments.n_b[far] == n)
    assert unanimous.all()
    assert np.all((sim.judgments.n_b[far] == n) == (m[far] > 0))


def test_simulation_deterministic():
    a = simulate.simulate("category-vector-variance", 50, 3, 20, gamma=2.0, seed=9)
    b = simulate.simulate("category-vector-variance", 50, 3, 20, gamma=2.0, seed=9)
    assert a.features.values.tobytes() == b.features.values.tobytes()
    assert np.array_equal(a.judgments.n_b, b.judgments.n_b)
    c = simulate.simulate("category-vector-variance", 50, 3, 20, gamma=2.0, seed=10)
    assert not np.array_equal(a.judgments.n_b, c.judgments.n_b)


def test_explicit_params_and_validation():
    spec = models.ModelSpec("hyperplane-bias", 2)
    sim = simulate.simulate("hyperplane-bias", 20, 2, 10, values=[0.0, 1.0, -1.0, 0.5], seed=0)
    L = 1.0 * (2 * sim.features.values @ np.array([1.0, -1.0]) + 0.5)
    np.testing.assert_allclose(sim.p_b, 1 / (1 + np.exp(-L)), rtol=1e-12)
    assert spec.n_params == 4
    with pytest.raises(ValidationError):
        simulate.simulate("identity", 20, 2, 10, gamma=-1.0)
    with pytest.raises(ValidationError):
        simulate.simulate("identity", 20, 2, 0)


def test_truth_dict_contents():
    sim = simulate.simulate("exemplar-noattention", 20, 2, 5, gamma=1.5, beta=2.0, seed=0)
    doc = sim.truth_dict()
    assert doc["model"] == "exemplar-noattention" and len(doc["p_b"]) == 20
    assert doc["materialized"]["gamma"] == pytest.approx(1.5)
    assert doc["materialized"]["beta"] == pytest.approx(2.0)


def test_generator_ll_dominates_other_fits():
    sim = simulate.simulate("category-scalar-variance", 400, 3, 100, gamma=1.5, separation=1.5, seed=6)
    cfg = fitting.FitConfig(max_steps=600, n_splits=5)
    for variant in ("identity", "hyperplane-bias", "exemplar-noattention"):
        res = fitting.fit_model(models.ModelSpec(variant, 3), sim.features, sim.judgments, cfg)
        # optimisation slack: 0.2% of the truth NLL
        assert res.ll <= sim.truth_ll + 0.002 * abs(sim.truth_ll)
