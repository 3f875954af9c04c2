import math

import numpy as np
import pytest

import dsbo


def test_ring_spectrum():
    e = dsbo.build_ring(4)
    assert e.size == 4
    assert abs(e.lambda2 - 1 / 3) < 1e-10
    assert np.allclose(e.weights.sum(axis=1), 1.0)
    assert e.validate()["passed"]
    eig = np.sort(np.abs(np.linalg.eigvalsh(e.weights)))[::-1]
    assert abs(dsbo.spectral_lambda(e.weights) - eig[1]) < 1e-10


def test_builders_reject_bad_input():
    with pytest.raises(ValueError):
        dsbo.build_ring(1)
    assert dsbo.build_torus(2, 4).size == 8
    assert abs(dsbo.build_random(8, 1.0, 3).lambda2) < 1e-10


def test_storm_update():
    prev, new, old = np.array([1.0, 2.0]), np.array([3.0, -1.0]), np.array([0.5, 0.5])
    assert np.array_equal(dsbo.storm_update(prev, new, old, 1.0), new)
    assert np.allclose(dsbo.storm_update(prev, new, old, 0.0), prev + new - old)


def test_quadratic_exact_matches_finite_differences():
    p = dsbo.generate_quadratic(workers=3, dim_x=4, dim_y=3, seed=5)
    x = np.linspace(-1, 1, 4)
    g = p.exact(x)["hypergradient"]
    h = 1e-5
    fd = np.array([(p.objective(x + h * e) - p.objective(x - h * e)) / (2 * h) for e in np.eye(4)])
    assert np.linalg.norm(fd - g) / np.linalg.norm(g) < 1e-5


def test_run_returns_records():
    p = dsbo.generate_quadratic(workers=8, noise_sigma=0.5, seed=1)
    c = dsbo.RunConfig()
    c.iterations = 50
    c.mode = dsbo.UpdateMode.simultaneous
    out = dsbo.run(c, p, dsbo.build_ring(8))
    assert len(out["records"]) == 50
    assert out["records"][0]["comm_floats_cum"] == 960
    assert out["counted_floats"] == out["accounted_floats"]
    assert out["x"].shape == (10, 8)
    assert out["records"][-1]["hypergrad_sq"] < out["records"][0]["hypergrad_sq"]


def test_run_is_deterministic_across_threads():
    p = dsbo.generate_quadratic(workers=4, noise_sigma=1.0, seed=2)
    e = dsbo.build_ring(4)
    c = dsbo.RunConfig()
    c.iterations = 30
    a = dsbo.run(c, p, e)
    c.threads = 3
    b = dsbo.run(c, p, e)
    assert a["records"] == b["records"]


def test_run_experiment_from_partial_spec():
    out = dsbo.run_experiment({"mode": "sgd-baseline", "run": {"iterations": 10}})
    assert len(out["records"]) == 10
    assert out["topology"] == "ring"
    with pytest.raises(ValueError):
        dsbo.run_experiment({"run": {"not_a_field": 1}})
    spec = dsbo.default_spec()
    assert spec["run"]["eta"] == 0.1


def test_logistic_experiment_reports_accuracy():
    spec = {"problem": {"kind": "logistic", "logistic": {"synthetic": {"samples": 2000}}},
            "run": {"iterations": 5, "eval_every": 5}}
    out = dsbo.run_experiment(spec)
    acc = out["records"][0]["test_accuracy"]
    assert acc is not None and 0.0 <= acc <= 1.0
    assert out["records"][1]["test_accuracy"] is None


def test_divergence_raises():
    p = dsbo.generate_quadratic(workers=2)
    c = dsbo.RunConfig()
    c.beta2 = 1e9
    c.iterations = 400
    with pytest.raises(ArithmeticError):
        dsbo.run(c, p, dsbo.build_ring(2))
