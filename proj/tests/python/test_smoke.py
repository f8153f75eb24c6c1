"""Smoke tests for the python bindings: thin checks that the exposed
operations agree with numpy and stay deterministic."""

import numpy as np
import pytest

import cpdyn


def test_outer_product_matches_einsum():
    rng = np.random.default_rng(0)
    u, v, w = rng.normal(size=3), rng.normal(size=4), rng.normal(size=2)
    got = cpdyn.outer_product([list(u), list(v), list(w)])
    expect = np.einsum("i,j,k->ijk", u, v, w)
    np.testing.assert_allclose(got, expect, rtol=1e-14)


def test_matricize_and_kron_identity():
    rng = np.random.default_rng(1)
    vectors = [list(rng.normal(size=3)), list(rng.normal(size=2)), list(rng.normal(size=4))]
    t = cpdyn.outer_product(vectors)
    for mode in range(3):
        m = cpdyn.matricize(t, mode)
        k = np.asarray(cpdyn.kron_except(vectors, mode))
        scale = np.prod([np.dot(v, v) for n, v in enumerate(vectors) if n != mode])
        np.testing.assert_allclose(m @ k, scale * np.asarray(vectors[mode]), rtol=1e-10)


def test_end_tensor_and_predict():
    f = cpdyn.initialize("gaussian", 0.5, 7, [3, 3, 3], 2)
    t = cpdyn.end_tensor(f)
    assert t.shape == (3, 3, 3)
    for idx in [(0, 0, 0), (2, 1, 0), (1, 2, 2)]:
        assert cpdyn.predict(f, list(idx)) == pytest.approx(t[idx], rel=1e-12)


def test_balanced_initialization():
    f = cpdyn.initialize("balanced_gaussian", 0.1, 3, [4, 4, 4], 5)
    assert cpdyn.unbalancedness_magnitude(f) <= 1e-12
    assert cpdyn.sufficient_R([10, 10, 10, 10]) == 1000


def test_gradient_matches_numeric_difference():
    gt = cpdyn.generate_ground_truth([3, 3, 3], 2, seed=5)
    obs = cpdyn.sample_observations(gt, 10, 5)
    f = cpdyn.initialize("gaussian", 0.4, 11, [3, 3, 3], 2)
    grad = cpdyn.objective_gradient(f, obs, "squared", 0.5)

    h = 1e-6
    weights = [[list(v) for v in comp] for comp in f.weights]
    for (r, n, i) in [(0, 0, 0), (1, 2, 1), (0, 1, 2)]:
        up = [[list(v) for v in comp] for comp in weights]
        dn = [[list(v) for v in comp] for comp in weights]
        up[r][n][i] += h
        dn[r][n][i] -= h
        lu = cpdyn.completion_loss(cpdyn.CPFactorization([3, 3, 3], up), obs, "squared", 0.5)
        ld = cpdyn.completion_loss(cpdyn.CPFactorization([3, 3, 3], dn), obs, "squared", 0.5)
        assert grad[r][n][i] == pytest.approx((lu - ld) / (2 * h), rel=1e-5, abs=1e-9)


def test_train_reduces_loss_and_is_deterministic():
    gt = cpdyn.generate_ground_truth([4, 4, 4], 1, seed=9)
    obs = cpdyn.sample_observations(gt, 24, 9)
    f = cpdyn.initialize("balanced_gaussian", 0.05, 13, [4, 4, 4], 3)

    out1 = cpdyn.train(f, obs, "squared", 0.5, max_iters=500, record_every=100,
                       ground_truth=gt)
    out2 = cpdyn.train(f, obs, "squared", 0.5, max_iters=500, record_every=100,
                       ground_truth=gt)
    assert out1["final_loss"] < out1["records"][0].loss
    assert out1["final_loss"] == out2["final_loss"]
    assert [r.loss for r in out1["records"]] == [r.loss for r in out2["records"]]
    assert np.isfinite(out1["records"][-1].recon_error)


def test_dynamics_checks_on_a_short_run():
    gt = cpdyn.generate_ground_truth([5, 5, 5], 2, seed=21)
    obs = cpdyn.sample_observations(gt, 40, 21)
    f = cpdyn.initialize("balanced_gaussian", 0.05, 22, [5, 5, 5], 3)
    out = cpdyn.train(f, obs, "squared", 0.5, lr_scheme="fixed", eta=1e-5,
                      stop_loss=0.0, max_iters=200, record_every=1,
                      gammas=True, vector_sq_norms=True)
    records = out["records"]
    conservation = cpdyn.check_balancedness_conservation(records, 1e-6)
    assert conservation.pass_
    ode = cpdyn.check_corollary1_ode(records, 1e-2)
    assert ode.pass_
    bounds = cpdyn.check_theorem1_bounds(records, 1e-2)
    assert bounds.pass_


def test_sensing_roundtrip():
    gt = cpdyn.generate_ground_truth([3, 3, 3], 1, seed=31)
    meas = cpdyn.sample_measurements(gt, 12, 31)
    f = cpdyn.initialize("gaussian", 0.3, 33, [3, 3, 3], 2)
    loss = cpdyn.sensing_loss(f, meas, "huber", 0.05)
    assert loss >= 0.0
    delta, lo, hi = cpdyn.estimate_rip_delta(meas, 1, 20, 4)
    assert delta >= 0.0 and lo <= hi
