import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from onlinebayes.gp import (
    BENCH_HEADER,
    GaussianBelief,
    GpPrior,
    InconsistentObservationError,
    StreamingGp,
    batch_predictive,
    benchmark,
    build_joint,
    condition_one,
    constant_kernel,
    constant_noise,
    crossover,
    random_instance,
    rbf_kernel,
    recursive_predictive,
)


def rel_mean_dev(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(a)))


def instance(seed, n, m, **kw):
    return random_instance(np.random.default_rng(seed), n, m, **kw)


def test_joint_with_zero_kernel_is_noise_only():
    prior = GpPrior(constant_kernel(0.0), noise_var_fn=constant_noise(1.0))
    j = build_joint(prior, [0.0, 1.0], [2.0, 3.0, 4.0])
    assert np.array_equal(j.cov, np.diag([0, 0, 1, 1, 1]))
    assert j.tags == ("test", "test", "train", "train", "train")


def test_rbf_gram_matches_loop():
    pts = [0.0, 0.3, 1.7]
    j = build_joint(GpPrior(rbf_kernel(0.8, 1.5)), pts, [])
    want = [[oracles.rbf(a, b, 0.8, 1.5) for b in pts] for a in pts]
    assert np.allclose(j.cov, want, rtol=0, atol=1e-15)


def test_one_train_one_test_by_hand():
    prior = GpPrior(constant_kernel(1.0), noise_var_fn=constant_noise(1.0))
    want = oracles.gauss_condition_1d(1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 2.0)
    assert want == (1.0, 0.5)
    r = condition_one(build_joint(prior, [0.0], [0.0]), 1, 2.0)
    b = batch_predictive(prior, [0.0], [(0.0, 2.0)])
    for belief in (r, b):
        assert belief.mean[0] == pytest.approx(1.0, abs=1e-9)
        assert belief.cov[0, 0] == pytest.approx(0.5, abs=1e-9)


def test_independent_observation_changes_nothing():
    belief = GaussianBelief([1.0, 2.0, 0.0], [[2.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 3.0]], ("test", "test", "train"))
    after = condition_one(belief, 2, 10.0)
    assert np.array_equal(after.mean, [1.0, 2.0])
    assert np.array_equal(after.cov, [[2.0, 0.5], [0.5, 1.0]])


def test_no_data_returns_prior_block():
    inst = instance(1, 0, 4)
    b = batch_predictive(inst.prior, inst.test, [])
    r = recursive_predictive(inst.prior, inst.test, [])
    assert np.array_equal(b.cov, inst.prior.cov(inst.test, inst.test))
    assert np.array_equal(r.cov, b.cov) and np.array_equal(r.mean, b.mean)


@pytest.mark.parametrize("n,m,seed", [(50, 5, 3), (200, 10, 4)])
def test_batch_and_recursive_agree(n, m, seed):
    inst = instance(seed, n, m)
    b = batch_predictive(inst.prior, inst.test, inst.sample)
    r = recursive_predictive(inst.prior, inst.test, inst.sample)
    assert rel_mean_dev(b.mean, r.mean) <= 1e-8
    assert np.max(np.abs(b.cov - r.cov)) <= 1e-6


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 6))
def test_streaming_matches_rebuild(seed, n, m):
    inst = instance(seed, n, m)
    gp = StreamingGp(inst.prior, inst.test)
    for k, (x, y) in enumerate(inst.sample):
        gp.append(x, y)
        if k in (0, n // 2, n - 1):
            ref = recursive_predictive(inst.prior, inst.test, inst.sample[: k + 1])
            assert rel_mean_dev(ref.mean, gp.belief.mean) <= 1e-8
            assert np.max(np.abs(ref.cov - gp.belief.cov)) <= 1e-6
    assert gp.n_observed == n


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.randoms(use_true_random=False))
def test_order_of_observations_does_not_matter(seed, rnd):
    inst = instance(seed, 30, 4)
    shuffled = list(inst.sample)
    rnd.shuffle(shuffled)
    a = recursive_predictive(inst.prior, inst.test, inst.sample)
    b = recursive_predictive(inst.prior, inst.test, shuffled)
    assert rel_mean_dev(a.mean, b.mean) <= 1e-8
    assert np.max(np.abs(a.cov - b.cov)) <= 1e-8


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_posterior_is_psd_and_variance_shrinks(seed, n):
    inst = instance(seed, n, 5)
    post = recursive_predictive(inst.prior, inst.test, inst.sample)
    post.validate()
    prior_var = np.diag(inst.prior.cov(inst.test, inst.test))
    assert np.all(np.diag(post.cov) <= prior_var + 1e-12)


def test_single_step_is_a_kalman_update():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((4, 4))
    cov = a @ a.T + np.eye(4)
    mean = rng.standard_normal(4)
    belief = GaussianBelief(mean, cov, ("test", "test", "test", "train"))
    h = np.array([[0.0, 0.0, 0.0, 1.0]])
    # observing a coordinate of the state exactly: H = e_3, R = 0
    s = h @ cov @ h.T
    k = cov @ h.T @ np.linalg.inv(s)
    want_mean = mean + (k @ (np.array([0.7]) - h @ mean))
    want_cov = (np.eye(4) - k @ h) @ cov
    got = condition_one(belief, 3, 0.7)
    assert np.allclose(got.mean, want_mean[:3], atol=1e-12)
    assert np.allclose(got.cov, want_cov[:3, :3], atol=1e-12)


def test_deterministic_coordinate_observed_elsewhere_is_rejected():
    belief = GaussianBelief([0.0, 1.0], [[1.0, 0.0], [0.0, 0.0]], ("test", "train"))
    with pytest.raises(InconsistentObservationError):
        condition_one(belief, 1, 2.0)
    assert condition_one(belief, 1, 1.0).mean.tolist() == [0.0]


def test_condition_one_rejects_test_coordinate():
    belief = GaussianBelief([0.0], [[1.0]], ("test",))
    with pytest.raises(ValueError):
        condition_one(belief, 0, 1.0)


def test_benchmark_contract():
    rows = benchmark(lambda n: instance(n, n, 3), [5, 10, 20], 2)
    assert len(BENCH_HEADER) == 4 and all(len(r) == 4 for r in rows)
    ns = sorted({r[0] for r in rows})
    assert ns == [5, 10, 20]
    for n in ns:
        assert {r[1] for r in rows if r[0] == n} == {"batch-refit", "recursive"}
    assert all(r[2] > 0 and r[3] == 2 for r in rows)
    with pytest.raises(ValueError):
        benchmark(lambda n: instance(n, n, 3), [10, 5], 1)


def test_crossover_helper():
    assert crossover(np.ones(4), np.array([3.0, 0.1, 0.1, 0.1])) == 4
    assert crossover(np.ones(3), np.full(3, 0.5)) == 1
    assert crossover(np.ones(3), np.full(3, 2.0)) is None
