from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from onlinebayes.inversion import (
    batch_invert,
    brute_force_invert,
    condition_joint,
    sequential_invert,
    verify_inversion,
)
from onlinebayes.measure import Dist, FiniteKernel, FiniteSpace, JointDist, ScalarMode, as_weights, max_abs_diff, product_kernel
from onlinebayes.model import SupervisedModel, UnknownInputError, sampling_operator
from strategies import finite_model, index_form, pairs_for

TWO = FiniteSpace(("t1", "t2"))
XS = FiniteSpace(("x1", "x2"))
ROWS = [[F(1, 5), F(4, 5)], [F(3, 5), F(2, 5)]]


def exact(v):
    return as_weights(v, ScalarMode.EXACT)


def test_two_point_bayes_rule():
    res = brute_force_invert(FiniteKernel(TWO, XS, exact(ROWS)), Dist.uniform(TWO))
    assert res.posterior("x1").weights.tolist() == [F(1, 4), F(3, 4)]
    assert res.evidence.weights.tolist() == [F(2, 5), F(3, 5)]


def test_bijective_kernel_inverts_to_dirac():
    p = FiniteKernel.deterministic(TWO, XS, {"t1": "x2", "t2": "x1"}.get)
    res = brute_force_invert(p, Dist(TWO, exact([F(1, 3), F(2, 3)])))
    assert res.posterior("x2").weights.tolist() == [1, 0]
    assert res.posterior("x1").weights.tolist() == [0, 1]


def test_zero_evidence_outcome_gets_prior():
    p = FiniteKernel(TWO, FiniteSpace(("a", "b", "c")), exact([[F(1, 2), F(1, 2), 0], [F(1, 4), F(3, 4), 0]]))
    prior = Dist(TWO, exact([F(1, 3), F(2, 3)]))
    res = brute_force_invert(p, prior)
    assert res.null_outcomes == frozenset({"c"})
    assert res.posterior("c").weights.tolist() == prior.weights.tolist()
    assert verify_inversion(res.kernel, p, prior).ok


def test_verify_detects_a_wrong_inverse():
    p = FiniteKernel(TWO, XS, exact(ROWS))
    prior = Dist.uniform(TWO)
    q = FiniteKernel.constant(XS, prior)
    check = verify_inversion(q, p, prior)
    assert not check.ok
    # left side puts 0.4 * 0.5 at (t1, x1), right side 0.5 * 0.2
    assert check.deviation == F(1, 10)


def test_uninformative_kernel_inverts_to_prior():
    p = FiniteKernel.constant(TWO, Dist(XS, exact([F(1, 3), F(2, 3)])))
    prior = Dist(TWO, exact([F(1, 5), F(4, 5)]))
    assert verify_inversion(FiniteKernel.constant(XS, prior), p, prior).ok


@given(st.data(), st.sampled_from(["exact-rational", "float64"]))
def test_brute_force_satisfies_operator_equation(data, mode):
    model = data.draw(finite_model(positive=False, mode=mode))
    pairs = data.draw(pairs_for(model, max_n=3, min_n=1))
    p = sampling_operator(model, [x for x, _ in pairs])
    res = brute_force_invert(p, model.prior)
    check = verify_inversion(res.kernel, p, model.prior)
    assert check.ok
    if mode == "exact-rational":
        assert check.deviation == 0


def test_condition_joint_values():
    j = JointDist((TWO, XS), exact([[F(1, 10), F(2, 5)], [F(3, 10), F(1, 5)]]))
    assert condition_joint(j, "x2").weights.tolist() == [F(2, 3), F(1, 3)]


def test_condition_product_joint_and_dirac():
    mu, nu = [F(1, 3), F(2, 3)], [F(1, 4), F(3, 4)]
    j = JointDist((TWO, XS), exact(np.outer(mu, nu)))
    for b in XS.labels:
        assert condition_joint(j, b).weights.tolist() == mu
    d = JointDist((TWO, XS), exact([[0, 0], [0, 1]]))
    assert condition_joint(d, "x2").weights.tolist() == [0, 1]


def _coin_model():
    theta = FiniteSpace(("fair", "biased"))
    return SupervisedModel(
        theta, Dist.uniform(theta), FiniteSpace(("flip",)), FiniteSpace(("h", "t")),
        exact([[[F(1, 2), F(1, 2)]], [[F(4, 5), F(1, 5)]]]),
    )


def test_batch_base_cases():
    m = _coin_model()
    assert batch_invert(m, [], []).weights.tolist() == m.prior.weights.tolist()
    single = brute_force_invert(m.evaluated("flip"), m.prior).posterior("h")
    assert batch_invert(m, ["flip"], ["h"]).weights.tolist() == single.weights.tolist()
    assert sequential_invert(m, [("flip", "h")]).weights.tolist() == single.weights.tolist()


def test_identical_observations_commute():
    m = _coin_model()
    a = sequential_invert(m, [("flip", "h"), ("flip", "t"), ("flip", "h")])
    b = sequential_invert(m, [("flip", "t"), ("flip", "h"), ("flip", "h")])
    assert a.weights.tolist() == b.weights.tolist()
    # fair: 1/8, biased: 16/125 * (1/5)... = 4/5 * 1/5 * 4/5
    assert a.weights.tolist() == oracles.bayes([F(1, 2), F(1, 2)], [F(1, 8), F(16, 125)])


def test_unknown_input_raises():
    with pytest.raises(UnknownInputError):
        batch_invert(_coin_model(), ["roll"], ["h"])
    with pytest.raises(ValueError):
        batch_invert(_coin_model(), ["flip"], [])


@given(st.data())
def test_batch_equals_sequential_equals_loops(data):
    model = data.draw(finite_model())
    pairs = data.draw(pairs_for(model))
    b = batch_invert(model, [x for x, _ in pairs], [y for _, y in pairs])
    s = sequential_invert(model, pairs)
    assert b.weights.tolist() == s.weights.tolist()
    prior, sampling, idx = index_form(model, pairs)
    assert b.weights.tolist() == oracles.posterior(prior, sampling, idx)


@given(st.data())
def test_float_batch_equals_sequential(data):
    model = data.draw(finite_model(mode="float64"))
    pairs = data.draw(pairs_for(model))
    b = batch_invert(model, [x for x, _ in pairs], [y for _, y in pairs])
    s = sequential_invert(model, pairs)
    assert max_abs_diff(b.weights, s.weights) <= 1e-12


@given(st.data())
def test_order_invariance_at_one_input(data):
    model = data.draw(finite_model())
    x = model.inputs.labels[0]
    ys = data.draw(st.lists(st.sampled_from(model.labels.labels), max_size=5))
    perm = data.draw(st.permutations(ys))
    a = sequential_invert(model, [(x, y) for y in ys])
    b = sequential_invert(model, [(x, y) for y in perm])
    assert a.weights.tolist() == b.weights.tolist()


@given(st.data())
def test_evidence_is_consistent_across_steps(data):
    model = data.draw(finite_model(max_labels=3))
    pairs = data.draw(pairs_for(model, max_n=4, min_n=2))
    xs = [x for x, _ in pairs]
    full = brute_force_invert(sampling_operator(model, xs), model.prior).evidence
    short = brute_force_invert(sampling_operator(model, xs[:-1]), model.prior).evidence
    k = model.labels.size
    summed = np.asarray(full.weights).reshape(-1, k).sum(axis=1)
    assert summed.tolist() == short.weights.tolist()


def test_zero_evidence_stream_differs_only_by_convention():
    # theta1 forbids y2 at x1; observing y2 then y1 has zero evidence under batch
    theta, xs, ys = FiniteSpace(("a", "b")), FiniteSpace(("x",)), FiniteSpace(("y1", "y2"))
    m = SupervisedModel(theta, Dist.uniform(theta), xs, ys, exact([[[1, 0]], [[0, 1]]]))
    b = batch_invert(m, ["x", "x"], ["y2", "y1"])
    assert b.weights.tolist() == m.prior.weights.tolist()
    s = sequential_invert(m, [("x", "y2"), ("x", "y1")])
    assert s.weights.tolist() == [0, 1]
