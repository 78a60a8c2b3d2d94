from fractions import Fraction as F

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from onlinebayes.measure import Dist, FiniteSpace, ScalarMode, as_weights, max_abs_diff
from onlinebayes.model import dump_model, load_model, universal_model
from onlinebayes.supervised import (
    SupervisedModel,
    UnknownInputError,
    posterior_predictive_batch,
    posterior_predictive_conditional,
    posterior_predictive_recursive,
    restrict_model,
    sampling_operator,
    total_variation,
)
from strategies import finite_model, index_form, pairs_for

ROUTES = (posterior_predictive_batch, posterior_predictive_conditional, posterior_predictive_recursive)


def coin():
    theta = FiniteSpace(("fair", "biased"))
    rows = as_weights([[[F(1, 2), F(1, 2)]], [[F(4, 5), F(1, 5)]]], ScalarMode.EXACT)
    return SupervisedModel(theta, Dist.uniform(theta), FiniteSpace(("flip",)), FiniteSpace(("h", "t")), rows)


def test_sampling_operator_single_and_square():
    m = coin()
    assert sampling_operator(m, ["flip"]).rows.tolist() == m.sampling[:, 0, :].tolist()
    sq = sampling_operator(m, ["flip", "flip"]).rows.tolist()
    assert sq == [oracles.outer([F(1, 2), F(1, 2)], [F(1, 2), F(1, 2)]), oracles.outer([F(4, 5), F(1, 5)], [F(4, 5), F(1, 5)])]


@given(st.data())
def test_sampling_operator_is_tensor_of_rows(data):
    model = data.draw(finite_model(max_theta=3, max_labels=3))
    pts = data.draw(st.lists(st.sampled_from(model.inputs.labels), min_size=1, max_size=3))
    mat = sampling_operator(model, pts).rows.tolist()
    for t in range(model.theta.size):
        rows = [list(model.sampling[t, model.inputs.index(x)]) for x in pts]
        assert mat[t] == oracles.outer(*rows)


def test_coin_predictive_after_three_flips():
    sample = [("flip", "h"), ("flip", "h"), ("flip", "t")]
    for route in ROUTES:
        pred = route(coin(), sample, ["flip", "flip"])
        assert pred.weights[0] == F(11317, 25300)
        assert sum(pred.weights) == 1


def test_no_data_gives_prior_predictive():
    for route in ROUTES:
        assert route(coin(), [], ["flip"]).weights.tolist() == [F(13, 20), F(7, 20)]


def test_single_parameter_ignores_data():
    theta = FiniteSpace(("only",))
    m = SupervisedModel(theta, Dist.uniform(theta), FiniteSpace(("x",)), FiniteSpace(("a", "b")),
                        as_weights([[[F(1, 3), F(2, 3)]]], ScalarMode.EXACT))
    for route in ROUTES:
        assert route(m, [("x", "a"), ("x", "a")], ["x"]).weights.tolist() == [F(1, 3), F(2, 3)]


@given(st.data())
def test_three_routes_and_enumeration_agree(data):
    model = data.draw(finite_model(max_theta=4, max_inputs=3, max_labels=3))
    pairs = data.draw(pairs_for(model, max_n=3))
    test = data.draw(st.lists(st.sampled_from(model.inputs.labels), min_size=1, max_size=2))
    prior, sampling, idx = index_form(model, pairs)
    want = oracles.predictive(prior, sampling, idx, [model.inputs.index(x) for x in test], model.labels.size)
    for route in ROUTES:
        assert route(model, pairs, test).weights.tolist() == want


@given(st.data())
def test_float_routes_agree(data):
    model = data.draw(finite_model(max_theta=4, max_inputs=3, max_labels=3, mode="float64"))
    pairs = data.draw(pairs_for(model, max_n=3))
    test = data.draw(st.lists(st.sampled_from(model.inputs.labels), min_size=1, max_size=2))
    a, b, c = (route(model, pairs, test) for route in ROUTES)
    assert max_abs_diff(a.weights, b.weights) <= 1e-12
    assert max_abs_diff(a.weights, c.weights) <= 1e-12
    assert total_variation(a, c) <= 1e-12


@given(st.data())
def test_marginalizing_a_test_point_is_consistent(data):
    model = data.draw(finite_model(max_theta=4, max_inputs=3, max_labels=3))
    pairs = data.draw(pairs_for(model, max_n=3))
    test = data.draw(st.lists(st.sampled_from(model.inputs.labels), min_size=2, max_size=2))
    k = model.labels.size
    two = posterior_predictive_batch(model, pairs, test).weights.tolist()
    one = posterior_predictive_batch(model, pairs, test[:1]).weights.tolist()
    assert [sum(two[i * k:(i + 1) * k]) for i in range(k)] == one


def test_restriction_to_all_inputs_keeps_predictions():
    m = coin()
    r = restrict_model(m, ["flip"])
    sample = [("flip", "h")]
    assert posterior_predictive_batch(r, sample, ["flip"]).weights.tolist() == posterior_predictive_batch(m, sample, ["flip"]).weights.tolist()


def test_restriction_merges_parameters_and_rejects_outside_queries():
    theta = FiniteSpace(("p", "q", "r"))
    rows = [[[F(1, 2), F(1, 2)], [1, 0]], [[F(1, 2), F(1, 2)], [0, 1]], [[F(1, 5), F(4, 5)], [1, 0]]]
    m = SupervisedModel(theta, Dist(theta, as_weights([F(1, 6), F(1, 3), F(1, 2)], ScalarMode.EXACT)),
                        FiniteSpace(("a", "b")), FiniteSpace((0, 1)), as_weights(rows, ScalarMode.EXACT))
    r = restrict_model(m, ["a"])
    assert r.theta.labels == ("p", "r")
    assert r.prior.weights.tolist() == [F(1, 2), F(1, 2)]
    sample = [("a", 1)]
    assert posterior_predictive_batch(r, sample, ["a"]).weights.tolist() == posterior_predictive_batch(m, sample, ["a"]).weights.tolist()
    with pytest.raises(UnknownInputError):
        posterior_predictive_batch(r, sample, ["b"])
    with pytest.raises(ValueError):
        restrict_model(m, [])


def test_universal_model_predicts_grid_average():
    m = universal_model(FiniteSpace(("x",)), FiniteSpace((0, 1)), resolution=2)
    # grid {0, 1/2, 1} on P(y=1), uniform prior: Laplace-style averages
    assert posterior_predictive_batch(m, [], ["x"]).weights.tolist() == [F(1, 2), F(1, 2)]
    post = posterior_predictive_batch(m, [("x", 1)], ["x"]).weights.tolist()
    assert post == oracles.predictive([F(1, 3)] * 3, [[[1, 0]], [[F(1, 2), F(1, 2)]], [[0, 1]]], [(0, 1)], [0], 2)
    assert post == [F(1, 6), F(5, 6)]


@given(finite_model(max_theta=3, max_labels=3))
def test_model_document_round_trip(model):
    back = load_model(dump_model(model))
    assert back.theta == model.theta and back.inputs == model.inputs and back.labels == model.labels
    assert back.prior.weights.tolist() == model.prior.weights.tolist()
    assert back.sampling.tolist() == model.sampling.tolist()
