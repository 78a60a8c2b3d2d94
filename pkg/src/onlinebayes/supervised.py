"""Posterior predictive distributions for finite supervised models."""

from __future__ import annotations

from typing import Hashable, Iterable

import numpy as np

from .inversion import batch_invert, condition_axis, condition_joint
from .measure import Dist, FiniteSpace, JointDist, _common, pushforward
from .model import (
    SupervisedModel,
    TestInputs,
    TrainingSample,
    UnknownInputError,
    as_sample,
    as_test_inputs,
    sampling_operator,
)

__all__ = [
    "SupervisedModel",
    "TestInputs",
    "TrainingSample",
    "UnknownInputError",
    "sampling_operator",
    "predictive_joint",
    "posterior_predictive_batch",
    "posterior_predictive_conditional",
    "posterior_predictive_recursive",
    "restrict_model",
    "total_variation",
]


def _flat_result(j: JointDist | Dist) -> Dist:
    return j if isinstance(j, Dist) else j.as_dist()


def predictive_joint(model: SupervisedModel, test: Iterable[Hashable], train: Iterable[Hashable]) -> JointDist:
    """Prior joint law of the labels at ``test`` followed by those at ``train``."""
    points = tuple(test) + tuple(train)
    k = sampling_operator(model, points)
    dist = pushforward(k, model.prior)
    return JointDist.from_dist(dist, [model.labels] * len(points))


def posterior_predictive_batch(model: SupervisedModel, sample, test) -> Dist:
    sample, test = as_sample(sample), as_test_inputs(test)
    posterior = batch_invert(model, sample.inputs, sample.outputs)
    return pushforward(sampling_operator(model, test), posterior)


def posterior_predictive_conditional(model: SupervisedModel, sample, test) -> Dist:
    """Slice the joint test/train label law at the observed training labels."""
    sample, test = as_sample(sample), as_test_inputs(test)
    m, n = len(test), len(sample)
    if n == 0:
        return pushforward(sampling_operator(model, test), model.prior)
    joint = predictive_joint(model, test, sample.inputs)
    test_space = FiniteSpace.product(*[model.labels] * m) if m > 1 else model.labels
    train_space = FiniteSpace.product(*[model.labels] * n) if n > 1 else model.labels
    two = JointDist((test_space, train_space), joint.flat)
    key = sample.outputs[0] if n == 1 else sample.outputs
    return condition_joint(two, key)


def posterior_predictive_recursive(model: SupervisedModel, sample, test) -> Dist:
    """Build the prior joint once, then condition on y_n, y_(n-1), ..., y_1."""
    sample, test = as_sample(sample), as_test_inputs(test)
    m = len(test)
    if m == 0:
        raise ValueError("need at least one test input")
    current: JointDist | Dist = predictive_joint(model, test, sample.inputs)
    for y in reversed(sample.outputs):
        current = condition_axis(current, len(current.factors) - 1, y)
    if isinstance(current, JointDist) and m == 1:
        return Dist(model.labels, current.flat)
    return _flat_result(current)


def restrict_model(model: SupervisedModel, subset: Iterable[Hashable], collapse: bool = True) -> SupervisedModel:
    """Keep only the inputs in ``subset``.

    With ``collapse`` the parameters whose restricted label distributions
    coincide are merged and their prior mass added, which is the pushforward
    of the prior under restriction.
    """
    subset = tuple(dict.fromkeys(subset))
    if not subset:
        raise ValueError("restriction needs a nonempty input subset")
    cols = [model.input_index(x) for x in subset]
    sampling = model.sampling[:, cols, :]
    inputs = FiniteSpace(subset)
    if not collapse:
        return SupervisedModel(model.theta, model.prior, inputs, model.labels, sampling)
    groups: dict = {}
    for i in range(model.theta.size):
        key = tuple(tuple(r) for r in sampling[i])
        groups.setdefault(key, []).append(i)
    reps = [idx[0] for idx in groups.values()]
    prior_w = model.prior.weights
    merged = np.array([prior_w[idx].sum() for idx in groups.values()], dtype=prior_w.dtype)
    theta = FiniteSpace(tuple(model.theta.labels[i] for i in reps))
    return SupervisedModel(theta, Dist(theta, merged), inputs, model.labels, sampling[reps])


def total_variation(a: Dist, b: Dist):
    if a.space != b.space:
        raise ValueError("distributions live on different spaces")
    x, y = _common(a.weights, b.weights)
    return abs(x - y).sum() / 2
