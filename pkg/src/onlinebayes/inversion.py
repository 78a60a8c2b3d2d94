"""Bayesian inversion of finite kernels, in one shot and observation by observation."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Iterable, NamedTuple

import numpy as np

from .measure import (
    FLOAT_TOL,
    Dist,
    FiniteKernel,
    JointDist,
    ShapeError,
    _common,
    graph_joint,
    marginalize,
    max_abs_diff,
    pushforward,
    swap_joint,
)
from .model import SupervisedModel, as_sample, sampling_operator


@dataclass(frozen=True, eq=False)
class InversionResult:
    """Posterior kernel from outcomes to parameters.

    Outcomes with zero evidence are listed in ``null_outcomes``; their
    posterior row is the prior.
    """

    kernel: FiniteKernel
    evidence: Dist
    null_outcomes: frozenset

    def posterior(self, outcome: Hashable) -> Dist:
        return self.kernel.row(outcome)


class InversionCheck(NamedTuple):
    ok: bool
    deviation: float | Fraction


def _is_zero(x) -> bool:
    return x == 0


def brute_force_invert(p: FiniteKernel, prior: Dist) -> InversionResult:
    """Elementary Bayes rule for every outcome of ``p``."""
    if prior.space != p.source:
        raise ShapeError("prior does not live on the kernel's source space")
    w, rows = _common(prior.weights, p.rows)
    joint = w[:, None] * rows  # theta x outcome
    evidence = joint.sum(axis=0)
    post = np.empty((p.target.size, p.source.size), dtype=joint.dtype)
    null = []
    for j in range(p.target.size):
        if _is_zero(evidence[j]):
            post[j] = w
            null.append(p.target.labels[j])
        else:
            post[j] = joint[:, j] / evidence[j]
    return InversionResult(
        kernel=FiniteKernel(p.target, p.source, post),
        evidence=Dist(p.target, evidence),
        null_outcomes=frozenset(null),
    )


def verify_inversion(q: FiniteKernel, p: FiniteKernel, prior: Dist) -> InversionCheck:
    """Compare both sides of the defining equation of a Bayesian inversion.

    The swapped graph of ``q`` over the evidence must equal the graph of
    ``p`` over the prior. Exact inputs demand a zero deviation.
    """
    if q.source != p.target or q.target != p.source:
        raise ShapeError("q must map the outcomes of p back to its parameters")
    evidence = pushforward(p, prior)
    lhs = swap_joint(graph_joint(q, evidence))
    rhs = graph_joint(p, prior)
    dev = max_abs_diff(lhs.weights, rhs.weights)
    tol = 0 if lhs.weights.dtype == object and rhs.weights.dtype == object else FLOAT_TOL
    return InversionCheck(dev <= tol, dev)


def condition_axis(j: JointDist, axis: int, label: Hashable) -> JointDist | Dist:
    """Slice ``j`` at ``label`` on ``axis`` and renormalize over the other axes.

    A zero-mass slice falls back to the marginal of the remaining axes.
    """
    n = len(j.factors)
    if n < 2:
        raise ShapeError("conditioning needs at least two factors")
    if not 0 <= axis < n:
        raise IndexError(f"axis {axis} out of range")
    idx = j.factors[axis].index(label)
    rest = [a for a in range(n) if a != axis]
    piece = np.take(j.weights, idx, axis=axis)
    mass = piece.sum()
    if _is_zero(mass):
        return marginalize(j, rest)
    piece = piece / mass
    if len(rest) == 1:
        return Dist(j.factors[rest[0]], piece)
    return JointDist(tuple(j.factors[a] for a in rest), piece)


def condition_joint(j: JointDist, observed: Hashable) -> Dist:
    """Conditional of the first factor given the second equals ``observed``."""
    if len(j.factors) != 2:
        raise ShapeError(f"condition_joint needs two factors, got {len(j.factors)}")
    return condition_axis(j, 1, observed)


def _check_inputs(model: SupervisedModel, inputs: Iterable[Hashable]) -> tuple:
    inputs = tuple(inputs)
    for x in inputs:
        model.input_index(x)
    return inputs


def batch_invert(model: SupervisedModel, inputs: Iterable[Hashable], observations: Iterable[Hashable]) -> Dist:
    """Posterior after inverting the joint sampling kernel of all inputs at once."""
    inputs = _check_inputs(model, inputs)
    observations = tuple(observations)
    if len(inputs) != len(observations):
        raise ValueError(f"{len(inputs)} inputs but {len(observations)} observations")
    if not inputs:
        return model.prior
    p = sampling_operator(model, inputs)
    result = brute_force_invert(p, model.prior)
    key = observations[0] if len(observations) == 1 else observations
    return result.posterior(key)


def sequential_invert(model: SupervisedModel, stream: Iterable[tuple[Hashable, Hashable]]) -> Dist:
    """Fold observations left to right, each posterior becoming the next prior.

    Agrees with :func:`batch_invert` on every stream of positive evidence; on
    zero-evidence streams the two may differ, as both are only defined
    almost surely.
    """
    posterior = model.prior
    for x, y in as_sample(stream):
        p = model.evaluated(x)
        if y not in p.target:
            raise KeyError(f"label {y!r} not in the model's label set")
        posterior = brute_force_invert(p, posterior).posterior(y)
    return posterior
