"""Supervised Bayesian learning models on finite spaces."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Iterable, Sequence

import numpy as np

from .measure import (
    Dist,
    FiniteKernel,
    FiniteSpace,
    ScalarMode,
    ShapeError,
    _check_probability,
    _freeze,
    as_weights,
    from_document,
    mode_of,
    product_kernel,
    to_document,
)


class UnknownInputError(KeyError):
    """An input label is not part of the model's input set."""


@dataclass(frozen=True, eq=False)
class SupervisedModel:
    """Parameter space, prior, and per-input label distributions.

    ``sampling[i, j]`` is the label distribution at input ``inputs.labels[j]``
    under parameter ``theta.labels[i]``.
    """

    theta: FiniteSpace
    prior: Dist
    inputs: FiniteSpace
    labels: FiniteSpace
    sampling: np.ndarray

    def __post_init__(self):
        s = self.sampling if isinstance(self.sampling, np.ndarray) else as_weights(self.sampling)
        if s.dtype != object:
            s = np.asarray(s, dtype=np.float64)
        shape = (self.theta.size, self.inputs.size, self.labels.size)
        if s.shape != shape:
            raise ShapeError(f"sampling array of shape {s.shape}, expected {shape}")
        if self.prior.space != self.theta:
            raise ShapeError("prior does not live on the parameter space")
        for i, j in itertools.product(range(shape[0]), range(shape[1])):
            _check_probability(s[i, j], f"sampling[{i}, {j}]")
        object.__setattr__(self, "sampling", _freeze(s))

    @property
    def mode(self) -> ScalarMode:
        return mode_of(self.sampling)

    def input_index(self, x: Hashable) -> int:
        if x not in self.inputs:
            raise UnknownInputError(f"input {x!r} is not in the model's input set")
        return self.inputs.index(x)

    def evaluated(self, x: Hashable) -> FiniteKernel:
        """Kernel from parameters to labels at a single input."""
        return FiniteKernel(self.theta, self.labels, self.sampling[:, self.input_index(x), :])

    def with_prior(self, prior: Dist) -> "SupervisedModel":
        return SupervisedModel(self.theta, prior, self.inputs, self.labels, self.sampling)


@dataclass(frozen=True)
class TrainingSample:
    pairs: tuple

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((x, y) for x, y in self.pairs))

    @property
    def inputs(self) -> tuple:
        return tuple(x for x, _ in self.pairs)

    @property
    def outputs(self) -> tuple:
        return tuple(y for _, y in self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


@dataclass(frozen=True)
class TestInputs:
    points: tuple

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


def as_sample(sample) -> TrainingSample:
    return sample if isinstance(sample, TrainingSample) else TrainingSample(tuple(sample))


def as_test_inputs(points) -> TestInputs:
    return points if isinstance(points, TestInputs) else TestInputs(tuple(points))


def sampling_operator(model: SupervisedModel, points: Iterable[Hashable]) -> FiniteKernel:
    """Kernel from parameters to the joint labels at ``points`` (independent given theta)."""
    points = tuple(as_test_inputs(points))
    if not points:
        raise ValueError("sampling_operator needs at least one input")
    return product_kernel([model.evaluated(x) for x in points])


# serialization


def model_to_document(model: SupervisedModel) -> dict:
    """Prior plus one parameter-to-label kernel per input, in input order."""
    return {
        "type": "supervised-model",
        "prior": to_document(model.prior),
        "inputs": to_document(model.inputs)["labels"],
        "kernels": [to_document(model.evaluated(x)) for x in model.inputs.labels],
    }


def model_from_document(doc: dict) -> SupervisedModel:
    if doc.get("type") != "supervised-model":
        raise ValueError(f"expected a supervised-model document, got {doc.get('type')!r}")
    prior = from_document(doc["prior"])
    inputs = from_document({"type": "space", "labels": doc["inputs"]})
    kernels = [from_document(k) for k in doc["kernels"]]
    if len(kernels) != inputs.size:
        raise ShapeError(f"{len(kernels)} kernels for {inputs.size} inputs")
    labels = kernels[0].target if kernels else None
    for k in kernels:
        if k.source != prior.space or k.target != labels:
            raise ShapeError("every kernel must map the prior's space to a common label space")
    sampling = np.stack([k.rows for k in kernels], axis=1)
    return SupervisedModel(prior.space, prior, inputs, labels, sampling)


def dump_model(model: SupervisedModel) -> str:
    return json.dumps(model_to_document(model), indent=2)


def load_model(text: str) -> SupervisedModel:
    return model_from_document(json.loads(text))


# constructors


def _random_simplex_point(rng: np.random.Generator, k: int, mode: ScalarMode, max_weight: int = 9):
    ints = rng.integers(1, max_weight + 1, size=k)
    if mode is ScalarMode.EXACT:
        total = int(ints.sum())
        return [Fraction(int(v), total) for v in ints]
    return list(ints / ints.sum())


def random_model(
    rng: np.random.Generator,
    n_theta: int,
    n_inputs: int,
    n_labels: int,
    mode: ScalarMode | str = ScalarMode.EXACT,
    max_weight: int = 9,
) -> SupervisedModel:
    """Model with strictly positive small-denominator rational weights."""
    mode = ScalarMode(mode)
    theta = FiniteSpace.of_size(n_theta, "th")
    inputs = FiniteSpace.of_size(n_inputs, "x")
    labels = FiniteSpace.of_size(n_labels, "y")
    prior = Dist(theta, as_weights(_random_simplex_point(rng, n_theta, mode, max_weight), mode))
    sampling = [
        [_random_simplex_point(rng, n_labels, mode, max_weight) for _ in range(n_inputs)]
        for _ in range(n_theta)
    ]
    return SupervisedModel(theta, prior, inputs, labels, as_weights(sampling, mode))


def sample_training(
    rng: np.random.Generator, model: SupervisedModel, n: int, inputs: Sequence | None = None
) -> TrainingSample:
    """Draw ``theta`` from the prior, then ``n`` labelled points given ``theta``."""
    p = np.asarray(model.prior.weights, dtype=np.float64)
    i = rng.choice(model.theta.size, p=p / p.sum())
    if inputs is None:
        inputs = [model.inputs.labels[j] for j in rng.integers(0, model.inputs.size, size=n)]
    pairs = []
    for x in inputs:
        row = np.asarray(model.sampling[i, model.input_index(x)], dtype=np.float64)
        y = model.labels.labels[rng.choice(model.labels.size, p=row / row.sum())]
        pairs.append((x, y))
    return TrainingSample(tuple(pairs))


def simplex_grid(k: int, resolution: int) -> list[tuple[Fraction, ...]]:
    """All points of the k-simplex with coordinates in multiples of 1/resolution."""
    out = []
    for combo in itertools.product(range(resolution + 1), repeat=k - 1):
        if sum(combo) <= resolution:
            counts = combo + (resolution - sum(combo),)
            out.append(tuple(Fraction(c, resolution) for c in counts))
    return out


def universal_model(
    inputs: FiniteSpace,
    labels: FiniteSpace,
    resolution: int,
    prior_weights: Sequence | None = None,
    mode: ScalarMode | str = ScalarMode.EXACT,
) -> SupervisedModel:
    """Finite stand-in for the model whose parameters are label distributions per input.

    Parameters enumerate every tuple of grid distributions (one per input);
    the sampling kernel is evaluation, i.e. ``theta`` at input ``x`` is ``theta[x]``.
    """
    mode = ScalarMode(mode)
    grid = simplex_grid(labels.size, resolution)
    thetas = list(itertools.product(range(len(grid)), repeat=inputs.size))
    theta = FiniteSpace(tuple(thetas))
    sampling = [[list(grid[g]) for g in t] for t in thetas]
    if prior_weights is None:
        prior = Dist.uniform(theta, mode)
    else:
        prior = Dist(theta, as_weights(prior_weights, mode))
    return SupervisedModel(theta, prior, inputs, labels, as_weights(sampling, mode))
