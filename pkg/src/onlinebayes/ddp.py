"""Dependent Dirichlet processes with Gaussian-copula coupled sticks and atoms.

At each input ``x`` the path is a truncated stick-breaking measure with
``Beta(1, alpha(x))`` sticks and atoms from ``G0_x``. Stick ``i`` at all
inputs is driven by one correlated Gaussian vector (and likewise for the
atoms), pushed through the normal CDF and the marginal quantile functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

import numpy as np

from . import rng as rngmod
from .dirichlet import (
    DiffuseBase,
    IntervalPartition,
    beta1_from_normal,
    stick_weights,
    truncation_bias,
)

CORR_JITTER = 1e-10
MIN_ESS = 100.0
ROUNDOFF = 1e-12


class CopulaError(np.linalg.LinAlgError):
    """Correlation matrix is not positive semidefinite, even after jitter."""


@dataclass(frozen=True)
class CopulaSpec:
    corr_fn: Callable[[Hashable, Hashable], float]
    family: str = "gaussian"

    def __post_init__(self):
        if self.family != "gaussian":
            raise ValueError(f"unsupported copula family {self.family!r}")

    def matrix(self, xs: Sequence) -> np.ndarray:
        m = len(xs)
        c = np.empty((m, m))
        for i in range(m):
            for j in range(m):
                c[i, j] = 1.0 if i == j else float(self.corr_fn(xs[i], xs[j]))
        if np.any(np.abs(c) > 1.0) or not np.allclose(c, c.T):
            raise CopulaError("correlations must be symmetric and within [-1, 1]")
        return c


def comonotone() -> CopulaSpec:
    return CopulaSpec(lambda a, b: 1.0)


def independent() -> CopulaSpec:
    return CopulaSpec(lambda a, b: 1.0 if a == b else 0.0)


def exponential_correlation(lengthscale: float) -> CopulaSpec:
    return CopulaSpec(lambda a, b: math.exp(-abs(float(a) - float(b)) / lengthscale))


def constant_correlation(rho: float) -> CopulaSpec:
    return CopulaSpec(lambda a, b: 1.0 if a == b else rho)


@dataclass(frozen=True)
class CopulaFactor:
    """Maps independent normals over equivalence classes to correlated normals per site.

    Sites whose correlation is exactly one share a class and therefore a draw.
    """

    classes: np.ndarray  # site -> class index
    lower: np.ndarray  # unit-row-norm factor over classes

    @property
    def n_classes(self) -> int:
        return self.lower.shape[0]

    def apply(self, raw: np.ndarray) -> np.ndarray:
        """``raw[..., n_classes]`` -> correlated normals ``[..., n_sites]``."""
        return (raw @ self.lower.T)[..., self.classes]


def copula_factor(copula: CopulaSpec, xs: Sequence) -> CopulaFactor:
    c = copula.matrix(xs)
    m = len(xs)
    classes = np.full(m, -1)
    reps: list[int] = []
    for i in range(m):
        if classes[i] >= 0:
            continue
        classes[i] = len(reps)
        for j in range(i + 1, m):
            if classes[j] < 0 and c[i, j] == 1.0:
                classes[j] = len(reps)
        reps.append(i)
    for i in range(m):
        for j in range(m):
            if (classes[i] == classes[j]) != (c[i, j] == 1.0) and i != j:
                raise CopulaError("perfect correlations are not transitive")
    cr = c[np.ix_(reps, reps)] + CORR_JITTER * np.eye(len(reps))
    try:
        lower = np.linalg.cholesky(cr)
    except np.linalg.LinAlgError as exc:
        raise CopulaError(f"correlation matrix is not positive semidefinite: {exc}") from exc
    lower = lower / np.linalg.norm(lower, axis=1, keepdims=True)
    return CopulaFactor(classes, lower)


@dataclass(frozen=True)
class DdpSpec:
    alpha_fn: Callable[[Hashable], float]
    base_fn: Callable[[Hashable], DiffuseBase]
    copula_v: CopulaSpec = field(default_factory=independent)
    copula_theta: CopulaSpec = field(default_factory=independent)
    truncation: int = 50

    def __post_init__(self):
        if self.truncation < 1:
            raise ValueError("truncation must be at least 1")

    def alphas(self, xs: Sequence) -> np.ndarray:
        a = np.array([float(self.alpha_fn(x)) for x in xs])
        if np.any(a <= 0) or not np.all(np.isfinite(a)):
            raise ValueError("concentrations must be positive and finite")
        return a


@dataclass(frozen=True, eq=False)
class DdpPath:
    """Atoms and weights, each of shape (sites, truncation)."""

    xs: tuple
    atoms: np.ndarray
    weights: np.ndarray

    def at(self, x) -> tuple[np.ndarray, np.ndarray]:
        i = self.xs.index(x)
        return self.atoms[i], self.weights[i]


def _draw(spec: DdpSpec, xs: Sequence, gen: np.random.Generator, lead: tuple, fv: CopulaFactor, ft: CopulaFactor):
    n = spec.truncation
    raw_v = gen.standard_normal(lead + (n, fv.n_classes))
    raw_t = gen.standard_normal(lead + (n, ft.n_classes))
    z_v = np.moveaxis(fv.apply(raw_v), -1, -2)  # (..., sites, n)
    z_t = np.moveaxis(ft.apply(raw_t), -1, -2)
    alphas = spec.alphas(xs)[:, None]
    weights = stick_weights(beta1_from_normal(z_v, alphas))
    atoms = np.empty_like(z_t)
    for i, x in enumerate(xs):
        atoms[..., i, :] = spec.base_fn(x).from_normal(z_t[..., i, :])
    return atoms, weights


def sample_path(spec: DdpSpec, xs: Sequence, seed: int) -> DdpPath:
    xs = tuple(xs)
    if not xs:
        raise ValueError("need at least one input")
    fv, ft = copula_factor(spec.copula_v, xs), copula_factor(spec.copula_theta, xs)
    atoms, weights = _draw(spec, xs, rngmod.generator(seed), (), fv, ft)
    return DdpPath(xs, atoms, weights)


def _cell_probs(atoms: np.ndarray, weights: np.ndarray, part: IntervalPartition) -> np.ndarray:
    cells = part.cells_of(atoms)
    return np.stack([(weights * (cells == c)).sum(axis=-1) for c in range(part.size)], axis=-1)


def projected_samples(spec: DdpSpec, xs: Sequence, part: IntervalPartition, seed: int, reps: int) -> np.ndarray:
    """Cell probabilities of ``reps`` paths: array (reps, sites, cells)."""
    xs = tuple(xs)
    if reps < 1:
        raise ValueError("need at least one replication")
    fv, ft = copula_factor(spec.copula_v, xs), copula_factor(spec.copula_theta, xs)
    out = np.empty((reps, len(xs), part.size))
    row = 0
    for size, gen in rngmod.blocks(seed, reps):
        atoms, weights = _draw(spec, xs, gen, (size,), fv, ft)
        out[row : row + size] = _cell_probs(atoms, weights, part)
        row += size
    return out


def base_cell_probs(spec: DdpSpec, xs: Sequence, part: IntervalPartition) -> np.ndarray:
    """``G0_x(A_j)`` for every site and cell."""
    return np.array([[float(part.base_mass(spec.base_fn(x), j)) for j in range(part.size)] for x in xs])


def dirichlet_moments(spec: DdpSpec, xs: Sequence, part: IntervalPartition) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of the marginal Dirichlet law of each site's cell vector."""
    p = base_cell_probs(spec, xs, part)
    a = spec.alphas(xs)[:, None]
    return p, p * (1.0 - p) / (1.0 + a)


@dataclass(frozen=True, eq=False)
class ProjectionSummary:
    xs: tuple
    samples: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    se_mean: np.ndarray
    se_var: np.ndarray
    target_mean: np.ndarray
    target_var: np.ndarray

    @property
    def z_mean(self) -> np.ndarray:
        return _zscores(self.mean, self.target_mean, self.se_mean)

    @property
    def z_var(self) -> np.ndarray:
        return _zscores(self.var, self.target_var, self.se_var)


def _zscores(est, target, se) -> np.ndarray:
    # differences at round-off level count as exact agreement (degenerate cells)
    diff = np.abs(est - target)
    diff = np.where(diff <= ROUNDOFF, 0.0, diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / se, np.where(diff == 0, 0.0, np.inf))
    return z


def summarize(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Means, variances and their standard errors along the first axis."""
    r = samples.shape[0]
    mean = samples.mean(axis=0)
    centered = samples - mean
    sq = centered**2
    var = sq.mean(axis=0) * r / max(r - 1, 1)
    se_mean = np.sqrt(var / r)
    se_var = sq.std(axis=0, ddof=1) / np.sqrt(r) if r > 1 else np.full_like(var, np.inf)
    return mean, var, se_mean, se_var


def finite_projection(spec: DdpSpec, xs: Sequence, part: IntervalPartition, seed: int, reps: int) -> ProjectionSummary:
    xs = tuple(xs)
    samples = projected_samples(spec, xs, part, seed, reps)
    mean, var, se_mean, se_var = summarize(samples)
    tm, tv = dirichlet_moments(spec, xs, part)
    return ProjectionSummary(xs, samples, mean, var, se_mean, se_var, tm, tv)


@dataclass(frozen=True)
class MeanCheckReport:
    ok: bool
    z_scores: np.ndarray  # (sites, cells)
    truncation_bias: np.ndarray  # per site
    reps: int
    seed: int

    @property
    def max_z(self) -> float:
        return float(np.max(self.z_scores))


def mean_measure_check(spec: DdpSpec, xs: Sequence, part: IntervalPartition, seed: int, reps: int) -> MeanCheckReport:
    """Empirical cell means against ``G0_x``; passes when every |z| <= 3.

    Residual folding keeps every draw normalized and every atom distributed as
    ``G0_x``, so the mean is unbiased at any truncation; the reported bound
    concerns higher moments only.
    """
    if reps < 1000:
        raise ValueError("mean_measure_check needs at least 1000 replications")
    summary = finite_projection(spec, xs, part, seed, reps)
    z = summary.z_mean
    bias = np.array([truncation_bias(a, spec.truncation) for a in spec.alphas(xs)])
    return MeanCheckReport(bool(np.all(z <= 3.0)), z, bias, reps, seed)


@dataclass(frozen=True, eq=False)
class PredictiveReport:
    """Self-normalized importance estimate over the test cells (row-major in test order)."""

    test: tuple
    probs: np.ndarray
    se: np.ndarray
    ess: float
    low_ess: bool
    reps: int
    seed: int

    def table(self) -> np.ndarray:
        k = round(len(self.probs) ** (1.0 / len(self.test)))
        return self.probs.reshape((k,) * len(self.test))


def ddp_predictive_mc(
    spec: DdpSpec,
    sample: Sequence[tuple],
    test: Sequence,
    part: IntervalPartition,
    seed: int,
    reps: int,
    min_ess: float = MIN_ESS,
) -> PredictiveReport:
    """Predictive cell probabilities at ``test`` given ``sample`` by weighting prior paths.

    Each path is weighted by the probability it gives the observed training
    cells; the estimate averages the product of test-site cell probabilities.
    """
    test = tuple(test)
    if not test:
        raise ValueError("need at least one test input")
    sample = [tuple(p) for p in sample]
    sites = tuple(dict.fromkeys(test + tuple(x for x, _ in sample)))
    probs = projected_samples(spec, sites, part, seed, reps)
    logw = np.zeros(reps)
    with np.errstate(divide="ignore"):
        for x, y in sample:
            logw += np.log(probs[:, sites.index(x), part.cell_of(y)])
    k = part.size
    f = np.ones((reps, 1))
    for t in test:
        f = (f[:, :, None] * probs[:, sites.index(t), None, :]).reshape(reps, -1)
    if not np.any(np.isfinite(logw)):
        nan = np.full(k ** len(test), np.nan)
        return PredictiveReport(test, nan, nan, 0.0, True, reps, seed)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    est = w @ f
    se = np.sqrt((w[:, None] ** 2 * (f - est) ** 2).sum(axis=0))
    ess = float(1.0 / np.sum(w**2))
    return PredictiveReport(test, est, se, ess, ess < min_ess, reps, seed)
