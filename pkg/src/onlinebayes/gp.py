"""Gaussian-process regression with noisy measurements.

Two routes to the posterior predictive at test inputs: the classical batch
formula (one symmetric solve of the train Gram matrix) and the recursive
route that conditions the joint test/train Gaussian on one scalar
observation at a time. :class:`StreamingGp` extends the recursive route to
observations whose inputs are not known in advance.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import linalg

JITTER = 1e-10
DEGENERACY = 1e-12
CONSISTENCY_TOL = 1e-6

TEST, TRAIN = "test", "train"


class ConditioningError(np.linalg.LinAlgError):
    """The train covariance is numerically singular even after jitter."""


class InconsistentObservationError(ValueError):
    """A (numerically) deterministic coordinate was observed at a different value."""


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    return x


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = _as_points(a)
    b = _as_points(b)
    if a.ndim == 1:
        return (a[:, None] - b[None, :]) ** 2
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)


def rbf_kernel(lengthscale: float = 1.0, variance: float = 1.0) -> Callable:
    def k(a, b):
        return variance * np.exp(-0.5 * _sqdist(a, b) / lengthscale**2)

    return k


def matern32_kernel(lengthscale: float = 1.0, variance: float = 1.0) -> Callable:
    def k(a, b):
        r = np.sqrt(3.0 * _sqdist(a, b)) / lengthscale
        return variance * (1.0 + r) * np.exp(-r)

    return k


def matern52_kernel(lengthscale: float = 1.0, variance: float = 1.0) -> Callable:
    def k(a, b):
        d2 = _sqdist(a, b)
        r = np.sqrt(5.0 * d2) / lengthscale
        return variance * (1.0 + r + 5.0 * d2 / (3.0 * lengthscale**2)) * np.exp(-r)

    return k


def constant_kernel(value: float) -> Callable:
    def k(a, b):
        return np.full((len(_as_points(a)), len(_as_points(b))), float(value))

    return k


KERNELS = {"rbf": rbf_kernel, "matern32": matern32_kernel, "matern52": matern52_kernel}


def zero_mean(x) -> np.ndarray:
    return np.zeros(len(_as_points(x)))


def constant_noise(var: float) -> Callable:
    if var < 0:
        raise ValueError("noise variance must be nonnegative")
    return lambda x: np.full(len(_as_points(x)), float(var))


@dataclass(frozen=True)
class GpPrior:
    """Mean function, covariance kernel and per-input noise variance.

    All three take arrays of inputs; ``cov_fn(a, b)`` returns the Gram matrix.
    """

    cov_fn: Callable
    mean_fn: Callable = zero_mean
    noise_var_fn: Callable = field(default_factory=lambda: constant_noise(0.0))

    def mean(self, x) -> np.ndarray:
        return np.asarray(self.mean_fn(_as_points(x)), dtype=np.float64).reshape(-1)

    def cov(self, a, b) -> np.ndarray:
        return np.asarray(self.cov_fn(_as_points(a), _as_points(b)), dtype=np.float64)

    def noise(self, x) -> np.ndarray:
        return np.asarray(self.noise_var_fn(_as_points(x)), dtype=np.float64).reshape(-1)


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray
    tags: tuple

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.cov, dtype=np.float64).reshape(len(mean), len(mean))
        if len(self.tags) != len(mean):
            raise ValueError(f"{len(self.tags)} tags for {len(mean)} coordinates")
        if any(t not in (TEST, TRAIN) for t in self.tags):
            raise ValueError("tags must be 'test' or 'train'")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "tags", tuple(self.tags))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def test_indices(self) -> list[int]:
        return [i for i, t in enumerate(self.tags) if t == TEST]

    def train_indices(self) -> list[int]:
        return [i for i, t in enumerate(self.tags) if t == TRAIN]

    def block(self, idx: Sequence[int]) -> "GaussianBelief":
        idx = list(idx)
        return GaussianBelief(self.mean[idx], self.cov[np.ix_(idx, idx)], tuple(self.tags[i] for i in idx))

    def test_block(self) -> "GaussianBelief":
        return self.block(self.test_indices())

    def validate(self, sym_tol: float = 1e-10, psd_tol: float = 1e-8) -> None:
        if not np.all(np.isfinite(self.cov)) or not np.all(np.isfinite(self.mean)):
            raise ValueError("belief has non-finite entries")
        if self.dim == 0:
            return
        if np.max(np.abs(self.cov - self.cov.T)) > sym_tol:
            raise ValueError("covariance is not symmetric")
        floor = -psd_tol * max(np.trace(self.cov), 0.0)
        if np.linalg.eigvalsh(self.cov).min() < floor:
            raise ValueError("covariance is not positive semidefinite")


def build_joint(prior: GpPrior, test, train) -> GaussianBelief:
    """Joint Gaussian of latent values at ``test`` and noisy readings at ``train``."""
    test, train = _as_points(test), _as_points(train)
    m, n = len(test), len(train)
    if m + n == 0:
        raise ValueError("need at least one coordinate")
    pts = np.concatenate([test, train]) if m and n else (test if m else train)
    mean = prior.mean(pts)
    cov = prior.cov(pts, pts)
    if n:
        cov[m:, m:] += np.diag(prior.noise(train))
    if not (np.all(np.isfinite(cov)) and np.all(np.isfinite(mean))):
        raise ValueError("kernel or mean produced non-finite values")
    return GaussianBelief(mean, cov, (TEST,) * m + (TRAIN,) * n)


def condition_one(belief: GaussianBelief, coord: int, y: float) -> GaussianBelief:
    """Condition on one scalar train coordinate and drop it.

    Only rank-one products are involved: the gain is the observed column
    divided by the observed variance.
    """
    if belief.tags[coord] != TRAIN:
        raise ValueError(f"coordinate {coord} is not a train coordinate")
    keep = np.arange(belief.dim) != coord
    s_oo = belief.cov[coord, coord]
    resid = float(y) - belief.mean[coord]
    mean_r = belief.mean[keep]
    cov_rr = belief.cov[np.ix_(keep, keep)]
    tags = tuple(t for i, t in enumerate(belief.tags) if i != coord)
    if s_oo <= DEGENERACY:
        if abs(resid) > CONSISTENCY_TOL:
            raise InconsistentObservationError(
                f"coordinate with variance {s_oo:.3g} observed {resid:.3g} away from its mean"
            )
        return GaussianBelief(mean_r, cov_rr, tags)
    c = belief.cov[keep, coord]
    gain = c / s_oo
    mean = mean_r + gain * resid
    cov = cov_rr - np.outer(gain, c)
    cov = 0.5 * (cov + cov.T)
    return GaussianBelief(mean, cov, tags)


def _split(sample) -> tuple[np.ndarray, np.ndarray]:
    pairs = list(sample)
    if not pairs:
        return np.zeros(0), np.zeros(0)
    xs = np.array([p[0] for p in pairs], dtype=np.float64)
    ys = np.array([p[1] for p in pairs], dtype=np.float64)
    return xs, ys


def batch_predictive(prior: GpPrior, test, sample) -> GaussianBelief:
    """Classical formula: one Cholesky solve with the noisy train Gram matrix."""
    test = _as_points(test)
    xs, ys = _split(sample)
    m = len(test)
    mean_t = prior.mean(test)
    k_tt = prior.cov(test, test)
    if len(xs) == 0:
        return GaussianBelief(mean_t, k_tt, (TEST,) * m)
    k_xx = prior.cov(xs, xs) + np.diag(prior.noise(xs))
    k_xx[np.diag_indices_from(k_xx)] += JITTER * np.trace(k_xx) / len(xs)
    try:
        factor = linalg.cho_factor(k_xx, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"train covariance is singular: {exc}") from exc
    k_xt = prior.cov(xs, test)
    alpha = linalg.cho_solve(factor, ys - prior.mean(xs))
    mean = mean_t + k_xt.T @ alpha
    cov = k_tt - k_xt.T @ linalg.cho_solve(factor, k_xt)
    cov = 0.5 * (cov + cov.T)
    return GaussianBelief(mean, cov, (TEST,) * m)


def recursive_predictive(prior: GpPrior, test, sample) -> GaussianBelief:
    """Build the joint once, then fold :func:`condition_one` in stream order."""
    test = _as_points(test)
    xs, ys = _split(sample)
    belief = build_joint(prior, test, xs)
    m = len(test)
    for y in ys:
        # earlier train coordinates are removed, so the next one sits at index m
        belief = condition_one(belief, m, y)
    return belief


class StreamingGp:
    """Predictive at fixed test inputs, updated one observation at a time.

    Consumed train coordinates are not kept in the belief. What is kept is
    the lower-triangular factor of the noisy train Gram matrix (one row per
    observation), which is enough to compute the posterior cross-covariance
    between a new train input and the test coordinates.
    """

    def __init__(self, prior: GpPrior, test):
        self.prior = prior
        self.test = _as_points(test)
        self.belief = GaussianBelief(prior.mean(self.test), prior.cov(self.test, self.test), (TEST,) * len(self.test))
        self._xs: list = []
        self._factor = np.zeros((0, 0))
        self._gains = np.zeros((len(self.test), 0))  # gain directions at the test inputs
        self._scaled_resid = np.zeros(0)

    @property
    def n_observed(self) -> int:
        return len(self._xs)

    def extend(self, x) -> tuple[GaussianBelief, np.ndarray]:
        """Belief over the test block plus a new noisy reading at ``x``.

        Returns the extended belief and the solved factor row for ``x``.
        """
        x1 = np.asarray(x, dtype=np.float64)[None, ...]
        k_tx = self.prior.cov(self.test, x1)[:, 0]
        k_xx = float(self.prior.cov(x1, x1)[0, 0]) + float(self.prior.noise(x1)[0])
        if self._xs:
            past = np.asarray(self._xs)
            h = linalg.solve_triangular(self._factor, self.prior.cov(past, x1)[:, 0], lower=True, check_finite=False)
        else:
            h = np.zeros(0)
        mean_o = float(self.prior.mean(x1)[0]) + h @ self._scaled_resid
        var_o = k_xx - h @ h
        cross = k_tx - self._gains @ h
        m = self.belief.dim
        mean = np.append(self.belief.mean, mean_o)
        cov = np.empty((m + 1, m + 1))
        cov[:m, :m] = self.belief.cov
        cov[:m, m] = cov[m, :m] = cross
        cov[m, m] = var_o
        return GaussianBelief(mean, cov, self.belief.tags + (TRAIN,)), h

    def append(self, x, y: float) -> GaussianBelief:
        extended, h = self.extend(x)
        m = self.belief.dim
        s_oo = extended.cov[m, m]
        if s_oo <= DEGENERACY:
            raise ConditioningError("new observation is numerically deterministic given the past")
        root = np.sqrt(s_oo)
        self.belief = condition_one(extended, m, y)
        n = len(self._xs)
        factor = np.zeros((n + 1, n + 1))
        factor[:n, :n] = self._factor
        factor[n, :n] = h
        factor[n, n] = root
        self._factor = factor
        self._gains = np.column_stack([self._gains, extended.cov[:m, m] / root])
        self._scaled_resid = np.append(self._scaled_resid, (float(y) - extended.mean[m]) / root)
        self._xs.append(np.asarray(x, dtype=np.float64))
        return self.belief


# random instances and benchmarking


@dataclass(frozen=True)
class GpInstance:
    prior: GpPrior
    test: np.ndarray
    train_x: np.ndarray
    train_y: np.ndarray

    @property
    def sample(self) -> list[tuple[float, float]]:
        return list(zip(self.train_x.tolist(), self.train_y.tolist()))


def random_instance(
    rng: np.random.Generator,
    n: int,
    m: int,
    kernel: str = "rbf",
    lengthscale: float | None = None,
    noise: float | None = None,
    domain: float = 10.0,
    variance: float | None = None,
) -> GpInstance:
    """Random 1-D regression problem with labels drawn from the prior itself.

    Hyperparameters left as ``None`` are drawn: length-scale and signal
    variance from U[0.5, 2], noise variance from U[0.01, 0.1].
    """
    ls = float(rng.uniform(0.5, 2.0)) if lengthscale is None else lengthscale
    var = float(rng.uniform(0.5, 2.0)) if variance is None else variance
    nv = float(rng.uniform(0.01, 0.1)) if noise is None else noise
    prior = GpPrior(cov_fn=KERNELS[kernel](ls, var), noise_var_fn=constant_noise(nv))
    xs = rng.uniform(0.0, domain, size=n)
    test = rng.uniform(0.0, domain, size=m)
    if n:
        k = prior.cov(xs, xs) + np.diag(prior.noise(xs))
        k[np.diag_indices_from(k)] += 1e-9 * var
        ys = np.linalg.cholesky(k) @ rng.standard_normal(n)
    else:
        ys = np.zeros(0)
    return GpInstance(prior, test, xs, ys)


def streaming_times(instance: GpInstance) -> tuple[np.ndarray, np.ndarray]:
    """Per-arrival wall time for batch refits and for streaming updates.

    Entry ``k`` is the time spent when observation ``k + 1`` arrives.
    """
    sample = instance.sample
    n = len(sample)
    refit = np.empty(n)
    for k in range(n):
        t0 = time.perf_counter()
        batch_predictive(instance.prior, instance.test, sample[: k + 1])
        refit[k] = time.perf_counter() - t0
    stream = np.empty(n)
    gp = StreamingGp(instance.prior, instance.test)
    for k, (x, y) in enumerate(sample):
        t0 = time.perf_counter()
        gp.append(x, y)
        stream[k] = time.perf_counter() - t0
    return refit, stream


def crossover(refit_times: np.ndarray, stream_times: np.ndarray) -> int | None:
    """Smallest n from which cumulative streaming time stays below cumulative refit time."""
    ahead = np.cumsum(stream_times) < np.cumsum(refit_times)
    if not ahead.size or not ahead[-1]:
        return None
    behind = np.flatnonzero(~ahead)
    return int(behind[-1]) + 2 if behind.size else 1


BENCH_HEADER = ("n", "method", "median_s", "reps")


def benchmark(instance_for: Callable[[int], GpInstance], sizes: Iterable[int], repetitions: int) -> list[tuple]:
    """Median cumulative time to absorb a stream of ``n`` observations, per method.

    ``instance_for(n)`` must return a deterministic instance with ``n``
    training points.
    """
    sizes = list(sizes)
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly ascending")
    if repetitions < 1:
        raise ValueError("need at least one repetition")
    rows = []
    for n in sizes:
        inst = instance_for(n)
        refit_totals, stream_totals = [], []
        for _ in range(repetitions):
            refit, stream = streaming_times(inst)
            refit_totals.append(float(refit.sum()))
            stream_totals.append(float(stream.sum()))
        rows.append((n, "batch-refit", statistics.median(refit_totals), repetitions))
        rows.append((n, "recursive", statistics.median(stream_totals), repetitions))
    return rows
