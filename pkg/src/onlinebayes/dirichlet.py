"""Dirichlet processes, their finite projections, and stick-breaking draws.

Numbers flow through with Python semantics: ints and Fractions stay exact,
so projections of atom measures or uniform bases with rational endpoints
are computed without rounding.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Hashable, Iterable, Sequence

import numpy as np
from scipy import special

from . import rng as rngmod

LOCATION_TOL = 1e-12


class UnsupportedBaseError(ValueError):
    """The diffuse base has no analytic cell probabilities."""


# diffuse bases


@dataclass(frozen=True)
class UniformBase:
    low: Real = 0
    high: Real = 1

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError("uniform base needs high > low")

    def cdf(self, x):
        if x == -math.inf:
            return 0
        if x == math.inf:
            return 1
        if x <= self.low:
            return 0
        if x >= self.high:
            return 1
        return (x - self.low) / (self.high - self.low)

    def from_normal(self, z: np.ndarray) -> np.ndarray:
        """Quantile transform of standard-normal draws."""
        return float(self.low) + float(self.high - self.low) * special.ndtr(z)

    def ppf(self, u: np.ndarray) -> np.ndarray:
        return float(self.low) + float(self.high - self.low) * np.asarray(u)

    def moments(self) -> tuple[float, float]:
        return float(self.low + self.high) / 2, float(self.high - self.low) ** 2 / 12


@dataclass(frozen=True)
class NormalBase:
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("normal base needs scale > 0")

    def cdf(self, x):
        if x == -math.inf:
            return 0.0
        if x == math.inf:
            return 1.0
        return float(special.ndtr((float(x) - self.loc) / self.scale))

    def from_normal(self, z: np.ndarray) -> np.ndarray:
        return self.loc + self.scale * np.asarray(z)

    def ppf(self, u: np.ndarray) -> np.ndarray:
        return self.loc + self.scale * special.ndtri(np.asarray(u))

    def moments(self) -> tuple[float, float]:
        return self.loc, self.scale**2


DiffuseBase = UniformBase | NormalBase


def base_from_spec(spec: dict) -> DiffuseBase:
    kind = spec.get("family")
    if kind == "uniform":
        return UniformBase(spec.get("low", 0), spec.get("high", 1))
    if kind == "normal":
        return NormalBase(spec.get("loc", 0.0), spec.get("scale", 1.0))
    raise UnsupportedBaseError(f"unsupported diffuse base {kind!r}")


# measures and partitions


def _same_location(a, b) -> bool:
    if isinstance(a, Real) and isinstance(b, Real) and not isinstance(a, bool):
        return abs(a - b) <= LOCATION_TOL
    return a == b


@dataclass(frozen=True)
class DirichletMeasure:
    """Finite base measure: weighted atoms plus an optional diffuse part."""

    atoms: tuple = ()
    diffuse: DiffuseBase | None = None
    diffuse_mass: Real = 0

    def __post_init__(self):
        merged: list[list] = []
        for loc, w in self.atoms:
            if not w > 0:
                raise ValueError(f"atom weight at {loc!r} must be positive")
            for entry in merged:
                if _same_location(entry[0], loc):
                    entry[1] += w
                    break
            else:
                merged.append([loc, w])
        object.__setattr__(self, "atoms", tuple((loc, w) for loc, w in merged))
        if self.diffuse_mass < 0:
            raise ValueError("diffuse mass must be nonnegative")
        if self.diffuse_mass > 0 and self.diffuse is None:
            raise ValueError("diffuse mass given without a diffuse base")
        if not self.total_mass > 0:
            raise ValueError("total mass must be positive")

    @classmethod
    def from_weights(cls, labels: Sequence[Hashable], weights: Sequence[Real]) -> "DirichletMeasure":
        return cls(tuple(zip(labels, weights)))

    @classmethod
    def diffuse_only(cls, base: DiffuseBase, mass: Real) -> "DirichletMeasure":
        return cls((), base, mass)

    @property
    def total_mass(self):
        return sum((w for _, w in self.atoms), 0) + self.diffuse_mass

    def weight_at(self, loc) -> Real:
        for a, w in self.atoms:
            if _same_location(a, loc):
                return w
        return 0


@dataclass(frozen=True)
class IntervalPartition:
    """Cells ``(-inf, c1), [c1, c2), ..., [c_{k-1}, inf)`` of the real line."""

    cuts: tuple = ()

    def __post_init__(self):
        cuts = tuple(self.cuts)
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ValueError("cut points must be strictly increasing")
        object.__setattr__(self, "cuts", cuts)

    @property
    def size(self) -> int:
        return len(self.cuts) + 1

    def cell_of(self, y) -> int:
        return bisect.bisect_right(self.cuts, y)

    def cells_of(self, ys: np.ndarray) -> np.ndarray:
        return np.searchsorted(np.asarray(self.cuts, dtype=np.float64), ys, side="right")

    def bounds(self, i: int) -> tuple:
        lo = self.cuts[i - 1] if i > 0 else -math.inf
        hi = self.cuts[i] if i < len(self.cuts) else math.inf
        return lo, hi

    def base_mass(self, base: DiffuseBase, i: int):
        lo, hi = self.bounds(i)
        return base.cdf(hi) - base.cdf(lo)


@dataclass(frozen=True)
class LabelPartition:
    """Disjoint label subsets covering a finite label space."""

    cells: tuple

    def __post_init__(self):
        cells = tuple(frozenset(c) for c in self.cells)
        if not cells or any(not c for c in cells):
            raise ValueError("need at least one nonempty cell")
        seen: set = set()
        for c in cells:
            if seen & c:
                raise ValueError("cells overlap")
            seen |= c
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "_lookup", {lab: i for i, c in enumerate(cells) for lab in c})

    @classmethod
    def singletons(cls, labels: Iterable[Hashable]) -> "LabelPartition":
        return cls(tuple(frozenset([lab]) for lab in labels))

    @property
    def size(self) -> int:
        return len(self.cells)

    def cell_of(self, y) -> int:
        try:
            return self._lookup[y]
        except KeyError:
            raise KeyError(f"label {y!r} is not covered by the partition") from None

    def cells_of(self, ys) -> np.ndarray:
        return np.array([self.cell_of(y) for y in ys], dtype=np.int64)

    def base_mass(self, base, i):
        raise UnsupportedBaseError("label partitions carry no diffuse mass")


Partition = IntervalPartition | LabelPartition


@dataclass(frozen=True)
class DirichletFinite:
    """Dirichlet distribution over partition cells.

    Zero entries are allowed and stand for cells that are almost surely empty.
    """

    params: tuple

    def __post_init__(self):
        params = tuple(self.params)
        if not params or any(p < 0 for p in params) or not sum(params) > 0:
            raise ValueError("Dirichlet parameters must be nonnegative with positive total")
        object.__setattr__(self, "params", params)

    @property
    def total(self):
        return sum(self.params)

    def mean(self) -> np.ndarray:
        b = np.asarray(self.params, dtype=np.float64)
        return b / b.sum()

    def var(self) -> np.ndarray:
        b = np.asarray(self.params, dtype=np.float64)
        s = b.sum()
        return b * (s - b) / (s**2 * (s + 1))


# operations


def dp_posterior(alpha: DirichletMeasure, observations: Iterable) -> DirichletMeasure:
    """Add a unit atom at every observation."""
    observations = list(observations)
    if not observations:
        return alpha
    return DirichletMeasure(alpha.atoms + tuple((y, 1) for y in observations), alpha.diffuse, alpha.diffuse_mass)


def project(alpha: DirichletMeasure, part: Partition) -> DirichletFinite:
    """Cellwise masses of the base measure."""
    params = [0] * part.size
    for loc, w in alpha.atoms:
        params[part.cell_of(loc)] += w
    if alpha.diffuse_mass:
        if isinstance(part, LabelPartition):
            raise UnsupportedBaseError("a diffuse base cannot be projected onto label cells")
        if not isinstance(alpha.diffuse, (UniformBase, NormalBase)):
            raise UnsupportedBaseError(f"no cell probabilities for {type(alpha.diffuse).__name__}")
        for i in range(part.size):
            params[i] += alpha.diffuse_mass * part.base_mass(alpha.diffuse, i)
    return DirichletFinite(tuple(params))


def count_update(d: DirichletFinite, cells: Iterable[int]) -> DirichletFinite:
    """Finite Dirichlet posterior: add one to each observed cell."""
    params = list(d.params)
    for c in cells:
        params[c] += 1
    return DirichletFinite(tuple(params))


def coarsen(d: DirichletFinite, mapping: Sequence[int]) -> DirichletFinite:
    """Aggregate cells: ``mapping[i]`` is the coarse cell receiving fine cell ``i``."""
    mapping = list(mapping)
    if len(mapping) != len(d.params):
        raise ValueError(f"mapping has {len(mapping)} entries for {len(d.params)} cells")
    k = max(mapping) + 1 if mapping else 0
    if min(mapping) < 0 or set(mapping) != set(range(k)):
        raise ValueError("mapping is not onto a contiguous set of coarse cells")
    params = [0] * k
    for p, c in zip(d.params, mapping):
        params[c] += p
    return DirichletFinite(tuple(params))


def refinement_map(fine: Partition, coarse: Partition) -> list[int]:
    """Coarse cell containing each fine cell; raises if ``fine`` does not refine ``coarse``."""
    if isinstance(fine, IntervalPartition) and isinstance(coarse, IntervalPartition):
        if not set(coarse.cuts) <= set(fine.cuts):
            raise ValueError("fine partition does not refine the coarse one")
        return [0] + [coarse.cell_of(c) for c in fine.cuts]
    if isinstance(fine, LabelPartition) and isinstance(coarse, LabelPartition):
        out = []
        for cell in fine.cells:
            targets = {coarse.cell_of(y) for y in cell}
            if len(targets) != 1:
                raise ValueError("fine cell straddles several coarse cells")
            out.append(targets.pop())
        return out
    raise ValueError("partitions are of different kinds")


def _diff(a, b):
    return abs(a - b)


@dataclass(frozen=True)
class ProjectiveReport:
    ok: bool
    max_deviation: Real
    checks: int

    def __bool__(self) -> bool:
        return self.ok


def check_projective(alpha: DirichletMeasure, chain: Sequence[Partition], observations: Sequence) -> ProjectiveReport:
    """Verify that conditioning commutes with projection and with coarsening.

    ``chain`` runs from coarsest to finest. At every level the projected DP
    posterior must equal the count update of the projected prior; for every
    adjacent pair, coarsening the fine posterior must equal the coarse
    posterior.
    """
    chain = list(chain)
    if not chain:
        raise ValueError("empty partition chain")
    maps = [refinement_map(f, c) for c, f in zip(chain, chain[1:])]
    post = dp_posterior(alpha, observations)
    worst: Real = 0
    checks = 0
    finite_post = []
    for part in chain:
        lhs = project(post, part)
        rhs = count_update(project(alpha, part), [part.cell_of(y) for y in observations])
        finite_post.append(rhs)
        worst = max([worst] + [_diff(a, b) for a, b in zip(lhs.params, rhs.params)])
        checks += 1
    for mapping, coarse_post, fine_post, coarse in zip(maps, finite_post, finite_post[1:], chain):
        via_fine = coarsen(fine_post, mapping)
        worst = max([worst] + [_diff(a, b) for a, b in zip(via_fine.params, coarse_post.params)])
        checks += 1
    exact = all(isinstance(p, (int, Fraction)) for d in finite_post for p in d.params)
    tol = 0 if exact else 1e-12 * float(post.total_mass)
    return ProjectiveReport(worst <= tol, worst, checks)


# stick breaking


def beta1_from_normal(z: np.ndarray, concentration) -> np.ndarray:
    """Beta(1, a) draws from standard-normal draws via the closed-form quantile.

    ``F(v) = 1 - (1 - v)**a``, and ``1 - Phi(z) = Phi(-z)`` keeps the upper tail accurate.
    """
    return -np.expm1(special.log_ndtr(-np.asarray(z)) / np.asarray(concentration, dtype=np.float64))


def stick_weights(v: np.ndarray) -> np.ndarray:
    """Stick-breaking weights along the last axis; the final stick takes the remainder."""
    v = np.array(v, dtype=np.float64, copy=True)
    v[..., -1] = 1.0
    remaining = np.cumprod(1.0 - v[..., :-1], axis=-1)
    w = v.copy()
    w[..., 1:] *= remaining
    return w


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    atoms: np.ndarray
    weights: np.ndarray

    def mass_in(self, part: Partition) -> np.ndarray:
        cells = part.cells_of(self.atoms)
        return np.bincount(cells, weights=self.weights, minlength=part.size)


def _atom_draws(alpha: DirichletMeasure, z: np.ndarray) -> np.ndarray:
    if not alpha.atoms:
        return alpha.diffuse.from_normal(z)
    total = float(alpha.total_mass)
    u = special.ndtr(z)
    edges = np.cumsum([float(w) / total for _, w in alpha.atoms])
    comp = np.searchsorted(edges, u, side="right")
    n_atoms = len(alpha.atoms)
    locs = [loc for loc, _ in alpha.atoms]
    numeric = all(isinstance(loc, Real) for loc in locs)
    out = np.empty(z.shape, dtype=np.float64 if numeric else object)
    for i, loc in enumerate(locs):
        out[comp == i] = loc
    if alpha.diffuse_mass:
        mask = comp >= n_atoms
        lo = edges[-1] if n_atoms else 0.0
        rescaled = np.clip((u[mask] - lo) / (1.0 - lo), 0.0, 1.0)
        out[mask] = alpha.diffuse.ppf(rescaled)
    else:
        # rounding can push u past the last edge
        out[comp >= n_atoms] = locs[-1]
    return out


def _stick_draws(alpha: DirichletMeasure, gen: np.random.Generator, shape: tuple) -> tuple[np.ndarray, np.ndarray]:
    z_v = gen.standard_normal(shape)
    z_theta = gen.standard_normal(shape)
    weights = stick_weights(beta1_from_normal(z_v, float(alpha.total_mass)))
    return _atom_draws(alpha, z_theta), weights


def stick_breaking_sample(alpha: DirichletMeasure, truncation: int, seed: int) -> DiscreteMeasure:
    """One truncated stick-breaking draw; residual mass goes to the last atom."""
    if truncation < 1:
        raise ValueError("truncation must be at least 1")
    atoms, weights = _stick_draws(alpha, rngmod.generator(seed), (truncation,))
    return DiscreteMeasure(atoms, weights)


def sample_projected(alpha: DirichletMeasure, part: Partition, truncation: int, reps: int, seed: int) -> np.ndarray:
    """``reps`` truncated draws projected onto ``part``: array of shape (reps, cells)."""
    out = np.empty((reps, part.size))
    row = 0
    for size, gen in rngmod.blocks(seed, reps):
        atoms, weights = _stick_draws(alpha, gen, (size, truncation))
        cells = part.cells_of(atoms.reshape(-1)).reshape(size, truncation)
        block = np.zeros((size, part.size))
        np.add.at(block, (np.repeat(np.arange(size), truncation), cells.reshape(-1)), weights.reshape(-1))
        out[row : row + size] = block
        row += size
    return out


def truncation_bias(mass: float, truncation: int) -> float:
    """Bound ``(M / (1 + M))**N`` on the truncation bias of an ``N``-stick draw."""
    return (float(mass) / (1.0 + float(mass))) ** truncation


def truncation_for(mass: float, bound: float) -> int:
    """Smallest truncation with ``(M / (1 + M))**N < bound``."""
    ratio = float(mass) / (1.0 + float(mass))
    return max(1, math.floor(math.log(bound) / math.log(ratio)) + 1)


def expected_stick_weights(mass: float, truncation: int) -> np.ndarray:
    m = float(mass)
    i = np.arange(truncation)
    w = (1.0 / (1.0 + m)) * (m / (1.0 + m)) ** i
    w[-1] = (m / (1.0 + m)) ** (truncation - 1)
    return w
