"""Finite probability spaces and Markov kernels.

Two scalar modes are supported. Exact mode stores weights as numpy object
arrays of ``gmpy2.mpq`` rationals; float mode stores ``float64`` arrays.
Plain ints and :class:`fractions.Fraction` values are accepted as exact input.
Every operation accepts either; mixing the two coerces to float.

Product spaces are flattened row-major (C order) with factor order equal to
argument order, so the label of flat index ``i`` in ``A x B`` is
``(A[i // |B|], B[i % |B|])``.
"""

from __future__ import annotations

import enum
import functools
import itertools
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Hashable, Iterable, Sequence

import numpy as np
from gmpy2 import mpq

FLOAT_TOL = 1e-12


class ShapeError(ValueError):
    """Dimensions or spaces of two objects do not line up."""


class ScalarMode(str, enum.Enum):
    EXACT = "exact-rational"
    FLOAT = "float64"


def to_rational(value: Any) -> mpq:
    if isinstance(value, type(mpq())):
        return value
    if isinstance(value, (int, np.integer)):
        return mpq(int(value))
    if isinstance(value, (float, np.floating)):
        # shortest repr, so 0.2 becomes 1/5 rather than its binary expansion
        return mpq(repr(float(value)))
    if isinstance(value, Fraction):
        return mpq(value.numerator, value.denominator)
    return mpq(value)


def as_weights(values: Any, mode: ScalarMode | str | None = None) -> np.ndarray:
    """Coerce ``values`` to a weight array in the requested mode.

    With ``mode=None`` the mode is inferred: arrays already holding rationals
    (or object dtype) stay exact, everything else becomes float64.
    """
    if mode is not None:
        mode = ScalarMode(mode)
    arr = np.asarray(values, dtype=object if _looks_exact(values) else None)
    if mode is None:
        mode = ScalarMode.EXACT if arr.dtype == object else ScalarMode.FLOAT
    if mode is ScalarMode.EXACT:
        out = np.empty(arr.shape, dtype=object)
        flat = out.reshape(-1)
        for i, v in enumerate(arr.reshape(-1)):
            flat[i] = to_rational(v)
        return out
    return np.asarray(arr, dtype=np.float64)


def _looks_exact(values: Any) -> bool:
    if isinstance(values, np.ndarray):
        return values.dtype == object
    if isinstance(values, (Fraction, type(mpq()))):
        return True
    if isinstance(values, (list, tuple)):
        return any(_looks_exact(v) for v in values)
    return False


def mode_of(arr: np.ndarray) -> ScalarMode:
    return ScalarMode.EXACT if arr.dtype == object else ScalarMode.FLOAT


def _common(*arrays: np.ndarray) -> list[np.ndarray]:
    if all(a.dtype == object for a in arrays):
        return list(arrays)
    return [np.asarray(a, dtype=np.float64) for a in arrays]


def _zero_like(arr: np.ndarray):
    return mpq(0) if arr.dtype == object else 0.0


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=arr.dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_probability(weights: np.ndarray, what: str) -> None:
    if weights.dtype == object:
        if any(w < 0 for w in weights.reshape(-1)):
            raise ValueError(f"{what}: negative weight")
        total = sum(weights.reshape(-1), mpq(0))
        if total != 1:
            raise ValueError(f"{what}: weights sum to {total}, not 1")
    else:
        if not np.all(np.isfinite(weights)):
            raise ValueError(f"{what}: non-finite weight")
        if np.any(weights < 0):
            raise ValueError(f"{what}: negative weight")
        total = float(weights.sum())
        if abs(total - 1.0) > FLOAT_TOL * max(1, weights.size):
            raise ValueError(f"{what}: weights sum to {total!r}, not 1")


def _unchecked(cls, **fields):
    """Build a value whose invariants hold by construction, skipping validation."""
    obj = object.__new__(cls)
    for name, value in fields.items():
        if isinstance(value, np.ndarray):
            value.setflags(write=False)
        object.__setattr__(obj, name, value)
    return obj


def max_abs_diff(a: np.ndarray, b: np.ndarray):
    """Largest elementwise |a - b|; an exact rational when both sides are exact."""
    a, b = _common(np.asarray(a), np.asarray(b))
    if a.shape != b.shape:
        raise ShapeError(f"shape {a.shape} vs {b.shape}")
    if a.size == 0:
        return _zero_like(a)
    diff = np.abs(a - b).reshape(-1)
    return max(diff) if a.dtype == object else float(diff.max())


@dataclass(frozen=True, eq=False)
class FiniteSpace:
    """Ordered set of distinct labels; label order fixes coordinate indices."""

    labels: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if not labels:
            raise ValueError("a finite space needs at least one label")
        index = {lab: i for i, lab in enumerate(labels)}
        if len(index) != len(labels):
            raise ValueError(f"duplicate labels in {labels!r}")
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_hash", hash(labels))

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, FiniteSpace):
            return NotImplemented
        return self._hash == other._hash and self.labels == other.labels

    def __hash__(self) -> int:
        return self._hash

    @classmethod
    def of_size(cls, n: int, prefix: str = "") -> "FiniteSpace":
        return cls(tuple(f"{prefix}{i}" if prefix else i for i in range(n)))

    @classmethod
    def product(cls, *spaces: "FiniteSpace") -> "FiniteSpace":
        return _product_space(spaces)

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label: Hashable) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"label {label!r} not in space") from None

    def __contains__(self, label) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self.labels)


@functools.lru_cache(maxsize=256)
def _product_space(spaces: tuple) -> FiniteSpace:
    return FiniteSpace(tuple(itertools.product(*(s.labels for s in spaces))))


@dataclass(frozen=True, eq=False)
class Dist:
    space: FiniteSpace
    weights: np.ndarray

    def __post_init__(self):
        w = as_weights(self.weights) if not isinstance(self.weights, np.ndarray) else self.weights
        if w.dtype != object:
            w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.space.size,):
            raise ShapeError(f"{w.shape} weights for a space of size {self.space.size}")
        _check_probability(w, "Dist")
        object.__setattr__(self, "weights", _freeze(w))

    @classmethod
    def dirac(cls, space: FiniteSpace, label, mode=ScalarMode.EXACT) -> "Dist":
        w = [0] * space.size
        w[space.index(label)] = 1
        return cls(space, as_weights(w, mode))

    @classmethod
    def uniform(cls, space: FiniteSpace, mode=ScalarMode.EXACT) -> "Dist":
        n = space.size
        if ScalarMode(mode) is ScalarMode.EXACT:
            return cls(space, as_weights([mpq(1, n)] * n, mode))
        return cls(space, np.full(n, 1.0 / n))

    @property
    def mode(self) -> ScalarMode:
        return mode_of(self.weights)

    def __getitem__(self, label):
        return self.weights[self.space.index(label)]

    def to_float(self) -> "Dist":
        return Dist(self.space, as_weights(self.weights, ScalarMode.FLOAT))

    def __repr__(self) -> str:
        pairs = ", ".join(f"{lab!r}: {w}" for lab, w in zip(self.space.labels, self.weights))
        return f"Dist({{{pairs}}})"


@dataclass(frozen=True, eq=False)
class FiniteKernel:
    """Row-stochastic matrix: row ``i`` is the distribution at ``source.labels[i]``."""

    source: FiniteSpace
    target: FiniteSpace
    rows: np.ndarray

    def __post_init__(self):
        r = self.rows if isinstance(self.rows, np.ndarray) else as_weights(self.rows)
        if r.dtype != object:
            r = np.asarray(r, dtype=np.float64)
        if r.shape != (self.source.size, self.target.size):
            raise ShapeError(
                f"rows of shape {r.shape} for a {self.source.size}x{self.target.size} kernel"
            )
        for i, row in enumerate(r):
            _check_probability(row, f"kernel row {self.source.labels[i]!r}")
        object.__setattr__(self, "rows", _freeze(r))

    @classmethod
    def identity(cls, space: FiniteSpace, mode=ScalarMode.EXACT) -> "FiniteKernel":
        eye = [[int(i == j) for j in range(space.size)] for i in range(space.size)]
        return cls(space, space, as_weights(eye, mode))

    @classmethod
    def deterministic(
        cls, source: FiniteSpace, target: FiniteSpace, f: Callable, mode=ScalarMode.EXACT
    ) -> "FiniteKernel":
        rows = [[0] * target.size for _ in range(source.size)]
        for i, x in enumerate(source.labels):
            rows[i][target.index(f(x))] = 1
        return cls(source, target, as_weights(rows, mode))

    @classmethod
    def constant(cls, source: FiniteSpace, dist: Dist) -> "FiniteKernel":
        rows = np.stack([dist.weights] * source.size)
        return cls(source, dist.space, rows)

    @classmethod
    def from_rows(cls, source: FiniteSpace, dists: Sequence[Dist]) -> "FiniteKernel":
        if len(dists) != source.size:
            raise ShapeError(f"{len(dists)} rows for a source of size {source.size}")
        target = dists[0].space
        if any(d.space != target for d in dists):
            raise ShapeError("rows live on different target spaces")
        rows = np.stack(_common(*(d.weights for d in dists)))
        return cls(source, target, rows)

    @property
    def mode(self) -> ScalarMode:
        return mode_of(self.rows)

    def row(self, label) -> Dist:
        return _unchecked(Dist, space=self.target, weights=self.rows[self.source.index(label)])

    def to_float(self) -> "FiniteKernel":
        return FiniteKernel(self.source, self.target, as_weights(self.rows, ScalarMode.FLOAT))


@dataclass(frozen=True, eq=False)
class JointDist:
    """Distribution on a product of finite spaces.

    ``weights`` has one axis per factor; ``flat`` is its row-major flattening,
    which lines up with ``FiniteSpace.product(*factors)``.
    """

    factors: tuple
    weights: np.ndarray

    def __post_init__(self):
        factors = tuple(self.factors)
        if not factors:
            raise ValueError("a joint distribution needs at least one factor")
        object.__setattr__(self, "factors", factors)
        w = self.weights if isinstance(self.weights, np.ndarray) else as_weights(self.weights)
        if w.dtype != object:
            w = np.asarray(w, dtype=np.float64)
        shape = tuple(f.size for f in factors)
        if w.shape != shape:
            if w.size != int(np.prod(shape)):
                raise ShapeError(f"{w.shape} weights for factors of sizes {shape}")
            w = w.reshape(shape)
        _check_probability(w, "JointDist")
        object.__setattr__(self, "weights", _freeze(w))

    @classmethod
    def from_dist(cls, dist: Dist, factors: Sequence[FiniteSpace]) -> "JointDist":
        factors = tuple(factors)
        if FiniteSpace.product(*factors) != dist.space and len(factors) > 1:
            raise ShapeError("distribution does not live on the product of the factors")
        shape = tuple(f.size for f in factors)
        return _unchecked(cls, factors=factors, weights=dist.weights.reshape(shape))

    @property
    def flat(self) -> np.ndarray:
        return self.weights.reshape(-1)

    @property
    def mode(self) -> ScalarMode:
        return mode_of(self.weights)

    def as_dist(self) -> Dist:
        return _unchecked(Dist, space=FiniteSpace.product(*self.factors), weights=self.flat)


def total_mass(obj: Dist | JointDist | np.ndarray):
    w = obj if isinstance(obj, np.ndarray) else obj.weights
    flat = w.reshape(-1)
    return sum(flat, mpq(0)) if w.dtype == object else float(flat.sum())


# operations


def compose_kernels(k2: FiniteKernel, k1: FiniteKernel) -> FiniteKernel:
    """``k2 o k1``: first apply ``k1`` (X -> Y), then ``k2`` (Y -> Z)."""
    if k1.target != k2.source:
        raise ShapeError(
            f"cannot compose: k1 lands in a space of size {k1.target.size}, "
            f"k2 starts from size {k2.source.size}"
        )
    a, b = _common(k1.rows, k2.rows)
    return _unchecked(FiniteKernel, source=k1.source, target=k2.target, rows=a @ b)


def pushforward(k: FiniteKernel, mu: Dist) -> Dist:
    if mu.space != k.source:
        raise ShapeError("distribution does not live on the kernel's source space")
    w, rows = _common(mu.weights, k.rows)
    return _unchecked(Dist, space=k.target, weights=w @ rows)


def product_kernel(kernels: Sequence[FiniteKernel]) -> FiniteKernel:
    """Row-wise tensor product of kernels sharing a common source."""
    kernels = list(kernels)
    if not kernels:
        raise ValueError("product_kernel needs at least one kernel")
    source = kernels[0].source
    if any(k.source != source for k in kernels):
        raise ShapeError("kernels do not share a common source")
    if len(kernels) == 1:
        return kernels[0]
    mats = _common(*(k.rows for k in kernels))
    rows = mats[0]
    for m in mats[1:]:
        # row-major: the later factor varies fastest
        rows = (rows[:, :, None] * m[:, None, :]).reshape(rows.shape[0], -1)
    target = FiniteSpace.product(*(k.target for k in kernels))
    return _unchecked(FiniteKernel, source=source, target=target, rows=rows)


def graph_joint(k: FiniteKernel, mu: Dist) -> JointDist:
    """Joint law of ``(x, y)`` with ``x ~ mu`` and ``y | x ~ k(x)``."""
    if mu.space != k.source:
        raise ShapeError("distribution does not live on the kernel's source space")
    w, rows = _common(mu.weights, k.rows)
    return _unchecked(JointDist, factors=(k.source, k.target), weights=w[:, None] * rows)


def extend_joint(j: JointDist, k: FiniteKernel, axis: int) -> JointDist:
    """Append a new last factor drawn from ``k`` applied to factor ``axis``."""
    if not 0 <= axis < len(j.factors):
        raise IndexError(f"axis {axis} out of range")
    if j.factors[axis] != k.source:
        raise ShapeError("kernel source does not match the chosen factor")
    w, rows = _common(j.weights, k.rows)
    shape = [1] * (len(j.factors) + 1)
    shape[axis] = k.source.size
    shape[-1] = k.target.size
    new = w[..., None] * rows.reshape(shape)
    return _unchecked(JointDist, factors=j.factors + (k.target,), weights=new)


def swap_joint(j: JointDist) -> JointDist:
    if len(j.factors) != 2:
        raise ShapeError(f"swap needs exactly two factors, got {len(j.factors)}")
    return _unchecked(JointDist, factors=(j.factors[1], j.factors[0]), weights=j.weights.T)


def marginalize(j: JointDist, keep: Iterable[int]) -> JointDist | Dist:
    """Sum out every axis not in ``keep``; result axes follow ``keep`` order.

    Keeping a single axis returns a :class:`Dist`.
    """
    keep = list(keep)
    if not keep:
        raise ValueError("keep must name at least one axis")
    n = len(j.factors)
    if len(set(keep)) != len(keep) or any(not 0 <= a < n for a in keep):
        raise IndexError(f"invalid axes {keep} for {n} factors")
    drop = tuple(a for a in range(n) if a not in keep)
    w = j.weights
    if drop:
        w = w.sum(axis=drop)
    remaining = [a for a in range(n) if a in keep]
    perm = [remaining.index(a) for a in keep]
    w = np.transpose(w, perm) if perm != sorted(perm) else w
    if len(keep) == 1:
        return _unchecked(Dist, space=j.factors[keep[0]], weights=np.asarray(w).reshape(-1))
    return _unchecked(JointDist, factors=tuple(j.factors[a] for a in keep), weights=w)


# serialization


def _label_out(label):
    return list(_label_out(x) for x in label) if isinstance(label, tuple) else label


def _label_in(label):
    return tuple(_label_in(x) for x in label) if isinstance(label, list) else label


def _weights_out(w: np.ndarray) -> list:
    if w.dtype == object:
        return [str(x) for x in w.reshape(-1)]
    return [float(x) for x in w.reshape(-1)]


def _weights_in(values: list, mode: str) -> np.ndarray:
    return as_weights(values if mode == ScalarMode.FLOAT.value else [mpq(v) for v in values], mode)


def _space_out(space: FiniteSpace) -> list:
    return [_label_out(lab) for lab in space.labels]


def _space_in(labels: list) -> FiniteSpace:
    return FiniteSpace(tuple(_label_in(lab) for lab in labels))


def to_document(obj) -> dict:
    """Plain-dict form of a space, distribution, kernel or joint."""
    if isinstance(obj, FiniteSpace):
        return {"type": "space", "labels": _space_out(obj)}
    if isinstance(obj, Dist):
        return {
            "type": "dist",
            "mode": obj.mode.value,
            "labels": _space_out(obj.space),
            "weights": _weights_out(obj.weights),
        }
    if isinstance(obj, FiniteKernel):
        return {
            "type": "kernel",
            "mode": obj.mode.value,
            "source": _space_out(obj.source),
            "target": _space_out(obj.target),
            "rows": [_weights_out(r) for r in obj.rows],
        }
    if isinstance(obj, JointDist):
        return {
            "type": "joint",
            "mode": obj.mode.value,
            "factors": [_space_out(f) for f in obj.factors],
            "weights": _weights_out(obj.weights),
        }
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def from_document(doc: dict):
    kind = doc.get("type")
    if kind == "space":
        return _space_in(doc["labels"])
    mode = doc.get("mode", ScalarMode.EXACT.value)
    if kind == "dist":
        return Dist(_space_in(doc["labels"]), _weights_in(doc["weights"], mode))
    if kind == "kernel":
        rows = np.stack([_weights_in(r, mode) for r in doc["rows"]]) if doc["rows"] else None
        return FiniteKernel(_space_in(doc["source"]), _space_in(doc["target"]), rows)
    if kind == "joint":
        factors = tuple(_space_in(f) for f in doc["factors"])
        return JointDist(factors, _weights_in(doc["weights"], mode))
    raise ValueError(f"unknown document type {kind!r}")


def dumps(obj) -> str:
    return json.dumps(to_document(obj), indent=2)


def loads(text: str):
    return from_document(json.loads(text))
