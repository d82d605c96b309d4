"""Finite probability spaces, sigma-fields as partitions, random variables.

A sub-sigma-field of a finite space is generated by a unique partition of the
atoms, so a :class:`SigmaField` stores only that partition (canonical block
order: by smallest member).  Conditional expectation puts the value 0 on
zero-probability blocks; that is the fixed representative of the a.s. class.

>>> sp = ProbSpace([0.2, 0.3, 0.5])
>>> X = RandomVar([1.0, 2.0, 3.0], sp)
>>> cond_exp(X, SigmaField([[0, 1], [2]])).values
array([1.6, 1.6, 3. ])
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import kernels

WEIGHT_TOL = 1e-12


class SpaceError(ValueError):
    """Invalid space, field or random variable, or a dimension mismatch."""


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def canonical_labels(labels) -> np.ndarray:
    """Relabel so block ids appear in order of their smallest atom."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return labels.astype(np.int64)
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inv.ravel()]


class ProbSpace:
    """Finite list of atoms with probability weights (zero weights allowed)."""

    def __init__(self, weights: Sequence[float]):
        w = np.array(weights, dtype=float).ravel()
        if w.size == 0:
            raise SpaceError("a probability space needs at least one atom")
        if not np.all(np.isfinite(w)):
            i = int(np.flatnonzero(~np.isfinite(w))[0])
            raise SpaceError(f"weights[{i}] = {w[i]} is not finite")
        if np.any(w < 0):
            i = int(np.flatnonzero(w < 0)[0])
            raise SpaceError(f"weights[{i}] = {w[i]} is negative")
        total = float(np.sum(w))
        if abs(total - 1.0) > WEIGHT_TOL:
            raise SpaceError(f"weights sum to {total!r}, not 1 (tolerance {WEIGHT_TOL})")
        w.setflags(write=False)
        self.weights = w

    @property
    def atom_count(self) -> int:
        return self.weights.size

    @cached_property
    def positive(self) -> np.ndarray:
        m = self.weights > 0
        m.setflags(write=False)
        return m

    def prob(self, atoms: Iterable[int]) -> float:
        return float(self.weights[list(atoms)].sum())

    def expect(self, values) -> float:
        return float(self.weights @ np.asarray(values, dtype=float))

    def norm(self, values, p=2.0) -> float:
        """L^p norm. The sup norm only looks at positive-probability atoms."""
        a = np.abs(np.asarray(values, dtype=float))
        if np.isinf(p):
            a = a[self.positive]
            return float(a.max()) if a.size else 0.0
        return float((self.weights @ a ** p) ** (1.0 / p))

    def __eq__(self, other):
        if not isinstance(other, ProbSpace):
            return NotImplemented
        return self is other or np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.weights.tobytes())

    def __repr__(self):
        return f"ProbSpace({self.weights.tolist()!r})"


@dataclass(frozen=True)
class SigmaField:
    """Partition of ``{0, ..., n-1}`` in canonical form.

    Blocks may be given in any order; they are sorted internally, so two
    fields compare equal iff they generate the same sigma-field.
    """

    blocks: tuple[tuple[int, ...], ...]

    def __init__(self, blocks: Iterable[Iterable[int]]):
        bl = [tuple(sorted(int(i) for i in b)) for b in blocks]
        seen = {}
        for bi, b in enumerate(bl):
            if not b:
                raise SpaceError(f"block {bi} is empty")
            for i in b:
                if i < 0:
                    raise SpaceError(f"block {bi}: atom index {i} is negative")
                if i in seen:
                    raise SpaceError(f"atom {i} appears in blocks {seen[i]} and {bi}")
                seen[i] = bi
        n = len(seen)
        missing = sorted(set(range(n)) - set(seen))
        if missing:
            raise SpaceError(f"atom {missing[0]} is not covered by any block")
        bl.sort(key=lambda b: b[0])
        object.__setattr__(self, "blocks", tuple(bl))

    @classmethod
    def from_labels(cls, labels) -> "SigmaField":
        labels = canonical_labels(labels)
        f = cls.__new__(cls)
        order = np.argsort(labels, kind="stable")
        splits = np.flatnonzero(np.diff(labels[order])) + 1
        object.__setattr__(f, "blocks", tuple(tuple(int(i) for i in g)
                                              for g in np.split(order, splits)))
        f.__dict__["labels"] = _frozen_int(labels)
        return f

    @classmethod
    def trivial(cls, n: int) -> "SigmaField":
        return cls([range(n)])

    @classmethod
    def finest(cls, n: int) -> "SigmaField":
        return cls([[i] for i in range(n)])

    @property
    def atom_count(self) -> int:
        return sum(len(b) for b in self.blocks)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @cached_property
    def labels(self) -> np.ndarray:
        lab = np.empty(self.atom_count, dtype=np.int64)
        for j, b in enumerate(self.blocks):
            lab[list(b)] = j
        return _frozen_int(lab)

    def is_coarser_than(self, other: "SigmaField") -> bool:
        """True if every block of ``other`` lies inside a block of ``self``."""
        _same_size(self, other)
        mine = self.labels
        return all(len({mine[i] for i in b}) == 1 for b in other.blocks)

    def block_probs(self, space: ProbSpace) -> np.ndarray:
        return np.bincount(self.labels, weights=space.weights, minlength=self.n_blocks)

    def __repr__(self):
        return f"SigmaField({[list(b) for b in self.blocks]})"


def _frozen_int(a):
    a = np.asarray(a, dtype=np.int64)
    a.setflags(write=False)
    return a


def _same_size(f: SigmaField, g: SigmaField):
    if f.atom_count != g.atom_count:
        raise SpaceError(f"fields on {f.atom_count} and {g.atom_count} atoms")


def _check_field(G: SigmaField, space: ProbSpace):
    if G.atom_count != space.atom_count:
        raise SpaceError(
            f"field partitions {G.atom_count} atoms but the space has {space.atom_count}")


@dataclass(frozen=True, eq=False)
class RandomVar:
    """A real value per atom of ``space``."""

    values: np.ndarray
    space: ProbSpace = field(repr=False)

    def __init__(self, values, space: ProbSpace):
        v = _readonly(values).ravel()
        if v.size != space.atom_count:
            raise SpaceError(f"random variable has {v.size} values, space has {space.atom_count} atoms")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "space", space)

    def mean(self) -> float:
        return self.space.expect(self.values)

    def var(self) -> float:
        c = self.values - self.mean()
        return self.space.expect(c * c)

    def cov(self, other: "RandomVar") -> float:
        return self.space.expect((self.values - self.mean()) * (other.values - other.mean()))

    def norm(self, p=2.0) -> float:
        return self.space.norm(self.values, p)

    def centered(self) -> "RandomVar":
        return RandomVar(self.values - self.mean(), self.space)

    def _wrap(self, other, op):
        o = other.values if isinstance(other, RandomVar) else other
        return RandomVar(op(self.values, o), self.space)

    def __add__(self, other):
        return self._wrap(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(other, np.subtract)

    def __rsub__(self, other):
        return self._wrap(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._wrap(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return RandomVar(-self.values, self.space)

    def __len__(self):
        return self.values.size


def constant(c: float, space: ProbSpace) -> RandomVar:
    return RandomVar(np.full(space.atom_count, float(c)), space)


def indicator(atoms: Iterable[int], space: ProbSpace) -> RandomVar:
    v = np.zeros(space.atom_count)
    v[list(atoms)] = 1.0
    return RandomVar(v, space)


def max_deviation(X, Y, space: ProbSpace | None = None) -> float:
    """max |X - Y| over positive-probability atoms ("a.s." sup distance)."""
    if space is None:
        space = X.space
    a = X.values if isinstance(X, RandomVar) else np.asarray(X, dtype=float)
    b = Y.values if isinstance(Y, RandomVar) else np.asarray(Y, dtype=float)
    return space.norm(a - b, np.inf)


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def cond_exp(X: RandomVar, G: SigmaField) -> RandomVar:
    """E(X | G) by block-wise weighted averaging; 0 on null blocks."""
    _check_field(G, X.space)
    out = kernels.block_average(np.ascontiguousarray(X.values), X.space.weights,
                                G.labels, G.n_blocks)
    return RandomVar(out, X.space)


def is_measurable(X: RandomVar, G: SigmaField, tol: float = 0.0) -> bool:
    """Constant (within ``tol``) on every positive-probability block of G."""
    _check_field(G, X.space)
    pos = X.space.positive
    for b in G.blocks:
        v = X.values[[i for i in b if pos[i]]]
        if v.size and v.max() - v.min() > tol:
            return False
    return True


def sigma_meet(fields: Sequence[SigmaField]) -> SigmaField:
    """Finest common coarsening: components of 'same block in some field'."""
    fields = list(fields)
    if not fields:
        raise SpaceError("sigma_meet of an empty list")
    for g in fields[1:]:
        _same_size(fields[0], g)
    lab = np.stack([g.labels for g in fields])
    return SigmaField.from_labels(kernels.components(lab, fields[0].atom_count))


def sigma_join(fields: Sequence[SigmaField]) -> SigmaField:
    """Common refinement: non-empty intersections of one block per field."""
    fields = list(fields)
    if not fields:
        raise SpaceError("sigma_join of an empty list")
    for g in fields[1:]:
        _same_size(fields[0], g)
    lab = np.stack([g.labels for g in fields], axis=1)
    _, inv = np.unique(lab, axis=0, return_inverse=True)
    return SigmaField.from_labels(inv.ravel())


def sigma_of_rv(X: RandomVar) -> SigmaField:
    """Level-set partition of X, exact equality of stored values."""
    _, inv = np.unique(X.values, return_inverse=True)
    return SigmaField.from_labels(inv.ravel())


def completion(G: SigmaField, space: ProbSpace) -> SigmaField:
    """Adjoin the null sets: every zero-probability atom becomes a singleton."""
    _check_field(G, space)
    null = ~space.positive
    if not null.any():
        return G
    lab = np.array(G.labels)
    lab[null] = G.n_blocks + np.arange(int(null.sum()))
    return SigmaField.from_labels(lab)


@dataclass(frozen=True)
class Classification:
    atomic_blocks: tuple[tuple[int, ...], ...]
    null_blocks: tuple[tuple[int, ...], ...]
    atomic_mass: float
    purely_atomic: bool


def classify(G: SigmaField, space: ProbSpace, tol: float = WEIGHT_TOL) -> Classification:
    """Atomic blocks of G and the purely-atomic verdict.

    On a finite space each positive-probability block is G-atomic, because
    the only G-measurable subsets of a block are itself and the empty set.
    """
    _check_field(G, space)
    probs = G.block_probs(space)
    atomic = tuple(b for b, q in zip(G.blocks, probs) if q > 0)
    null = tuple(b for b, q in zip(G.blocks, probs) if q <= 0)
    mass = float(probs[probs > 0].sum())
    return Classification(atomic, null, mass, abs(mass - 1.0) <= tol)
