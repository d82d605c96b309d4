"""Extension across an atomic part.

Split the atoms of a space into C and its complement D.  A sigma-field G on
C (with the renormalised measure P_C) extends to the full space as
``G uplus D``: the blocks of G plus D as one extra block, since no set of that
collection separates points of D.  Random variables extend by zero on D.
Conditional expectation then commutes with extension:

    E(1_C X | G uplus D) = 1_C E_C(X | G),

and squared L2 distances scale by P(C).  Fields and random variables "over
C" use local atom indices 0..|C|-1, in the order of ``SplitSpace.C``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .operators import InvariantError, Schedule, iterate
from .prob_space import ProbSpace, RandomVar, SigmaField, SpaceError, cond_exp, max_deviation

TRANSFER_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SplitSpace:
    base: ProbSpace
    C: tuple[int, ...]

    def __init__(self, base: ProbSpace, C: Iterable[int]):
        C = tuple(sorted(int(i) for i in C))
        n = base.atom_count
        if not C:
            raise SpaceError("C must contain at least one atom")
        if len(set(C)) != len(C):
            raise SpaceError("C lists an atom twice")
        if C[0] < 0 or C[-1] >= n:
            bad = C[0] if C[0] < 0 else C[-1]
            raise SpaceError(f"C contains atom {bad}, space has atoms 0..{n - 1}")
        if base.prob(C) <= 0:
            raise SpaceError("P(C) = 0")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "C", C)

    @cached_property
    def D(self) -> tuple[int, ...]:
        inC = set(self.C)
        return tuple(i for i in range(self.base.atom_count) if i not in inC)

    @property
    def p_C(self) -> float:
        return self.base.prob(self.C)

    @cached_property
    def atoms_of_D(self) -> tuple[tuple[int, ...], ...]:
        """Positive-probability atoms of D (kept as metadata only)."""
        w = self.base.weights
        return tuple((i,) for i in self.D if w[i] > 0)

    @cached_property
    def restricted(self) -> ProbSpace:
        return restrict(self)


def restrict(split: SplitSpace) -> ProbSpace:
    """Atoms of C with weights p_i / P(C)."""
    w = split.base.weights[list(split.C)]
    return ProbSpace(w / w.sum())


def _local_field(G, split: SplitSpace) -> SigmaField:
    """Accept a field over C (local indices) or a list of global-index blocks inside C."""
    m = len(split.C)
    if isinstance(G, SigmaField):
        if G.atom_count != m:
            raise SpaceError(f"field partitions {G.atom_count} atoms, C has {m}")
        return G
    pos = {a: j for j, a in enumerate(split.C)}
    local = []
    for bi, b in enumerate(G):
        lb = []
        for a in b:
            if int(a) not in pos:
                raise SpaceError(f"block {bi} contains atom {int(a)}, which is not in C")
            lb.append(pos[int(a)])
        local.append(lb)
    return SigmaField(local)


def uplus(G, split: SplitSpace) -> SigmaField:
    """Partition of the full space generating G uplus D."""
    G = _local_field(G, split)
    C = split.C
    blocks = [[C[i] for i in b] for b in G.blocks]
    if split.D:
        blocks.append(list(split.D))
    return SigmaField(blocks)


def _local_rv(X, split: SplitSpace) -> RandomVar:
    sp = split.restricted
    if isinstance(X, RandomVar):
        if len(X) != len(split.C):
            raise SpaceError(f"random variable has {len(X)} values, C has {len(split.C)} atoms")
        if X.space != sp:
            raise SpaceError("random variable is not defined on the restricted space of C")
        return X
    return RandomVar(X, sp)


def extend_rv(X, split: SplitSpace) -> RandomVar:
    """1_C X: the values of X on C, zero on D."""
    X = _local_rv(X, split)
    v = np.zeros(split.base.atom_count)
    v[list(split.C)] = X.values
    return RandomVar(v, split.base)


def verify_transfer(X, G, split: SplitSpace) -> float:
    """max over positive atoms of |E(1_C X | G uplus D) - 1_C E_C(X | G)|."""
    X = _local_rv(X, split)
    G = _local_field(G, split)
    lhs = cond_exp(extend_rv(X, split), uplus(G, split))
    rhs = extend_rv(cond_exp(X, G), split)
    return max_deviation(lhs, rhs, split.base)


def norm_transfer(Xn, Xm, split: SplitSpace, tol: float = TRANSFER_TOL) -> tuple[float, float]:
    """(||1_C Xn - 1_C Xm||_2^2, P(C) ||Xn - Xm||_{2,C}^2), checked equal.

    The comparison is relative: |full - restricted| <= tol * max(1, full).
    """
    Xn, Xm = _local_rv(Xn, split), _local_rv(Xm, split)
    full = (extend_rv(Xn, split) - extend_rv(Xm, split)).norm(2) ** 2
    restricted = split.p_C * (Xn - Xm).norm(2) ** 2
    if abs(full - restricted) > tol * max(1.0, abs(full)):
        raise InvariantError(f"norm transfer violated: {full!r} vs {restricted!r}")
    return full, restricted


def iteration_gap(Y0, fields: Sequence, schedule: Schedule, steps: int, split: SplitSpace) -> float:
    """Largest stepwise gap between iterating on C and iterating the extension.

    Runs Y_n = E_C(Y_{n-1} | C_{k_n}) on the restricted space and
    X_n = E(X_{n-1} | C_{k_n} uplus D) from X_0 = 1_C Y_0, and returns
    max_n max-deviation(X_n, 1_C Y_n) over positive atoms.
    """
    Y0 = _local_rv(Y0, split)
    local = [_local_field(g, split) for g in fields]
    lifted = [uplus(g, split) for g in local]
    ty = iterate(Y0, local, schedule, steps, store_iterates=True)
    tx = iterate(extend_rv(Y0, split), lifted, schedule, steps, store_iterates=True)
    ext = np.zeros_like(tx.iterates)
    ext[:, list(split.C)] = ty.iterates
    pos = split.base.positive
    gap = np.abs(tx.iterates - ext)[:, pos]
    return float(gap.max()) if gap.size else 0.0
