"""Linear compatibility and deep uncorrelatedness on finite spaces.

X and Y are linearly compatible when E(Y|X) = aX + c and E(X|Y) = bY + d
a.s.  Everything here is exact on the given finite space; "a.s." means on
every positive-probability atom, up to a numeric tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .operators import InvariantError
from .prob_space import (
    ProbSpace, RandomVar, SigmaField, completion, cond_exp,
    indicator, max_deviation, sigma_join, sigma_meet, sigma_of_rv,
)

DEFAULT_TOL = 1e-10


class DegenerateError(ValueError):
    """The regressor is a.s. constant."""


def _positive_spread(X: RandomVar) -> float:
    v = X.values[X.space.positive]
    return float(v.max() - v.min()) if v.size else 0.0


def regress_ce(Y: RandomVar, X: RandomVar) -> tuple[float, float, float]:
    """Affine fit of E(Y|X) in L2(P): returns (a, c, residual).

    ``residual`` is max |E(Y|X) - (aX + c)| over positive-probability atoms,
    so residual 0 means E(Y|X) = aX + c a.s.
    """
    if _positive_spread(X) == 0.0:
        raise DegenerateError("Var(X) = 0: X is a.s. constant")
    e = cond_exp(Y, sigma_of_rv(X))
    # E(Y|X) and Y have the same covariance with X
    a = e.cov(X) / X.var()
    c = e.mean() - a * X.mean()
    resid = max_deviation(e.values, a * X.values + c, X.space)
    return float(a), float(c), resid


@dataclass(frozen=True)
class CompatReport:
    a: float
    b: float
    c: float
    d: float
    rho: float
    residual_Y_on_X: float
    residual_X_on_Y: float
    compatible: bool
    # clause name -> True/False when the clause's hypothesis holds, None otherwise
    checks: dict = field(default_factory=dict)

    @property
    def ab(self) -> float:
        return self.a * self.b

    def as_dict(self) -> dict:
        return {
            "a": self.a, "b": self.b, "c": self.c, "d": self.d, "ab": self.ab, "rho": self.rho,
            "residual_Y_on_X": self.residual_Y_on_X, "residual_X_on_Y": self.residual_X_on_Y,
            "compatible": self.compatible, "checks": dict(self.checks),
        }


def meet_of_pair(X: RandomVar, Y: RandomVar) -> SigmaField:
    sp = X.space
    return sigma_meet([completion(sigma_of_rv(X), sp), completion(sigma_of_rv(Y), sp)])


def compat_report(X: RandomVar, Y: RandomVar, tol: float = DEFAULT_TOL, *,
                  clause_tol: float | None = None, strict: bool = True) -> CompatReport:
    """Regress both ways and, for compatible pairs, check the consequences.

    ``tol`` decides compatibility (both residuals <= tol).  ``clause_tol``
    (default ``tol``) is used for the four consequences:

    (i)   |ab - rho^2| <= clause_tol and 0 <= ab <= 1 + clause_tol;
    (ii)  |ab - 1| <= clause_tol implies Y = aX + c a.s.;
    (iii) ab < 1 - clause_tol implies E(X | meet of completed sigma(X), sigma(Y)) = E(X);
    (iv)  |ab| <= clause_tol implies a, b both vanish; since a Var X = b Var Y,
          a^2 = ab Var Y / Var X, so the check is |a| <= sqrt(clause_tol Var Y / Var X)
          and symmetrically for b.

    With ``strict`` a failed consequence raises :class:`InvariantError`.
    Discretised continuous pairs want a loose ``tol`` and a tight ``clause_tol``.
    """
    ct = tol if clause_tol is None else clause_tol
    a, c, ry = regress_ce(Y, X)
    b, d, rx = regress_ce(X, Y)
    rho = X.cov(Y) / np.sqrt(X.var() * Y.var())
    ok = ry <= tol and rx <= tol
    checks = {"i": None, "ii": None, "iii": None, "iv": None}
    if ok:
        ab = a * b
        checks["i"] = bool(abs(ab - rho * rho) <= ct and -ct <= ab <= 1 + ct)
        if abs(ab - 1) <= ct:
            checks["ii"] = max_deviation(Y.values, a * X.values + c, X.space) <= ct
        if ab < 1 - ct:
            ex = cond_exp(X, meet_of_pair(X, Y))
            checks["iii"] = max_deviation(ex.values, np.full(len(X), X.mean()), X.space) <= ct
        if abs(ab) <= ct:
            vx, vy = X.var(), Y.var()
            checks["iv"] = bool(abs(a) <= np.sqrt(ct * vy / vx) * (1 + 1e-9)
                                and abs(b) <= np.sqrt(ct * vx / vy) * (1 + 1e-9))
    rep = CompatReport(a, b, c, d, float(rho), ry, rx, ok, checks)
    if strict:
        failed = [k for k, v in checks.items() if v is False]
        if failed:
            raise InvariantError(f"compatible pair violates clause(s) {failed}: {rep.as_dict()}")
    return rep


def is_deeply_uncorrelated(X: RandomVar, Y: RandomVar, tol: float = DEFAULT_TOL) -> bool:
    """E(X|Y) = E(X) and E(Y|X) = E(Y) within ``tol``."""
    return deep_uncorrelation_defect(X, Y) <= tol


def deep_uncorrelation_defect(X: RandomVar, Y: RandomVar) -> float:
    ex = cond_exp(X, sigma_of_rv(Y))
    ey = cond_exp(Y, sigma_of_rv(X))
    sp = X.space
    return max(max_deviation(ex.values, np.full(len(X), X.mean()), sp),
               max_deviation(ey.values, np.full(len(Y), Y.mean()), sp))


def independence_defect(X: RandomVar, Y: RandomVar, max_cells: int = 10**7) -> float:
    """Total-variation distance between the joint law of (X, Y) and the product of marginals.

    Zero iff X and Y are independent.
    """
    w = X.space.weights
    _, ix = np.unique(X.values, return_inverse=True)
    _, iy = np.unique(Y.values, return_inverse=True)
    ix, iy = ix.ravel(), iy.ravel()
    nx, ny = ix.max() + 1, iy.max() + 1
    if nx * ny > max_cells:
        raise ValueError(f"joint table would have {nx * ny} cells (limit {max_cells})")
    joint = np.bincount(ix * ny + iy, weights=w, minlength=nx * ny).reshape(nx, ny)
    prod = np.outer(joint.sum(1), joint.sum(0))
    return 0.5 * float(np.abs(joint - prod).sum())


# --------------------------------------------------------------------------
# families
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FamilyFit:
    coefficients: np.ndarray  # a_0 (intercept), a_1..a_n
    residual: float
    rank: int
    rank_deficient: bool
    holds: bool


def _level_join(family: Sequence[RandomVar]) -> SigmaField:
    return sigma_join([sigma_of_rv(X) for X in family])


def affine_fit(target: RandomVar, regressors: Sequence[RandomVar]):
    """Weighted least squares of ``target`` on [1, regressors]; returns (coef, rank)."""
    sp = target.space
    A = np.column_stack([np.ones(sp.atom_count)] + [X.values for X in regressors])
    r = np.sqrt(sp.weights)
    coef, _, rank, _ = np.linalg.lstsq(A * r[:, None], target.values * r, rcond=None)
    return coef, int(rank)


def family_compat(X0: RandomVar, family: Sequence[RandomVar], tol: float = DEFAULT_TOL) -> FamilyFit:
    """Does E(X0 | X_1..X_n) equal a_0 + sum a_i X_i a.s.?

    Collinear regressors make the coefficients non-unique; the fit then
    reports ``rank_deficient`` and returns the minimum-norm solution.
    """
    family = list(family)
    e = cond_exp(X0, _level_join(family)) if family else RandomVar(
        np.full(len(X0), X0.mean()), X0.space)
    coef, rank = affine_fit(e, family)
    fitted = np.column_stack([np.ones(len(X0))] + [X.values for X in family]) @ coef
    resid = max_deviation(e.values, fitted, X0.space)
    return FamilyFit(coef, resid, rank, rank < len(family) + 1, resid <= tol)


def nested_ce_sequence(X0: RandomVar, family: Sequence[RandomVar]) -> list[RandomVar]:
    """M_n = E(X0 | X_1..X_n) for n = 1..len(family)."""
    out = []
    fields = []
    for X in family:
        fields.append(sigma_of_rv(X))
        out.append(cond_exp(X0, sigma_join(fields)))
    return out


def martingale_check(family: Sequence[RandomVar], tol: float = DEFAULT_TOL) -> bool:
    """Partial sums Y_n = X_0 + ... + X_n satisfy E(Y_{n+1} | X_0..X_n) = Y_n."""
    family = list(family)
    if any(abs(X.mean()) > tol for X in family):
        raise ValueError("martingale_check expects centred random variables")
    partial = np.cumsum([X.values for X in family], axis=0) if family else np.zeros((0, 0))
    fields = []
    sp = family[0].space if family else None
    for n in range(len(family) - 1):
        fields.append(sigma_of_rv(family[n]))
        nxt = cond_exp(RandomVar(partial[n + 1], sp), sigma_join(fields))
        if max_deviation(nxt.values, partial[n], sp) > tol:
            return False
    return True


# --------------------------------------------------------------------------
# counterexamples and constructors
# --------------------------------------------------------------------------

def two_point_pair(p00: float, p01: float, p10: float, p11: float,
                   x=(0.0, 1.0), y=(0.0, 1.0)) -> tuple[RandomVar, RandomVar]:
    """Pair with two-point marginals on the 4-atom space (00, 01, 10, 11)."""
    sp = ProbSpace([p00, p01, p10, p11])
    X = RandomVar([x[0], x[0], x[1], x[1]], sp)
    Y = RandomVar([y[0], y[1], y[0], y[1]], sp)
    return X, Y


def symmetric_sign_pair(rho: float) -> tuple[RandomVar, RandomVar]:
    """X, Y in {-1, 1} with symmetric marginals and correlation rho, so a = b = rho."""
    same = (1 + rho) / 4
    diff = (1 - rho) / 4
    return two_point_pair(same, diff, diff, same, x=(-1.0, 1.0), y=(-1.0, 1.0))


@dataclass(frozen=True)
class IndicatorExample:
    X: RandomVar
    Y: RandomVar
    p_A: float
    p_AB: float
    A: tuple = (0, 1)
    B: tuple = (1, 2)


def indicator_counterexample(p=(0.2, 0.1, 0.2, 0.5)) -> IndicatorExample:
    """Atoms (A\\B, A&B, B\\A, outside); X = 1_{A u B}, Y = 1_A - 1_B.

    Uncorrelated but not deeply uncorrelated whenever P(A) = P(B) > 0 and
    P(A & B) < P(A u B) < 1.
    """
    sp = ProbSpace(p)
    A, B = (0, 1), (1, 2)
    X = indicator((0, 1, 2), sp)
    Y = indicator(A, sp) - indicator(B, sp)
    return IndicatorExample(X, Y, sp.prob(A), sp.prob((1,)))


def disc_grid(N: int) -> tuple[RandomVar, RandomVar]:
    """Uniform law on the N x N cell-centre grid of [-1, 1]^2 restricted to the unit disc."""
    g = -1.0 + (np.arange(N) + 0.5) * (2.0 / N)
    gx, gy = np.meshgrid(g, g, indexing="ij")
    inside = gx * gx + gy * gy <= 1.0
    n = int(inside.sum())
    sp = ProbSpace(np.full(n, 1.0 / n) if n else [1.0])
    # renormalise exactly: the float sum of n copies of 1/n is within 1e-12 for n <= 1e7
    return RandomVar(gx[inside], sp), RandomVar(gy[inside], sp)
