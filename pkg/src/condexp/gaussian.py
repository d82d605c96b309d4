"""Finite Gaussian Hilbert spaces in covariance coordinates.

A :class:`GaussianSpace` is a centred jointly Gaussian vector Z = (Z_1..Z_d)
with covariance Sigma.  An element sum_i u_i Z_i of its linear span is stored
as the coefficient vector u, and <u, v> = u^T Sigma v is the L2 inner
product.  Conditional expectation given span elements is orthogonal
projection in this geometry, so the core identities need no sampling;
:func:`discretize` builds a finite probability space only to cross-check
that correspondence independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .operators import (
    CSV_COLUMNS, DEFAULT_EPS, InvariantError, Schedule, ScheduleError, write_trajectory_csv,
)
from .prob_space import ProbSpace, RandomVar, cond_exp, sigma_join, sigma_of_rv

SYM_TOL = 1e-12
PSD_TOL = 1e-10
ORTH_TOL = 1e-10
# Relative eigenvalue cut-off deciding the rank of Gram matrices.
RANK_RTOL = 1e-10


class GaussianError(ValueError):
    pass


class GaussianSpace:
    """Centred Gaussian vector with covariance ``cov``."""

    def __init__(self, cov):
        S = np.array(cov, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] == 0:
            raise GaussianError(f"covariance must be a non-empty square matrix, got shape {S.shape}")
        if not np.all(np.isfinite(S)):
            raise GaussianError("covariance has non-finite entries")
        asym = np.abs(S - S.T).max()
        if asym > SYM_TOL:
            i, j = np.unravel_index(np.argmax(np.abs(S - S.T)), S.shape)
            raise GaussianError(f"covariance not symmetric: |S[{i},{j}] - S[{j},{i}]| = {asym:.3g}")
        S = 0.5 * (S + S.T)
        lam, U = np.linalg.eigh(S)
        if lam[0] < -PSD_TOL:
            raise GaussianError(f"covariance has eigenvalue {lam[0]:.3g} < -{PSD_TOL}")
        if lam[0] < 0:
            # clip rounding noise
            S = (U * np.clip(lam, 0, None)) @ U.T
            S = 0.5 * (S + S.T)
        S.setflags(write=False)
        self.cov = S

    @property
    def dim(self) -> int:
        return self.cov.shape[0]

    def inner(self, u, v) -> float:
        return float(np.asarray(u, float) @ self.cov @ np.asarray(v, float))

    def norm(self, u) -> float:
        return float(np.sqrt(max(self.inner(u, u), 0.0)))

    def gram(self, rows) -> np.ndarray:
        B = np.atleast_2d(np.asarray(rows, float))
        return B @ self.cov @ B.T

    def check_vector(self, u) -> np.ndarray:
        u = np.asarray(u, float).ravel()
        if u.size != self.dim:
            raise GaussianError(f"coefficient vector has length {u.size}, space has dimension {self.dim}")
        return u


def _orthonormal_rows(space: GaussianSpace, B: np.ndarray) -> np.ndarray:
    """Rows spanning the same subspace as B, orthonormal for <.,.>."""
    if B.shape[0] == 0:
        return np.zeros((0, space.dim))
    G = space.gram(B)
    lam, U = np.linalg.eigh(0.5 * (G + G.T))
    top = lam.max() if lam.size else 0.0
    keep = lam > RANK_RTOL * max(top, 1.0) if top > 0 else np.zeros(lam.size, bool)
    return (U[:, keep] / np.sqrt(lam[keep])).T @ B


class Subspace:
    """Linear span of coefficient vectors (the rows of ``basis``)."""

    def __init__(self, space: GaussianSpace, basis):
        B = np.array(basis, dtype=float)
        if B.ndim == 1:
            B = B[None, :] if B.size else np.zeros((0, space.dim))
        if B.ndim != 2 or (B.shape[0] and B.shape[1] != space.dim):
            raise GaussianError(f"basis rows must have length {space.dim}, got shape {B.shape}")
        if not np.all(np.isfinite(B)):
            raise GaussianError("basis has non-finite entries")
        B.setflags(write=False)
        self.space = space
        self.basis = B

    @cached_property
    def orthonormal(self) -> np.ndarray:
        Q = _orthonormal_rows(self.space, self.basis)
        Q.setflags(write=False)
        return Q

    @property
    def rank(self) -> int:
        return self.orthonormal.shape[0]

    @cached_property
    def projector(self) -> np.ndarray:
        """Matrix P with P u = projection of u, in coefficient coordinates."""
        Q = self.orthonormal
        P = Q.T @ (Q @ self.space.cov)
        P.setflags(write=False)
        return P

    def __repr__(self):
        return f"Subspace(rank={self.rank}, dim={self.space.dim})"


def _same_space(*subs: Subspace):
    sp = subs[0].space
    for s in subs[1:]:
        if s.space is not sp and not np.array_equal(s.space.cov, sp.cov):
            raise GaussianError("subspaces live in different Gaussian spaces")
    return sp


@dataclass(frozen=True)
class Projection:
    vector: np.ndarray  # projection in coefficient coordinates
    coefficients: np.ndarray  # alpha with vector = basis^T alpha (minimum-norm)
    rank: int
    rank_deficient: bool


def project_coefficients(u, V: Subspace) -> Projection:
    """Solve the Gram system (B Sigma B^T) alpha = B Sigma u by pseudo-inverse."""
    sp = V.space
    u = sp.check_vector(u)
    B = V.basis
    if B.shape[0] == 0:
        return Projection(np.zeros(sp.dim), np.zeros(0), 0, False)
    G = sp.gram(B)
    rhs = B @ sp.cov @ u
    alpha = np.linalg.pinv(G, rcond=RANK_RTOL, hermitian=True) @ rhs
    vec = B.T @ alpha
    resid = u - vec
    scale = max(1.0, sp.norm(u)) * max(1.0, float(np.sqrt(np.abs(np.diag(G)).max())))
    orth = np.abs(B @ sp.cov @ resid).max()
    if orth > ORTH_TOL * scale:
        raise InvariantError(f"projection residual not orthogonal to the basis: {orth:.3g}")
    return Projection(vec, alpha, V.rank, V.rank < B.shape[0])


def project(u, V: Subspace) -> np.ndarray:
    """Orthogonal projection of u onto V (coefficient coordinates)."""
    return project_coefficients(u, V).vector


# --------------------------------------------------------------------------
# discretisation oracle
# --------------------------------------------------------------------------

TRUNCATION_SD = 5.0
MAX_GRID_POINTS = 10**7


@dataclass(eq=False)
class Discretization:
    """Finite approximation of the joint law of some span elements.

    ``points`` holds the grid in the coordinates of the ``independent``
    subset of the input vectors; every other span element is a linear
    function of those coordinates (see :meth:`values`).
    """

    gspace: GaussianSpace
    vectors: np.ndarray
    independent: tuple[int, ...]
    points: np.ndarray
    space: ProbSpace
    N: int

    def coordinates_of(self, w) -> np.ndarray:
        """beta with  w = sum_j beta_j vectors[independent[j]]  in L2."""
        w = self.gspace.check_vector(w)
        A = self.vectors[list(self.independent)]
        G = self.gspace.gram(A)
        beta = np.linalg.solve(G, A @ self.gspace.cov @ w)
        miss = self.gspace.norm(w - A.T @ beta)
        if miss > ORTH_TOL * max(1.0, self.gspace.norm(w)):
            raise GaussianError(f"vector is not in the discretised span (distance {miss:.3g})")
        return beta

    def values(self, w) -> np.ndarray:
        return self.points @ self.coordinates_of(w)

    def rv(self, i: int) -> RandomVar:
        """Random variable for the i-th input vector (exact grid axis if independent)."""
        if i in self.independent:
            return RandomVar(self.points[:, self.independent.index(i)], self.space)
        return RandomVar(self.values(self.vectors[i]), self.space)


def _independent_subset(gs: GaussianSpace, A: np.ndarray) -> list[int]:
    chosen: list[int] = []
    for i in range(A.shape[0]):
        trial = chosen + [i]
        lam = np.linalg.eigvalsh(gs.gram(A[trial]))
        top = max(lam.max(), 1e-300)
        if lam.min() > RANK_RTOL * top:
            chosen = trial
    return chosen


def discretize(gs: GaussianSpace, vectors, N: int, max_points: int = MAX_GRID_POINTS) -> Discretization:
    """Grid the joint law of the given span elements.

    A linearly independent subset of ``vectors`` (taken greedily in order)
    is gridded with N equally spaced points per axis over +-5 standard
    deviations.  Only points inside the 5-sigma ellipsoid of the joint law
    are kept, so every conditional slice is symmetric about its conditional
    mean; masses are the Gaussian density at the points, renormalised.
    """
    A = np.atleast_2d(np.asarray(vectors, float))
    if A.shape[1] != gs.dim:
        raise GaussianError(f"vectors must have length {gs.dim}")
    if N < 2:
        raise GaussianError("grid needs N >= 2 points per axis")
    ind = _independent_subset(gs, A)
    r = len(ind)
    if r == 0:
        raise GaussianError("all vectors have zero variance")
    if N ** r > max_points:
        raise GaussianError(f"grid of {N}^{r} points exceeds the limit of {max_points}")
    C = gs.gram(A[ind])
    sd = np.sqrt(np.diag(C))
    axes = [np.linspace(-TRUNCATION_SD * s, TRUNCATION_SD * s, N) for s in sd]
    pts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    q = np.einsum("ij,jk,ik->i", pts, np.linalg.inv(C), pts)
    # tolerance keeps lattice points that sit exactly on the ellipsoid
    keep = q <= TRUNCATION_SD ** 2 * (1 + 1e-9)
    pts, q = pts[keep], q[keep]
    dens = np.exp(-0.5 * (q - q.min()))
    w = dens / dens.sum()
    return Discretization(gs, A, tuple(ind), pts, ProbSpace(w), N)


@dataclass(frozen=True)
class CEDeviation:
    max_deviation: float
    rms_deviation: float
    N: int
    atoms: int


def ce_equals_projection(u, V: Subspace, N: int, max_points: int = MAX_GRID_POINTS) -> CEDeviation:
    """Compare E(u | basis of V) on a discretised law with the projection of u.

    The conditional expectation is exact on the grid space; the projection is
    evaluated at the grid points.  Returns the sup and L2(P) gaps.
    """
    sp = V.space
    u = sp.check_vector(u)
    if V.rank > 3:
        raise GaussianError(f"rank {V.rank} is too large to discretise (limit 3)")
    disc = discretize(sp, np.vstack([V.basis, u[None, :]]), N, max_points)
    nb = V.basis.shape[0]
    cond = [disc.rv(i) for i in disc.independent if i < nb]
    target = disc.rv(nb)
    if cond:
        ce = cond_exp(target, sigma_join([sigma_of_rv(X) for X in cond]))
    else:
        ce = RandomVar(np.full(len(target), target.mean()), disc.space)
    proj = disc.values(project(u, V))
    diff = ce.values - proj
    w = disc.space.weights
    return CEDeviation(float(np.abs(diff).max()), float(np.sqrt(w @ diff ** 2)), N, disc.space.atom_count)


# --------------------------------------------------------------------------
# products of projections
# --------------------------------------------------------------------------

_L1 = np.sqrt(2.0 / np.pi)
_L4 = 3.0 ** 0.25


@dataclass(eq=False)
class GaussianTrajectory:
    """Projection run; same layout and CSV schema as operators.Trajectory.

    For a span element with L2 norm s the law is N(0, s^2), so the L1 and L4
    norms are s*sqrt(2/pi) and 3^(1/4)*s, E(x^4) = 3 s^4 and the sup norm is
    infinite unless s = 0.  ``dinf`` is the max-abs coefficient change.
    """

    k: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    dinf: np.ndarray
    dist_to_limit: np.ndarray | None
    norms: np.ndarray
    m4: np.ndarray
    final: np.ndarray
    converged_at: int | None
    eps: float
    window: int
    iterates: np.ndarray | None = field(default=None, repr=False)

    @property
    def steps(self) -> int:
        return self.k.size

    @property
    def converged(self) -> bool:
        return self.converged_at is not None

    def write_csv(self, fh=None):
        return write_trajectory_csv(self, fh)


def _norm_row(s):
    return [_L1 * s, s, _L4 * s, np.inf if s > 0 else 0.0]


def iterate_projections(x0, subspaces: Sequence[Subspace], schedule: Schedule, steps: int,
                        limit=None, *, eps: float = DEFAULT_EPS, window: int | None = None,
                        stop_on_convergence: bool = False,
                        store_iterates: bool = False) -> GaussianTrajectory:
    """x_n = P_{k_n} x_{n-1}; the stopping rule is the one of operators.iterate."""
    subspaces = list(subspaces)
    if not subspaces:
        raise GaussianError("need at least one subspace")
    sp = _same_space(*subspaces)
    x = sp.check_vector(x0).copy()
    ks = schedule.indices(steps)
    bad = np.flatnonzero((ks < 1) | (ks > len(subspaces)))
    if bad.size:
        n = int(bad[0])
        raise ScheduleError(
            f"schedule emits index {int(ks[n])} at step {n + 1}, only {len(subspaces)} subspaces")
    P = [V.projector for V in subspaces]
    window = len(subspaces) if window is None else int(window)
    lim = None if limit is None else sp.check_vector(limit)
    d1, d2, dinf = np.zeros(steps), np.zeros(steps), np.zeros(steps)
    dist = np.zeros(steps)
    norms = np.zeros((steps + 1, 4))
    m4 = np.zeros(steps + 1)
    its = [x.copy()] if store_iterates else None
    s = sp.norm(x)
    norms[0], m4[0] = _norm_row(s), 3 * s ** 4
    run, conv, done = 0, None, 0
    need = set(ks.tolist())
    last = {}
    for n in range(steps):
        last[int(ks[n])] = n
        new = P[ks[n] - 1] @ x
        delta = new - x
        sd = sp.norm(delta)
        d1[n], d2[n], dinf[n] = _L1 * sd, sd, np.abs(delta).max()
        x = new
        if lim is not None:
            dist[n] = sp.norm(x - lim)
        s = sp.norm(x)
        norms[n + 1], m4[n + 1] = _norm_row(s), 3 * s ** 4
        if store_iterates:
            its.append(x.copy())
        done = n + 1
        run = run + 1 if dinf[n] <= eps else 0
        if conv is None and run >= window and all(last.get(j, -1) > n - run for j in need):
            conv = n + 1
            if stop_on_convergence:
                break
    return GaussianTrajectory(
        k=ks[:done], d1=d1[:done], d2=d2[:done], dinf=dinf[:done],
        dist_to_limit=dist[:done] if lim is not None else None,
        norms=norms[: done + 1], m4=m4[: done + 1], final=x, converged_at=conv,
        eps=float(eps), window=window,
        iterates=np.array(its) if store_iterates else None,
    )


def alternation_decay(a: float, b: float, n: int, tol: float = 1e-10) -> float:
    """(ab)^n, the factor applied to X by n double steps T_X T_Y."""
    ab = a * b
    if ab < -tol or ab > 1 + tol:
        raise GaussianError(f"ab = {ab} lies outside [0, 1]")
    if n < 0:
        raise GaussianError("n must be >= 0")
    return float(min(max(ab, 0.0), 1.0) ** n)


def compatible_pair_space(a: float, b: float) -> GaussianSpace:
    """Gaussian (X, Y) with E(Y|X) = aX and E(X|Y) = bY: Var X = 1, Cov = a, Var Y = a/b."""
    if a == 0 or b == 0:
        if a != b:
            raise GaussianError("a and b must vanish together")
        return GaussianSpace(np.eye(2))
    if a / b <= 0 or a * b > 1:
        raise GaussianError(f"no Gaussian pair has a = {a}, b = {b}")
    return GaussianSpace([[1.0, a], [a, a / b]])


# --------------------------------------------------------------------------
# angles and intersections
# --------------------------------------------------------------------------

def principal_cosines(V: Subspace, W: Subspace) -> np.ndarray:
    """Cosines of the principal angles between V and W, descending."""
    sp = _same_space(V, W)
    QV, QW = V.orthonormal, W.orthonormal
    if QV.shape[0] == 0 or QW.shape[0] == 0:
        return np.zeros(0)
    s = np.linalg.svd(QV @ sp.cov @ QW.T, compute_uv=False)
    return np.clip(s, 0.0, 1.0)


def friedrichs_angle(V: Subspace, W: Subspace, tol: float = 1e-10) -> float:
    """Cosine of the angle between V and W modulo their intersection."""
    s = principal_cosines(V, W)
    s = s[s < 1 - tol]
    return float(s.max()) if s.size else 0.0


def intersect(V: Subspace, W: Subspace, tol: float = 1e-10) -> Subspace:
    sp = _same_space(V, W)
    QV, QW = V.orthonormal, W.orthonormal
    if QV.shape[0] == 0 or QW.shape[0] == 0:
        return Subspace(sp, np.zeros((0, sp.dim)))
    U, s, _ = np.linalg.svd(QV @ sp.cov @ QW.T)
    return Subspace(sp, U[:, : s.size][:, s >= 1 - tol].T @ QV)


def intersect_all(subspaces: Sequence[Subspace]) -> Subspace:
    out = subspaces[0]
    for W in subspaces[1:]:
        out = intersect(out, W)
    return out


@dataclass(frozen=True)
class SlowdownResult:
    d: int
    subspaces: tuple
    iterations: int
    cosine: float  # largest pairwise Friedrichs cosine
    eps: float

    @property
    def angle(self) -> float:
        return float(np.arccos(min(self.cosine, 1.0)))


def staggered_blocks(d: int, offset: int, size: int = 3) -> list[list[int]]:
    """Partition of 0..d-1: a leading block 0..offset-1, then runs of ``size``."""
    blocks = [list(range(0, min(offset, d)))] if offset > 0 else []
    blocks += [list(range(s, min(s + size, d))) for s in range(offset, d, size)]
    return [b for b in blocks if b]


def slowdown_family(d: int, eps: float = 1e-6, max_steps: int = 10**6) -> SlowdownResult:
    """Three block-indicator subspaces of R^d whose alternation slows with d.

    Subspace j is spanned by the indicators of ``staggered_blocks(d, j)``
    (Sigma = I).  Start from the normalised centred ramp and count periodic
    1,2,3 steps until the distance to the projection on the intersection is at
    most ``eps``.
    """
    if d < 2:
        raise GaussianError("slowdown_family needs d >= 2")
    gs = GaussianSpace(np.eye(d))
    subs = []
    for off in range(3):
        B = np.zeros((0, d))
        rows = []
        for b in staggered_blocks(d, off):
            r = np.zeros(d)
            r[b] = 1.0
            rows.append(r)
        subs.append(Subspace(gs, np.array(rows) if rows else B))
    x = np.arange(d, dtype=float)
    x -= x.mean()
    x /= gs.norm(x)
    limit = project(x, intersect_all(subs))
    P = [V.projector for V in subs]
    n = 0
    while gs.norm(x - limit) > eps:
        if n >= max_steps:
            raise GaussianError(f"no convergence within {max_steps} steps at d = {d}")
        x = P[n % 3] @ x
        n += 1
    cos = max(friedrichs_angle(subs[i], subs[j]) for i in range(3) for j in range(i + 1, 3))
    return SlowdownResult(d, tuple(subs), n, cos, eps)


__all__ = [
    "CSV_COLUMNS", "CEDeviation", "Discretization", "GaussianError", "GaussianSpace",
    "GaussianTrajectory", "Projection", "SlowdownResult", "Subspace", "alternation_decay",
    "ce_equals_projection", "compatible_pair_space", "discretize", "friedrichs_angle",
    "intersect", "intersect_all", "iterate_projections", "principal_cosines", "project",
    "project_coefficients", "slowdown_family", "staggered_blocks",
]
