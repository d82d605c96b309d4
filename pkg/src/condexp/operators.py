"""Products of conditional expectation operators along schedules.

The iteration ``X_n = E(X_{n-1} | F_n)`` with ``F_n`` drawn from a finite
list of fields converges on every finite space; when each field recurs
infinitely often the limit is ``E(X_0 | meet of the completed fields)``.
:func:`iterate` runs the product and records per-step diagnostics,
:func:`limit_predict` computes the predicted limit.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .prob_space import (
    ProbSpace, RandomVar, SigmaField, SpaceError, _check_field, completion,
    cond_exp, sigma_meet, sigma_of_rv,
)

DEFAULT_EPS = 1e-12
MOMENT_TOL = 1e-12


class ScheduleError(ValueError):
    pass


class InvariantError(AssertionError):
    """A post-condition that must hold mathematically failed numerically."""


# --------------------------------------------------------------------------
# operator matrices
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CondExpOperator:
    matrix: np.ndarray
    field: SigmaField
    space: ProbSpace

    def apply(self, X: RandomVar) -> RandomVar:
        return RandomVar(self.matrix @ X.values, self.space)

    def is_idempotent(self, tol=1e-12) -> bool:
        M = self.matrix
        return bool(np.abs(M @ M - M).max() <= tol)

    def is_self_adjoint(self, tol=1e-12) -> bool:
        D = np.diag(self.space.weights)
        return bool(np.abs(D @ self.matrix - self.matrix.T @ D).max() <= tol)


def build_operator(G: SigmaField, space: ProbSpace) -> CondExpOperator:
    """Matrix of E(. | G): M[i, j] = p_j / P(B) for i, j in the same block B."""
    _check_field(G, space)
    lab = G.labels
    mass = G.block_probs(space)
    inv = np.divide(1.0, mass, out=np.zeros_like(mass), where=mass > 0)
    same = lab[:, None] == lab[None, :]
    M = np.where(same, space.weights[None, :] * inv[lab][:, None], 0.0)
    M.setflags(write=False)
    return CondExpOperator(M, G, space)


def _weighted_op(M, space):
    """M in the L2(P) orthonormal coordinates, restricted to positive atoms."""
    pos = space.positive
    r = np.sqrt(space.weights[pos])
    return r[:, None] * M[np.ix_(pos, pos)] / r[None, :]


def alternation_cosine(G1: SigmaField, G2: SigmaField, space: ProbSpace) -> float:
    """Largest nontrivial singular value of E_1 E_2 on L2(P).

    Equals the cosine of the Friedrichs angle between L2(G1) and L2(G2); two-field
    alternation contracts the L2 error by at most its square per double step.
    """
    meet = sigma_meet([completion(G1, space), completion(G2, space)])
    M = (build_operator(G1, space).matrix @ build_operator(G2, space).matrix
         - build_operator(meet, space).matrix)
    A = _weighted_op(M, space)
    if A.size == 0:
        return 0.0
    return float(np.linalg.svd(A, compute_uv=False)[0])


# --------------------------------------------------------------------------
# schedules
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    """A sequence k_1, k_2, ... of 1-based field indices.

    ``kind`` is ``periodic`` (repeat ``pattern``), ``explicit`` (the finite
    list ``pattern``) or ``random`` (drawn from ``seed``).  Random schedules
    use ``distribution``: ``"uniform"`` i.i.d. draws, ``"permutation"`` a
    fresh random ordering of 1..K in each window of K steps, or a tuple of
    probabilities.  ``infinite_repeat`` records the claim that every index
    recurs infinitely often; it is set by construction, never inferred.
    """

    kind: str
    K: int
    pattern: tuple[int, ...] = ()
    seed: int | None = None
    distribution: str | tuple[float, ...] = "uniform"
    infinite_repeat: bool = False

    @classmethod
    def periodic(cls, pattern: Sequence[int], K: int | None = None) -> "Schedule":
        pattern = tuple(int(k) for k in pattern)
        if not pattern:
            raise ScheduleError("periodic schedule needs a non-empty pattern")
        K = max(pattern) if K is None else K
        _check_range(pattern, K)
        return cls("periodic", K, pattern, infinite_repeat=set(pattern) >= set(range(1, K + 1)))

    @classmethod
    def alternating(cls, K: int = 2) -> "Schedule":
        return cls.periodic(range(1, K + 1))

    @classmethod
    def explicit(cls, seq: Sequence[int], K: int | None = None,
                 infinite_repeat: bool = False) -> "Schedule":
        seq = tuple(int(k) for k in seq)
        K = (max(seq) if seq else 1) if K is None else K
        _check_range(seq, K)
        return cls("explicit", K, seq, infinite_repeat=infinite_repeat)

    @classmethod
    def random(cls, K: int, seed: int, distribution="uniform") -> "Schedule":
        if seed is None:
            raise ScheduleError("random schedules need a seed")
        if isinstance(distribution, str):
            if distribution not in ("uniform", "permutation"):
                raise ScheduleError(f"unknown distribution {distribution!r}")
            full = True
        else:
            distribution = tuple(float(q) for q in distribution)
            if len(distribution) != K or min(distribution) < 0 or abs(sum(distribution) - 1) > 1e-12:
                raise ScheduleError("distribution must be K probabilities summing to 1")
            full = min(distribution) > 0
        return cls("random", int(K), (), int(seed), distribution, infinite_repeat=full)

    @property
    def length(self) -> int | None:
        return len(self.pattern) if self.kind == "explicit" else None

    def indices(self, steps: int) -> np.ndarray:
        """First ``steps`` indices (1-based)."""
        if steps < 0:
            raise ScheduleError("steps must be >= 0")
        if self.kind == "periodic":
            p = np.array(self.pattern, dtype=np.int64)
            return p[np.arange(steps) % p.size]
        if self.kind == "explicit":
            if steps > len(self.pattern):
                raise ScheduleError(
                    f"explicit schedule has {len(self.pattern)} entries, {steps} steps requested")
            return np.array(self.pattern[:steps], dtype=np.int64)
        rng = np.random.default_rng(self.seed)
        if self.distribution == "uniform":
            return rng.integers(1, self.K + 1, size=steps).astype(np.int64)
        if self.distribution == "permutation":
            windows = -(-steps // self.K)
            perm = rng.permuted(np.tile(np.arange(1, self.K + 1), (windows, 1)), axis=1)
            return perm.ravel()[:steps].astype(np.int64)
        return (rng.choice(self.K, size=steps, p=self.distribution) + 1).astype(np.int64)


def _check_range(seq, K):
    for n, k in enumerate(seq):
        if not 1 <= k <= K:
            raise ScheduleError(f"index {k} at position {n} is outside 1..{K}")


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------

CSV_COLUMNS = ("step", "k_n", "d1", "d2", "dinf", "dist_to_limit", "m4")


@dataclass(eq=False)
class Trajectory:
    """Diagnostics of one run; index n of the step arrays is step n+1.

    ``norms`` has one row per iterate (X_0 first) and columns for the L1,
    L2, L4 and sup norms.  ``iterates`` is only filled when requested.
    """

    k: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    dinf: np.ndarray
    dist_to_limit: np.ndarray | None
    norms: np.ndarray
    m4: np.ndarray
    final: RandomVar
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

    def write_csv(self, fh=None) -> str | None:
        """Write the CSV schema shared with the Gaussian engine."""
        return write_trajectory_csv(self, fh)


def write_trajectory_csv(traj, fh=None):
    buf = io.StringIO() if fh is None else fh
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    dist = traj.dist_to_limit
    for n in range(traj.steps):
        w.writerow([n + 1, int(traj.k[n]), repr(float(traj.d1[n])), repr(float(traj.d2[n])),
                    repr(float(traj.dinf[n])),
                    "" if dist is None else repr(float(dist[n])),
                    repr(float(traj.m4[n + 1]))])
    return buf.getvalue() if fh is None else None


def _field_tables(fields, space):
    nb = max(g.n_blocks for g in fields)
    labels = np.stack([g.labels for g in fields])
    inv = np.zeros((len(fields), nb))
    for j, g in enumerate(fields):
        _check_field(g, space)
        mass = g.block_probs(space)
        inv[j, : g.n_blocks] = np.divide(1.0, mass, out=np.zeros_like(mass), where=mass > 0)
    return np.ascontiguousarray(labels), inv


def iterate(X0: RandomVar, fields: Sequence[SigmaField], schedule: Schedule, steps: int,
            predicted_limit: RandomVar | None = None, *, eps: float = DEFAULT_EPS,
            window: int | None = None, stop_on_convergence: bool = False,
            store_iterates: bool = False) -> Trajectory:
    """Run X_n = E(X_{n-1} | G_{k_n}) for ``steps`` steps.

    The stopping rule declares convergence once ||X_n - X_{n-1}||_inf <= eps
    for ``window`` consecutive steps (default: the number of fields) and that
    run of small steps has applied every field the schedule uses.  With
    ``stop_on_convergence`` the run ends there; otherwise all steps run and
    ``converged_at`` just records when the rule first fired.
    """
    fields = list(fields)
    if not fields:
        raise SpaceError("iterate needs at least one field")
    if steps < 0:
        raise ScheduleError("steps must be >= 0")
    space = X0.space
    ks = schedule.indices(steps)
    bad = np.flatnonzero((ks < 1) | (ks > len(fields)))
    if bad.size:
        n = int(bad[0])
        raise ScheduleError(
            f"schedule emits index {int(ks[n])} at step {n + 1}, only {len(fields)} fields")
    labels, inv = _field_tables(fields, space)
    need = np.zeros(len(fields), dtype=np.bool_)
    need[ks - 1] = True
    window = len(fields) if window is None else int(window)
    has_pred = predicted_limit is not None
    pred = predicted_limit.values if has_pred else np.zeros(space.atom_count)

    d1 = np.zeros(steps)
    d2 = np.zeros(steps)
    dinf = np.zeros(steps)
    dist = np.zeros(steps)
    norms = np.zeros((steps + 1, 4))
    m4 = np.zeros(steps + 1)
    out_iter = np.zeros((steps + 1 if store_iterates else 0, space.atom_count))
    n_done, conv, x = kernels.iterate(
        np.ascontiguousarray(X0.values, dtype=float), space.weights, np.asarray(space.positive),
        labels, inv, ks - 1, need, np.ascontiguousarray(pred, dtype=float), has_pred, float(eps),
        window, bool(stop_on_convergence), d1, d2, dinf, dist, norms, m4, out_iter)
    n_done = int(n_done)
    return Trajectory(
        k=ks[:n_done], d1=d1[:n_done], d2=d2[:n_done], dinf=dinf[:n_done],
        dist_to_limit=dist[:n_done] if has_pred else None,
        norms=norms[: n_done + 1], m4=m4[: n_done + 1], final=RandomVar(x, space),
        converged_at=None if conv < 0 else int(conv), eps=float(eps), window=window,
        iterates=out_iter[: n_done + 1] if store_iterates else None,
    )


def limit_predict(X0: RandomVar, fields: Sequence[SigmaField], space: ProbSpace | None = None) -> RandomVar:
    """E(X0 | intersection of the completed fields)."""
    space = X0.space if space is None else space
    meet = sigma_meet([completion(g, space) for g in fields])
    return cond_exp(X0, meet)


def two_field_alternation(X: RandomVar, Y: RandomVar, n: int, start: RandomVar | None = None) -> RandomVar:
    """(T_X T_Y)^n applied to ``start`` (default X): project on sigma(Y), then sigma(X)."""
    gx, gy = sigma_of_rv(X), sigma_of_rv(Y)
    traj = iterate(X if start is None else start, [gx, gy], Schedule.periodic([2, 1]), 2 * n)
    return traj.final


@dataclass(frozen=True)
class MomentReport:
    m4: np.ndarray
    non_increasing: bool
    max_increase: float


def moment_track(traj: Trajectory, tol: float = MOMENT_TOL) -> MomentReport:
    m4 = np.asarray(traj.m4)
    inc = float(np.max(np.diff(m4))) if m4.size > 1 else 0.0
    return MomentReport(m4, inc <= tol, max(inc, 0.0))


def norms_non_increasing(traj, tol: float = MOMENT_TOL) -> bool:
    """Every tracked L^p norm is non-increasing along the trajectory.

    Consecutive infinite entries (the sup norm of a Gaussian) count as equal.
    """
    nr = np.asarray(traj.norms)
    if nr.shape[0] < 2:
        return True
    a, b = nr[:-1], nr[1:]
    both_inf = np.isinf(a) & np.isinf(b)
    with np.errstate(invalid="ignore"):
        inc = np.where(both_inf, 0.0, b - a)
    return bool(np.max(inc) <= tol)


def truncation_bound(X: RandomVar, k: float, G: SigmaField, p: float) -> tuple[float, float]:
    """(||E(X 1{|X|>k} | G)||_p, ||X 1{|X|>k}||_p); the first never exceeds the second."""
    if not p >= 1:
        raise ValueError(f"p must lie in [1, inf], got {p}")
    tail = RandomVar(np.where(np.abs(X.values) > k, X.values, 0.0), X.space)
    lhs = cond_exp(tail, G).norm(p)
    rhs = tail.norm(p)
    if lhs > rhs + 1e-12 * max(1.0, rhs):
        raise InvariantError(f"contraction violated: {lhs} > {rhs}")
    return lhs, rhs


def meet_integrals(X: RandomVar, meet: SigmaField) -> np.ndarray:
    """E(X 1_A) for every block A of ``meet``; conserved along the iteration."""
    return np.bincount(meet.labels, weights=X.space.weights * X.values, minlength=meet.n_blocks)
