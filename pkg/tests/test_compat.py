from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from condexp import InvariantError, ProbSpace, RandomVar, cond_exp, sigma_of_rv
from condexp.compat import (
    DegenerateError, compat_report, deep_uncorrelation_defect, disc_grid, family_compat,
    independence_defect, indicator_counterexample, is_deeply_uncorrelated, martingale_check,
    nested_ce_sequence, regress_ce, symmetric_sign_pair, two_point_pair,
)
from condexp.gaussian import GaussianSpace, Subspace, discretize, project_coefficients

TOL = 1e-12


def independent_pair():
    # X in {0, 2} w.p. (0.3, 0.7), Y in {-1, 1, 4} w.p. (0.2, 0.5, 0.3), product law
    px, py = [0.3, 0.7], [0.2, 0.5, 0.3]
    w = np.outer(px, py).ravel()
    P = ProbSpace(w / w.sum())
    X = RandomVar(np.repeat([0.0, 2.0], 3), P)
    Y = RandomVar(np.tile([-1.0, 1.0, 4.0], 2), P)
    return X, Y


# -- regress_ce --------------------------------------------------------------

def test_regress_exact_affine():
    P = ProbSpace([0.1, 0.2, 0.3, 0.4])
    X = RandomVar([0, 1, 2, 5], P)
    a, c, r = regress_ce(2 * X + 1, X)
    assert (a, c) == pytest.approx((2, 1), abs=TOL) and r <= TOL


def test_regress_independent():
    X, Y = independent_pair()
    a, c, r = regress_ce(Y, X)
    assert abs(a) <= TOL and c == pytest.approx(Y.mean(), abs=TOL) and r <= TOL


def test_regress_two_point_hand_values():
    X, Y = two_point_pair(0.3, 0.2, 0.1, 0.4)
    a, c, r = regress_ce(Y, X)
    assert a == pytest.approx(0.4, abs=TOL)
    assert c == pytest.approx(0.4, abs=TOL)
    assert r <= TOL


def test_regress_degenerate_regressor():
    P = ProbSpace([0.5, 0.5, 0.0])
    with pytest.raises(DegenerateError):
        regress_ce(RandomVar([1, 2, 3], P), RandomVar([4, 4, 9], P))


@given(st.floats(0.05, 1), st.floats(0.05, 1), st.floats(0.05, 1), st.floats(0.05, 1),
       st.floats(-5, 5).filter(lambda s: abs(s) > 0.1), st.floats(-5, 5))
def test_regress_affine_equivariance(p00, p01, p10, p11, alpha, beta):
    s = p00 + p01 + p10 + p11
    P = ProbSpace(np.array([p00, p01, p10, p11, 0.3 * s]) / (1.3 * s))
    X = RandomVar([0, 0, 1, 1, 3], P)
    Y = RandomVar([1, 4, 0, 2, -1], P)
    a, c, r = regress_ce(Y, X)
    a2, c2, r2 = regress_ce(alpha * Y + beta, X)
    assert a2 == pytest.approx(alpha * a, abs=1e-9)
    assert c2 == pytest.approx(alpha * c + beta, abs=1e-9)
    assert r2 == pytest.approx(abs(alpha) * r, abs=1e-9)


# -- compat_report -------------------------------------------------------------

def test_two_point_pair_is_compatible():
    X, Y = two_point_pair(0.3, 0.2, 0.1, 0.4)
    rep = compat_report(X, Y)
    assert rep.compatible
    assert abs(rep.ab - rep.rho ** 2) <= TOL
    assert rep.checks["i"] is True


def test_identical_pair_fires_collinearity():
    P = ProbSpace([0.2, 0.3, 0.5])
    X = RandomVar([1, 2, 4], P)
    rep = compat_report(X, X)
    assert rep.a == pytest.approx(1) and rep.b == pytest.approx(1)
    assert rep.checks["ii"] is True
    assert rep.checks["iii"] is None


def test_independent_pair_fires_clause_iv():
    X, Y = independent_pair()
    rep = compat_report(X, Y)
    assert abs(rep.a) <= TOL and abs(rep.b) <= TOL
    assert rep.checks["iv"] is True and rep.checks["iii"] is True


def test_incompatible_pair_skips_clauses():
    ex = indicator_counterexample()
    rep = compat_report(ex.X, ex.Y)
    assert not rep.compatible
    assert all(v is None for v in rep.checks.values())
    d = rep.as_dict()
    assert d["compatible"] is False and "checks" in d


def test_strict_mode_raises_on_clause_failure():
    # a discretised-looking pair accepted with a loose tol but checked tightly
    X, Y = disc_grid(40)
    Yt = RandomVar(Y.values + 0.3 * X.values, X.space)
    with pytest.raises(InvariantError):
        compat_report(X, Yt, tol=10.0, clause_tol=1e-12)
    rep = compat_report(X, Yt, tol=10.0, clause_tol=1e-12, strict=False)
    assert False in rep.checks.values()


@st.composite
def two_point_pairs(draw):
    p = [draw(st.floats(0.01, 1)) for _ in range(4)]
    s = sum(p)
    x0, x1 = draw(st.floats(-3, 3)), draw(st.floats(-3, 3))
    y0, y1 = draw(st.floats(-3, 3)), draw(st.floats(-3, 3))
    if abs(x1 - x0) < 0.1 or abs(y1 - y0) < 0.1:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    return two_point_pair(*(q / s for q in p[:3]), 1 - sum(q / s for q in p[:3]),
                          x=(x0, x1), y=(y0, y1))


@given(two_point_pairs())
def test_two_point_pairs_always_compatible(pair):
    X, Y = pair
    rep = compat_report(X, Y, tol=1e-10)
    assert rep.compatible
    Xc, Yc = X.centered(), Y.centered()
    exy = X.space.expect(Xc.values * Yc.values)
    assert exy == pytest.approx(rep.a * Xc.var(), abs=1e-10)
    assert exy == pytest.approx(rep.b * Yc.var(), abs=1e-10)


@given(st.floats(-0.95, 0.95))
def test_symmetric_sign_pair_coefficients(rho):
    X, Y = symmetric_sign_pair(rho)
    rep = compat_report(X, Y)
    assert rep.a == pytest.approx(rho, abs=1e-12) and rep.b == pytest.approx(rho, abs=1e-12)


# -- deep uncorrelatedness ---------------------------------------------------

def test_independent_pair_is_deeply_uncorrelated():
    X, Y = independent_pair()
    assert is_deeply_uncorrelated(X, Y)
    assert independence_defect(X, Y) <= TOL


def test_indicator_counterexample_values():
    ex = indicator_counterexample()
    X, Y = ex.X, ex.Y
    np.testing.assert_array_equal(X.values, [1, 1, 1, 0])
    np.testing.assert_array_equal(Y.values, [1, 0, -1, 0])
    assert abs(X.space.expect(X.values * Y.values)) <= TOL and abs(Y.mean()) <= TOL
    assert not is_deeply_uncorrelated(X, Y)
    # E(X | Y = 0) = 0.1 / 0.6 = 1/6 against E(X) = 1/2; on Y = +-1, E(X|Y) = 1
    ce = cond_exp(X, sigma_of_rv(Y)).values
    assert ce[1] == pytest.approx(1 / 6, abs=TOL) and ce[3] == pytest.approx(1 / 6, abs=TOL)
    assert X.mean() == pytest.approx(0.5, abs=TOL)
    assert deep_uncorrelation_defect(X, Y) == pytest.approx(0.5, abs=TOL)
    lhs = X.space.expect(X.values * Y.values ** 2)
    assert lhs == pytest.approx(2 * (ex.p_A - ex.p_AB), abs=TOL)
    # exact rational check on the same table
    p = [Fraction(1, 5), Fraction(1, 10), Fraction(1, 5), Fraction(1, 2)]
    x, y = [1, 1, 1, 0], [1, 0, -1, 0]
    assert sum(pi * xi * yi * yi for pi, xi, yi in zip(p, x, y)) == 2 * ((p[0] + p[1]) - p[1])


@pytest.mark.parametrize("N", [100, 200, 400])
def test_disc_deeply_uncorrelated_not_independent(N):
    X, Y = disc_grid(N)
    # symmetry makes the grid averages vanish up to round-off at every N
    assert deep_uncorrelation_defect(X, Y) <= 5.0 / N
    assert independence_defect(X, Y) >= 0.05


@given(two_point_pairs())
def test_deep_uncorrelation_implies_uncorrelated(pair):
    X, Y = pair
    if is_deeply_uncorrelated(X, Y, tol=1e-10):
        rho = X.cov(Y) / np.sqrt(X.var() * Y.var())
        assert abs(rho) <= 1e-9


def test_independence_defect_cell_limit():
    X, Y = disc_grid(50)
    with pytest.raises(ValueError):
        independence_defect(X, Y, max_cells=10)


# -- families ----------------------------------------------------------------

def test_family_of_itself():
    P = ProbSpace([0.2, 0.3, 0.5])
    X = RandomVar([1, 5, 2], P)
    fit = family_compat(X, [X])
    assert fit.residual <= TOL and fit.holds
    np.testing.assert_allclose(fit.coefficients, [0, 1], atol=1e-12)


def test_deeply_uncorrelated_family_coefficients():
    P = ProbSpace([1 / 8] * 8)
    bits = np.array([[(i >> j) & 1 for j in range(3)] for i in range(8)], float)
    X0 = RandomVar(2 * bits[:, 0] + 3, P)
    fam = [RandomVar(bits[:, 1], P), RandomVar(bits[:, 2], P)]
    fit = family_compat(X0, fam)
    np.testing.assert_allclose(fit.coefficients, [X0.mean(), 0, 0], atol=1e-12)


def test_family_rank_deficiency_reported():
    P = ProbSpace([0.25] * 4)
    X1 = RandomVar([0, 1, 2, 3], P)
    fit = family_compat(RandomVar([1, 0, 2, 2], P), [X1, 2 * X1])
    assert fit.rank_deficient and fit.rank == 2


@given(two_point_pairs())
def test_family_single_regressor_matches_regress_ce(pair):
    X, Y = pair
    a, c, r = regress_ce(Y, X)
    fit = family_compat(Y, [X])
    assert fit.coefficients[1] == pytest.approx(a, abs=1e-9)
    assert fit.coefficients[0] == pytest.approx(c, abs=1e-9)
    assert fit.residual == pytest.approx(r, abs=1e-9)


def test_gaussian_triple_family_matches_gram_solve():
    S = np.array([[1, .5, .3], [.5, 1, .2], [.3, .2, 1.]])
    gs = GaussianSpace(S)
    gram = project_coefficients(np.eye(3)[0], Subspace(gs, np.eye(3)[1:])).coefficients
    resid = []
    for N in (21, 41, 61):
        d = discretize(gs, np.eye(3), N)
        fit = family_compat(d.rv(0), [d.rv(1), d.rv(2)], tol=np.inf)
        np.testing.assert_allclose(fit.coefficients[1:], gram, atol=1e-5)
        assert abs(fit.coefficients[0]) <= 1e-12
        resid.append(fit.residual)
    # sup residual shrinks with resolution; 0.1 at N = 61 is the measured discretisation floor
    assert resid == sorted(resid, reverse=True) and resid[-1] <= 0.1


def test_nested_sequence_of_copies_is_constant():
    P = ProbSpace([0.1, 0.2, 0.3, 0.4])
    X0 = RandomVar([3, 1, 4, 1], P)
    X1 = RandomVar([0, 0, 1, 1], P)
    seq = nested_ce_sequence(X0, [X1, X1, X1])
    for M in seq[1:]:
        np.testing.assert_array_equal(M.values, seq[0].values)


@given(st.integers(0, 2**16))
def test_nested_sequence_norm_non_decreasing(seed):
    rng = np.random.default_rng(seed)
    n = 12
    w = rng.random(n)
    P = ProbSpace(w / w.sum())
    X0 = RandomVar(rng.normal(size=n), P)
    fam = [RandomVar(rng.integers(0, 3, n).astype(float), P) for _ in range(4)]
    norms = [M.norm(2) for M in nested_ce_sequence(X0, fam)]
    assert all(b >= a - 1e-12 for a, b in zip(norms, norms[1:]))


def test_deeply_uncorrelated_centred_family_gives_zero():
    P = ProbSpace([1 / 8] * 8)
    signs = np.array([[1 - 2 * ((i >> j) & 1) for j in range(3)] for i in range(8)], float)
    X0 = RandomVar(signs[:, 0], P)
    for M in nested_ce_sequence(X0, [RandomVar(signs[:, 1], P), RandomVar(signs[:, 2], P)]):
        assert np.abs(M.values).max() <= TOL


def test_martingale_examples():
    P = ProbSpace([1 / 8] * 8)
    signs = np.array([[1 - 2 * ((i >> j) & 1) for j in range(3)] for i in range(8)], float)
    coins = [RandomVar(signs[:, j], P) for j in range(3)]
    assert martingale_check(coins)
    assert martingale_check(coins[:1])
    # X_2 = X_0 * X_1 is pairwise uncorrelated with the past but not a martingale
    # difference once combined with a dependent copy: replace X_2 by X_0 itself
    assert not martingale_check([coins[0], coins[1], coins[0]])
    with pytest.raises(ValueError):
        martingale_check([RandomVar(signs[:, 0] + 1, P)])
