import numpy as np
import pytest
from hypothesis import given, strategies as st

from condexp import (
    InvariantError, ProbSpace, RandomVar, Schedule, SigmaField, SpaceError, cond_exp,
    sigma_meet,
)
from condexp.atomic_ext import (
    SplitSpace, extend_rv, iteration_gap, norm_transfer, restrict, uplus, verify_transfer,
)

TOL = 1e-12
P5 = ProbSpace([0.1, 0.2, 0.3, 0.15, 0.25])


@st.composite
def splits(draw, max_atoms=9):
    n = draw(st.integers(1, max_atoms))
    raw = draw(st.lists(st.integers(0, 20), min_size=n, max_size=n))
    C = draw(st.sets(st.integers(0, n - 1), min_size=1))
    C = sorted(C)
    if sum(raw[i] for i in C) == 0:
        raw[C[0]] = 1
    w = np.array(raw, float)
    split = SplitSpace(ProbSpace(w / w.sum()), C)
    m = len(C)
    G = SigmaField.from_labels(draw(st.lists(st.integers(0, m - 1), min_size=m, max_size=m)))
    X = RandomVar(draw(st.lists(st.floats(-10, 10), min_size=m, max_size=m)), split.restricted)
    return split, G, X


# -- restrict ------------------------------------------------------------------

def test_restrict_whole_space_is_identity():
    assert restrict(SplitSpace(P5, range(5))) == P5


def test_restrict_renormalises():
    sp = restrict(SplitSpace(ProbSpace([0.2, 0.3, 0.5]), [0, 1]))
    np.testing.assert_allclose(sp.weights, [0.4, 0.6], atol=1e-15)
    assert restrict(SplitSpace(ProbSpace([0.2, 0.3, 0.5]), [2])).weights.tolist() == [1.0]


@pytest.mark.parametrize("C, fragment", [
    ([], "at least one"), ([0, 0], "twice"), ([0, 7], "atom 7"), ([2], "P\\(C\\) = 0"),
])
def test_split_validation(C, fragment):
    with pytest.raises(SpaceError, match=fragment):
        SplitSpace(ProbSpace([0.5, 0.5, 0.0]), C)


def test_split_metadata():
    s = SplitSpace(ProbSpace([0.5, 0.2, 0.0, 0.3]), [0])
    assert s.D == (1, 2, 3)
    assert s.atoms_of_D == ((1,), (3,))
    assert s.p_C == pytest.approx(0.5)


# -- uplus / extend_rv -----------------------------------------------------------

def test_uplus_five_atom_example():
    s = SplitSpace(P5, [0, 1, 2])
    assert uplus(SigmaField([[0], [1, 2]]), s) == SigmaField([[0], [1, 2], [3, 4]])
    # the same field given in global indices
    assert uplus([[0], [1, 2]], s) == SigmaField([[0], [1, 2], [3, 4]])


def test_uplus_trivial_and_empty_D():
    s = SplitSpace(P5, [0, 1, 2])
    assert uplus(SigmaField.trivial(3), s) == SigmaField([[0, 1, 2], [3, 4]])
    whole = SplitSpace(P5, range(5))
    G = SigmaField([[0, 4], [1], [2, 3]])
    assert uplus(G, whole) == G


def test_uplus_rejects_global_block_outside_C():
    with pytest.raises(SpaceError, match="not in C"):
        uplus([[0, 3]], SplitSpace(P5, [0, 1, 2]))


def test_extend_rv_examples():
    s = SplitSpace(ProbSpace([0.25] * 4), [0, 1])
    np.testing.assert_array_equal(extend_rv([0, 0], s).values, [0, 0, 0, 0])
    np.testing.assert_array_equal(extend_rv([1, 1], s).values, [1, 1, 0, 0])
    np.testing.assert_array_equal(extend_rv([2, -1], s).values, [2, -1, 0, 0])
    with pytest.raises(SpaceError):
        extend_rv([1, 2, 3], s)


# -- transfer identities ---------------------------------------------------------

def test_transfer_examples():
    s = SplitSpace(P5, [0, 1, 2])
    G = SigmaField([[0], [1, 2]])
    for vals in ([1.0, 5.0, -2.0], [3.0, 3.0, 3.0]):
        X = RandomVar(vals, s.restricted)
        assert verify_transfer(X, G, s) <= TOL
    Xc = RandomVar([3.0, 3.0, 3.0], s.restricted)
    lhs = cond_exp(extend_rv(Xc, s), uplus(G, s))
    np.testing.assert_allclose(lhs.values, extend_rv(Xc, s).values, atol=TOL)
    whole = SplitSpace(P5, range(5))
    X = RandomVar([1, 2, 3, 4, 5], whole.restricted)
    assert verify_transfer(X, SigmaField([[0, 1], [2, 3, 4]]), whole) == 0.0


def test_norm_transfer_examples():
    s = SplitSpace(ProbSpace([0.2, 0.3, 0.25, 0.25]), [0, 1])
    Xn = RandomVar([1.0, 0.0], s.restricted)
    Xm = RandomVar([0.0, 1.0], s.restricted)
    assert ((Xn - Xm).norm(2) ** 2) == pytest.approx(1.0)
    full, restricted = norm_transfer(Xn, Xm, s)
    assert full == pytest.approx(0.5) and restricted == pytest.approx(0.5)
    assert norm_transfer(Xn, Xn, s) == (0.0, 0.0)
    whole = SplitSpace(ProbSpace([0.4, 0.6]), [0, 1])
    a, b = norm_transfer([1.0, 2.0], [0.0, -1.0], whole)
    assert a == pytest.approx(b, rel=1e-15)


@given(splits())
def test_transfer_over_random_instances(inst):
    split, G, X = inst
    assert verify_transfer(X, G, split) <= TOL * (1 + np.abs(X.values).max())


@given(splits(), st.floats(0.1, 10))
def test_norm_transfer_scales_quadratically(inst, alpha):
    split, G, X = inst
    Y = cond_exp(X, G)
    full, restricted = norm_transfer(X, Y, split)
    f2, r2 = norm_transfer(alpha * X, alpha * Y, split)
    # X - E(X|G) can be pure round-off, which does not scale exactly
    floor = 1e-24 * (alpha * (1 + np.abs(X.values).max())) ** 2
    assert f2 == pytest.approx(alpha ** 2 * full, rel=1e-12, abs=floor)
    assert r2 == pytest.approx(alpha ** 2 * restricted, rel=1e-12, abs=floor)


@given(splits(), st.data())
def test_uplus_commutes_with_meet(inst, data):
    split, G1, X = inst
    m = len(split.C)
    G2 = SigmaField.from_labels(data.draw(st.lists(st.integers(0, m - 1), min_size=m, max_size=m)))
    assert sigma_meet([uplus(G1, split), uplus(G2, split)]) == uplus(sigma_meet([G1, G2]), split)


@given(splits(), st.data())
def test_iteration_commutes_with_extension(inst, data):
    split, G1, Y0 = inst
    m = len(split.C)
    fields = [G1] + [SigmaField.from_labels(
        data.draw(st.lists(st.integers(0, m - 1), min_size=m, max_size=m))) for _ in range(2)]
    seed = data.draw(st.integers(0, 2**16))
    gap = iteration_gap(Y0, fields, Schedule.random(3, seed=seed), 30, split)
    assert gap <= TOL * (1 + np.abs(Y0.values).max())


def test_norm_transfer_raises_on_mismatch(monkeypatch):
    import condexp.atomic_ext as ae
    s = SplitSpace(ProbSpace([0.5, 0.5]), [0])
    monkeypatch.setattr(SplitSpace, "p_C", property(lambda self: 0.9))
    with pytest.raises(InvariantError):
        ae.norm_transfer([1.0], [0.0], s)
