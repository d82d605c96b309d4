import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from condexp import ProbSpace, RandomVar, SigmaField

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def spaces(draw, min_atoms=1, max_atoms=10, allow_null=True):
    n = draw(st.integers(min_atoms, max_atoms))
    raw = draw(st.lists(st.integers(0 if allow_null else 1, 20), min_size=n, max_size=n))
    if sum(raw) == 0:
        raw[0] = 1
    w = np.array(raw, dtype=float)
    return ProbSpace(w / w.sum())


def partition_of(draw, n, max_blocks=None):
    max_blocks = n if max_blocks is None else max_blocks
    labels = draw(st.lists(st.integers(0, max_blocks - 1), min_size=n, max_size=n))
    return SigmaField.from_labels(labels)


@st.composite
def partitions(draw, n):
    return partition_of(draw, n)


@st.composite
def space_with_fields(draw, k=2, **kw):
    P = draw(spaces(**kw))
    n = P.atom_count
    fields = [partition_of(draw, n) for _ in range(k)]
    vals = draw(st.lists(st.floats(-10, 10, allow_nan=False), min_size=n, max_size=n))
    return P, fields, RandomVar(vals, P)


@pytest.fixture
def p3():
    return ProbSpace([0.2, 0.3, 0.5])
