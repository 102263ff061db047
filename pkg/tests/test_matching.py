import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from label_convergence.data_model import Instance
from label_convergence.geometry import Box
from label_convergence.matching import (
    assignment_cost,
    cost_matrix,
    hungarian,
    match_multi,
    match_pair,
)


def inst(i, ann, bbox, cat=1, image=1):
    return Instance(i, image, ann, cat, tuple(float(v) for v in bbox))


def brute_force_cost(c):
    n = c.shape[0]
    return min(math.fsum(c[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def test_hungarian_against_permutations():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(1, 7))
        c = rng.random((n, n))
        if rng.random() < 0.3:
            c = np.round(c, 1)  # force ties
        perm = hungarian(c)
        assert sorted(perm) == list(range(n))
        assert assignment_cost(c, perm) == pytest.approx(brute_force_cost(c), abs=1e-12)


def test_hungarian_matches_scipy_on_larger_matrices():
    rng = np.random.default_rng(1)
    for n in (10, 25, 40):
        c = rng.random((n, n))
        r, col = linear_sum_assignment(c)
        assert assignment_cost(c, hungarian(c)) == pytest.approx(c[r, col].sum(), abs=1e-9)


def test_hungarian_two_by_two():
    c = 1 - np.array([[0.2, 0.9], [0.8, 0.1]])
    assert list(hungarian(c)) == [1, 0]


def test_hungarian_all_equal_is_identity():
    assert list(hungarian(np.zeros((4, 4)))) == [0, 1, 2, 3]


def test_cost_matrix_padding():
    c = cost_matrix(np.array([[0.7], [0.2]]))
    assert c.shape == (2, 2)
    assert c[0, 1] == c[1, 1] == 1.0
    assert c[0, 0] == pytest.approx(0.3)


def test_match_pair_below_threshold_split():
    a = [inst(1, "A", (0, 0, 10, 10))]
    b = [inst(2, "B", (5, 0, 10, 10))]  # IoU 1/3
    units = match_pair(a, b, 0.5)
    assert [u.m_u for u in units] == [1, 1]
    units = match_pair(a, b, 0.3)
    assert [u.m_u for u in units] == [2]
    assert units[0].ious[0] == pytest.approx(1 / 3)


def test_match_pair_optimal_not_greedy():
    # greedy takes the best pair (1, 3) and strands instance 2 below threshold
    a = [inst(1, "A", (0, 0, 10, 10)), inst(2, "A", (5, 0, 10, 10))]
    b = [inst(3, "B", (1, 0, 10, 10)), inst(4, "B", (-3, 0, 10, 10))]
    units = match_pair(a, b, 0.4)
    pairs = {(u.members["A"].id, u.members["B"].id) for u in units if u.m_u == 2}
    assert pairs == {(1, 4), (2, 3)}


def test_match_pair_unequal_sizes_and_empty():
    a = [inst(1, "A", (0, 0, 4, 4)), inst(2, "A", (20, 20, 4, 4))]
    b = [inst(3, "B", (0, 0, 4, 4))]
    units = match_pair(a, b)
    assert sorted(u.m_u for u in units) == [1, 2]
    assert match_pair([], [], annotators=("A", "B")) == []
    assert [u.m_u for u in match_pair(a, [], annotators=("A", "B"))] == [1, 1]


def test_match_pair_rejects_bad_threshold():
    with pytest.raises(ValueError):
        match_pair([], [], 0.0)


def random_sets(seed, n_a, n_b):
    rng = np.random.default_rng(seed)
    a = [inst(k + 1, "A", (*rng.integers(0, 30, 2), *rng.integers(3, 15, 2))) for k in range(n_a)]
    b = [inst(100 + k, "B", (*rng.integers(0, 30, 2), *rng.integers(3, 15, 2))) for k in range(n_b)]
    return a, b


def paired(units):
    return {frozenset(u.instance_ids()) for u in units if u.m_u == 2}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 6), st.integers(0, 6), st.floats(0.05, 1.0))
def test_match_pair_symmetry(seed, n_a, n_b, t):
    # continuous coordinates so that optimal assignments are unique
    rng = np.random.default_rng(seed)
    a = [inst(k + 1, "A", (*rng.uniform(0, 30, 2), *rng.uniform(3, 15, 2))) for k in range(n_a)]
    b = [inst(100 + k, "B", (*rng.uniform(0, 30, 2), *rng.uniform(3, 15, 2))) for k in range(n_b)]
    ab, ba = match_pair(a, b, t), match_pair(b, a, t)
    assert paired(ab) == paired(ba)
    assert sum(u.m_u for u in ab) == n_a + n_b
    assert all(u.ious[0] >= t for u in ab if u.m_u == 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 6))
def test_raising_threshold_never_adds_pairs(seed, n_a, n_b):
    a, b = random_sets(seed, n_a, n_b)
    previous = None
    for t in np.arange(0.5, 0.951, 0.05):
        pairs = paired(match_pair(a, b, float(t)))
        if previous is not None:
            assert pairs <= previous
        previous = pairs


def test_match_multi_three_annotators():
    sets = {
        "A": [inst(1, "A", (0, 0, 10, 10)), inst(2, "A", (50, 50, 10, 10))],
        "B": [inst(3, "B", (0, 0, 10, 10))],
        "C": [inst(4, "C", (1, 0, 10, 10)), inst(5, "C", (50, 50, 10, 10)), inst(6, "C", (80, 0, 5, 5))],
    }
    units = match_multi(sets, 0.5)
    by_size = sorted((u.m_u, sorted(u.instance_ids())) for u in units)
    assert by_size == [(1, [6]), (2, [2, 5]), (3, [1, 3, 4])]
    assert sum(u.m_u for u in units) == 6


def test_match_multi_representative_first_vs_union():
    # union of A and B is (0, 0, 15, 10): IoU 2/3 with C, while A alone gives 1/3
    sets = {
        "A": [inst(1, "A", (0, 0, 10, 10))],
        "B": [inst(2, "B", (3, 0, 12, 10))],
        "C": [inst(3, "C", (5, 0, 10, 10))],
    }
    union_units = match_multi(sets, 0.4, representative="union")
    first_units = match_multi(sets, 0.4, representative="first")
    assert max(u.m_u for u in union_units) == 3
    assert max(u.m_u for u in first_units) == 2
    with pytest.raises(ValueError):
        match_multi(sets, representative="mean")


def test_match_multi_each_unit_holds_one_instance_per_annotator():
    rng = np.random.default_rng(5)
    sets = {
        ann: [inst(10 * k + i, ann, (*rng.integers(0, 20, 2), 10, 10)) for i in range(4)]
        for k, ann in enumerate("ABCD")
    }
    units = match_multi(sets, 0.3)
    seen = [i for u in units for i in u.instance_ids()]
    assert len(seen) == len(set(seen)) == 16


def test_match_multi_two_annotators_equals_pair():
    a, b = random_sets(3, 5, 4)
    multi = match_multi({"A": a, "B": b}, 0.4)
    pair = match_pair(a, b, 0.4)
    assert [u.instance_ids() for u in multi] == [u.instance_ids() for u in pair]


def test_region_callback_used():
    a = [inst(1, "A", (0, 0, 10, 10))]
    b = [inst(2, "B", (0, 0, 10, 10))]
    units = match_pair(a, b, region=lambda x: Box(x.id * 100, 0, 10, 10))
    assert all(u.m_u == 1 for u in units)
