import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cppmech.exceptions import CapacityError, InputError
from cppmech.valuations import (
    CoverageValuation,
    GraphicMatroid,
    LotterySpec,
    MrsValuation,
    PartitionMatroid,
    UniformMatroid,
    additive_valuation,
    lottery_value,
    lottery_value_mc,
    rank,
    valuation_from_json,
    valuation_to_json,
    value,
    zero_valuation,
)
from cppmech.verify import random_coverage, random_matroid, random_mrs, rank_axiom_violations, \
    set_function_violations

TRIANGLE = GraphicMatroid(((1, 2), (2, 3), (3, 1)))
TWO_POINTS = CoverageValuation(2, [1.0, 1.0], ({0}, {1}))


def test_uniform_rank_caps():
    assert rank(UniformMatroid(3, 2), {0, 1, 2}) == 2


@pytest.mark.parametrize("matroid", [UniformMatroid(3, 2), PartitionMatroid(3, ({0, 1}, {2}), (1, 1)), TRIANGLE])
def test_rank_of_empty_set_is_zero(matroid):
    assert rank(matroid, set()) == 0


def test_triangle_spanning_tree_has_two_edges():
    assert rank(TRIANGLE, {0, 1, 2}) == 2
    # every pair of edges of a triangle is a forest
    for pair in itertools.combinations(range(3), 2):
        assert rank(TRIANGLE, pair) == 2


def test_graphic_parallel_edges_and_loops():
    g = GraphicMatroid(((0, 1), (0, 1), (2, 2)))
    assert rank(g, {0, 1}) == 1
    assert rank(g, {2}) == 0


def test_partition_rank():
    p = PartitionMatroid(4, ({0, 1}, {2, 3}), (1, 2))
    assert rank(p, {0, 1, 2, 3}) == 3
    assert rank(p, {0, 1}) == 1


def test_rank_rejects_out_of_range_index():
    with pytest.raises(InputError):
        rank(UniformMatroid(3, 1), {3})


@pytest.mark.parametrize("bad", [
    lambda: UniformMatroid(3, 4),
    lambda: PartitionMatroid(3, ({0}, {1}), (1, 1)),
    lambda: PartitionMatroid(2, ({0}, {1}), (1, -1)),
    lambda: GraphicMatroid(((0, -1),)),
    lambda: GraphicMatroid(((0, 1, 2),)),
])
def test_matroid_invariants_enforced(bad):
    with pytest.raises(InputError):
        bad()


@pytest.mark.parametrize("seed", range(12))
def test_rank_axioms_on_random_matroids(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 8))
    assert rank_axiom_violations(random_matroid(m, rng)) == []


def test_rank_table_matches_rank():
    rng = np.random.default_rng(3)
    for _ in range(10):
        mat = random_matroid(6, rng)
        table = mat.rank_table()
        for mask in range(64):
            S = frozenset(j for j in range(6) if mask >> j & 1)
            assert table[mask] == mat.rank(S)


def test_value_examples():
    assert value(MrsValuation(2, ((1.0, UniformMatroid(2, 1)),)), {0, 1}) == 1.0
    assert value(TWO_POINTS, {0, 1}) == 2.0
    v = MrsValuation(3, ((2.0, UniformMatroid(3, 2)), (1.0, UniformMatroid(3, 1))))
    assert value(v, {0, 1}) == 5.0


def test_negative_weight_rejected_with_field_name():
    with pytest.raises(InputError, match=r"terms\[0\]\.weight"):
        MrsValuation(2, ((-1.0, UniformMatroid(2, 1)),))


@pytest.mark.parametrize("seed", range(8))
def test_random_valuations_are_monotone_submodular(seed):
    rng = np.random.default_rng(seed)
    for v in (random_mrs(6, rng), random_coverage(6, rng)):
        assert set_function_violations(v) == []


def test_coverage_lottery_closed_form():
    assert lottery_value(CoverageValuation(1, [1.0], ({0},)), LotterySpec([1.0], 1)) == 1.0
    spec = LotterySpec([0.5, 0.5], 2)
    assert lottery_value(TWO_POINTS, spec) == pytest.approx(1.5, abs=1e-15)
    assert lottery_value(TWO_POINTS.as_mrs(), spec) == pytest.approx(1.5, abs=1e-15)


def test_lottery_value_by_enumerating_draw_pairs():
    # four equally likely ordered pairs of draws
    y = [0.5, 0.5]
    pairs = itertools.product(range(2), repeat=2)
    expected = np.mean([TWO_POINTS.value(set(p)) for p in pairs])
    assert lottery_value(TWO_POINTS, LotterySpec(y, 2)) == pytest.approx(expected)


def test_zero_valuation_lottery_value():
    assert lottery_value(zero_valuation(4), LotterySpec([0.1, 0.2, 0.3, 0.1], 3)) == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_coverage_closed_form_equals_enumeration(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 8))
    v = random_coverage(m, rng)
    y = rng.dirichlet(np.ones(m + 1))[:m]
    R = frozenset(np.flatnonzero(rng.random(m) < 0.3).tolist())
    spec = LotterySpec(y, int(rng.integers(1, 5)), R)
    assert abs(lottery_value(v, spec) - lottery_value(v.as_mrs(), spec)) <= 1e-12


def test_point_mass_degenerates_to_value():
    rng = np.random.default_rng(0)
    v = random_mrs(5, rng)
    for j in range(5):
        y = np.zeros(5)
        y[j] = 1.0
        for R in (frozenset(), frozenset({(j + 1) % 5})):
            assert lottery_value(v, LotterySpec(y, 3, R)) == pytest.approx(v.value(R | {j}))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), j=st.integers(0, 4), bump=st.floats(0.0, 0.2))
def test_lottery_value_monotone_in_marginals(seed, j, bump):
    rng = np.random.default_rng(seed)
    v = random_mrs(5, rng)
    y = rng.dirichlet(np.ones(6))[:5] * 0.7
    y2 = y.copy()
    y2[j] += bump
    assert lottery_value(v, LotterySpec(y2, 2)) >= lottery_value(v, LotterySpec(y, 2)) - 1e-12


def test_lottery_value_monotone_in_promise():
    rng = np.random.default_rng(5)
    v = random_mrs(5, rng)
    y = np.full(5, 0.15)
    small = lottery_value(v, LotterySpec(y, 2, {1}))
    big = lottery_value(v, LotterySpec(y, 2, {1, 3}))
    assert big >= small - 1e-12


def test_lottery_spec_rejects_excess_mass():
    with pytest.raises(InputError):
        LotterySpec([0.7, 0.4], 1)


def test_lottery_spec_renormalizes_tiny_excess():
    spec = LotterySpec([0.5, 0.5 + 5e-10], 1)
    assert spec.marginals.sum() <= 1.0


def test_enumeration_cap_raises_capacity_error():
    v = MrsValuation(6, ((1.0, UniformMatroid(6, 2)),))
    with pytest.raises(CapacityError, match="coverage"):
        lottery_value(v, LotterySpec(np.full(6, 0.1), 2), cap=5)


def test_coverage_bypasses_enumeration_cap():
    m = 40
    v = CoverageValuation(m, np.ones(m), tuple({j} for j in range(m)))
    val = lottery_value(v, LotterySpec(np.full(m, 1 / m), 3), cap=5)
    assert val == pytest.approx(m * (1 - (1 - 1 / m) ** 3))


def test_mc_examples():
    assert lottery_value_mc(zero_valuation(3), LotterySpec([0.2, 0.2, 0.2], 2), 100, 0) == (0.0, 0.0)
    est, err = lottery_value_mc(TWO_POINTS, LotterySpec([1.0, 0.0], 3), 1000, 0)
    assert (est, err) == (1.0, 0.0)
    est, err = lottery_value_mc(TWO_POINTS, LotterySpec([0.5, 0.5], 2), 10**6, 1)
    assert abs(est - 1.5) <= 4 * err


def test_mc_is_deterministic_given_seed():
    spec = LotterySpec([0.3, 0.4], 2)
    assert lottery_value_mc(TWO_POINTS, spec, 500, 9) == lottery_value_mc(TWO_POINTS, spec, 500, 9)


def test_mc_coverage_of_four_stderr_band():
    rng = np.random.default_rng(2)
    v = random_mrs(4, rng)
    spec = LotterySpec(rng.dirichlet(np.ones(5))[:4], 3, {0})
    exact = lottery_value(v, spec)
    hits = sum(abs(est - exact) <= 4 * err
               for est, err in (lottery_value_mc(v, spec, 2000, s) for s in range(200)))
    assert hits >= 198


def test_json_round_trip():
    rng = np.random.default_rng(4)
    for v in (random_mrs(5, rng), random_coverage(5, rng), TWO_POINTS):
        again = valuation_from_json(valuation_to_json(v), v.m)
        assert np.array_equal(again.table(), v.table())
        assert valuation_to_json(again) == valuation_to_json(v)


@pytest.mark.parametrize("obj, path", [
    ({"type": "mrs", "terms": [{"weight": "x", "matroid": {"kind": "uniform", "rank": 1}}]}, r"terms\[0\]\.weight"),
    ({"type": "mrs", "terms": [{"weight": 1, "matroid": {"kind": "cube"}}]}, r"matroid\.kind"),
    ({"type": "coverage", "universe": [{"id": "a", "weight": 1}], "sets": {"3": ["a"]}}, r"sets"),
    ({"type": "coverage", "universe": [{"id": "a", "weight": 1}], "sets": {"1": ["b"]}}, r"unknown point"),
    ({"type": "mrs", "terms": [{"weight": 1, "matroid": {"kind": "graphic", "edges": [[1, 2]]}}]}, r"edges"),
    ({"type": "nope"}, r"type"),
])
def test_json_errors_name_the_field(obj, path):
    with pytest.raises(InputError, match=path):
        valuation_from_json(obj, 2, "players[0]")


def test_additive_valuation_is_modular():
    v = additive_valuation([3.0, 1.0, 2.0])
    assert v.value({0, 2}) == 5.0
    assert math.isclose(v.grand_value, 6.0)
