import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import chain_closure, partition_sets
from svfield.box import Box
from svfield.clusters import (box_clusters, cluster, count_regions, exceedance_set, poisson_gof,
                              proximity_clusters)
from svfield.geometry import ShapeC, build_index_set
from svfield.lattice_sim import FieldSample


def _geom1(c=10, t=3):
    return build_index_set(ShapeC.unit_box(1), c, t)


def test_exceedance_examples():
    g = build_index_set(ShapeC.unit_box(1), 5, 1)
    f = FieldSample(Box((0,), (5,)), np.array([3.0, 0, 7, 7, 1]))
    assert exceedance_set(f, g, 2).ravel().tolist() == [0, 2, 3]
    assert len(exceedance_set(FieldSample(g.bbox, np.zeros(5)), g, 0.0)) == 0
    assert len(exceedance_set(f, g, -1)) == 5
    with pytest.raises(ValueError):
        exceedance_set(FieldSample(Box((1,), (5,)), np.ones(4)), g, 0)


def test_box_rule_examples():
    g = _geom1()
    assert box_clusters(np.zeros((0, 1), dtype=int), g).gamma == 0
    p = box_clusters([[0], [2], [5]], g)
    assert p.gamma == 2
    assert [c.ravel().tolist() for c in p.clusters] == [[0, 2], [5]]
    one_each = box_clusters([[1], [4], [7]], g)
    assert one_each.gamma == 3


def test_proximity_rule_examples():
    assert proximity_clusters(np.zeros((0, 1), dtype=int), 3).gamma == 0
    p = proximity_clusters([[0], [2], [5]], 3)
    assert [c.ravel().tolist() for c in p.clusters] == [[0, 2], [5]]
    p2 = proximity_clusters([[0, 0], [1, 1], [5, 5]], (2, 2))
    assert partition_sets(p2) == {frozenset({(0, 0), (1, 1)}), frozenset({(5, 5)})}
    p2.validate((2, 2))


def test_chain_merges_through_intermediate():
    p = proximity_clusters([[0], [2], [4], [6]], 3)
    assert p.gamma == 1


def _random_instances(n, seed):
    r = np.random.default_rng(seed)
    for _ in range(n):
        d = int(r.integers(1, 3))
        k = int(r.integers(0, 51))
        t = r.integers(1, 5, size=d)
        pts = r.integers(0, 30, size=(k, d))
        yield np.unique(pts, axis=0).reshape(-1, d), t


def test_proximity_matches_oracle_on_random_instances():
    mismatches = 0
    for phi, t in _random_instances(1000, 0):
        if len(phi) == 0:
            assert proximity_clusters(phi, t).gamma == 0
            continue
        part = proximity_clusters(phi, t)
        part.validate(t)
        mismatches += partition_sets(part) != chain_closure(phi, t)
    assert mismatches == 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 40), st.integers(0, 40)), max_size=50, unique=True),
       st.integers(1, 6), st.integers(1, 6))
def test_proximity_property(points, t0, t1):
    phi = np.array(points, dtype=np.int64).reshape(-1, 2)
    part = proximity_clusters(phi, (t0, t1))
    part.validate((t0, t1))
    if len(phi):
        assert partition_sets(part) == chain_closure(phi, (t0, t1))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 59), st.integers(0, 59)), max_size=60, unique=True),
       st.integers(1, 12))
def test_proximity_never_exceeds_box_count(points, t):
    # default shift: every J-box has side t, so sites of one box are within t - 1
    g = build_index_set(ShapeC.unit_box(2), 60, t)
    phi = np.array(points, dtype=np.int64).reshape(-1, 2)
    nb, np_ = box_clusters(phi, g), proximity_clusters(phi, g.t_n)
    nb.validate()
    assert np_.gamma <= nb.gamma
    counts_box = count_regions(nb, [g.shape], g).counts[0]
    counts_prox = count_regions(np_, [g.shape], g).counts[0]
    assert (counts_box, counts_prox) == (nb.gamma, np_.gamma)


def test_count_regions_straddling_and_partition():
    g = build_index_set(ShapeC.unit_box(2), 20, 4)
    left, right = ShapeC.box((0, 0), (0.5, 1)), ShapeC.box((0.5, 0), (1, 1))
    straddle = proximity_clusters([[9, 3], [10, 3]], g.t_n)
    assert count_regions(straddle, [left, right], g).counts == [1, 1]
    apart = proximity_clusters([[1, 1], [2, 2], [15, 15], [18, 1]], g.t_n)
    counts = count_regions(apart, [left, right], g).counts
    assert sum(counts) == apart.gamma == 3
    with pytest.raises(ValueError):
        count_regions(apart, [ShapeC.box((0.5, 0), (1.5, 1))], g)


def test_count_regions_lattice_scale():
    g = _geom1(12, 3)
    part = box_clusters([[0], [4], [11]], g)
    assert count_regions(part, [np.array([[0], [1], [2], [3], [4]])], g, scale="lattice").counts == [2]


def test_count_regions_monotone():
    g = build_index_set(ShapeC.unit_box(2), 30, 5)
    r = np.random.default_rng(1)
    phi = np.unique(r.integers(0, 30, size=(40, 2)), axis=0)
    small, big = ShapeC.box((0, 0), (0.3, 0.4)), ShapeC.box((0, 0), (0.6, 1))
    for rule in ("box", "proximity"):
        a, b = count_regions(cluster(phi, g, rule), [small, big], g).counts
        assert a <= b


def test_poisson_gof_accepts_poisson():
    r = np.random.default_rng(2)
    passes = 0
    for _ in range(100):
        rep = poisson_gof(r.poisson(3.0, 10**4), 3.0)
        assert 0.95 <= rep.dispersion <= 1.05
        passes += rep.p_value > 0.01
    assert passes >= 95


def test_poisson_gof_type_one_error():
    r = np.random.default_rng(3)
    rejects = sum(poisson_gof(r.poisson(1.5, 500), 1.5).p_value < 0.05 for _ in range(1000))
    assert 0.03 <= rejects / 1000 <= 0.07


def test_poisson_gof_rejects_constant_and_geometric():
    const = poisson_gof(np.full(1000, 3), 3.0)
    assert const.dispersion == 0 and not const.passes()
    r = np.random.default_rng(4)
    geo = r.geometric(0.25, 10**4) - 1  # mean 3
    rep = poisson_gof(geo, 3.0)
    assert rep.dispersion > 1 and not rep.passes()
    with pytest.raises(ValueError):
        poisson_gof([1, 2, 3], 0.0)
