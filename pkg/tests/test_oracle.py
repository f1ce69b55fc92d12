import math
from itertools import combinations

import numpy as np
import pytest

from percolation_ldp.events import (ConstrainedConnection, HausdorffBall, PointInCluster,
                                    PointsInCluster, Region, SetConnection, disjoint,
                                    escape_event)
from percolation_ldp.geometry import PointCloud, PolygonalSet, hausdorff_distance
from percolation_ldp.lattice import (BondConfiguration, LatticeConfig, estimate_event_probability,
                                     extract_origin_cluster)
from percolation_ldp.norm import _grid_edges
from percolation_ldp.oracle import (EnumerationCapError, EnumerationOracle, _disjoint_brute_force,
                                    exact_event_probability)

UNIT_SQUARE = (((0, 0), (1, 0)), ((1, 0), (1, 1)), ((0, 1), (1, 1)), ((0, 0), (0, 1)))


def test_unit_square_example():
    cfg = LatticeConfig(p=0.3, box_radius=1, edge_subset=UNIT_SQUARE)
    assert math.isclose(exact_event_probability(cfg, PointInCluster((1, 0))), 0.3189, abs_tol=1e-15)


def test_trivial_examples():
    assert exact_event_probability(LatticeConfig(p=0.3, box_radius=1), PointInCluster((0, 0))) == 1.0
    one = LatticeConfig(p=0.5, box_radius=1, edge_subset=(((0, 0), (1, 0)),))
    assert exact_event_probability(one, PointInCluster((1, 0))) == 0.5


def test_cap_refusal_names_edge_count():
    with pytest.raises(EnumerationCapError, match="40"):
        EnumerationOracle(LatticeConfig(box_radius=2))


def test_full_24_edge_box_runs():
    cfg = LatticeConfig(p=0.3, box_radius=3, edge_subset=_grid_edges((0, 0), (3, 3)))
    assert cfg.num_edges == 24
    p = exact_event_probability(cfg, PointInCluster((3, 3)))
    assert 0 < p < 0.3 ** 6 * 30


def test_counts_total_and_weights_sum():
    o = EnumerationOracle(LatticeConfig(p=0.3, box_radius=1))
    c = o.counts(PointInCluster((0, 0)))
    assert [int(x) for x in c] == [math.comb(12, k) for k in range(13)]
    assert math.isclose(o.weights().sum(), 1.0)


def _brute(cfg, predicate):
    """Independent reference: loop over configurations with plain Python clusters."""
    E = cfg.num_edges
    total = 0.0
    for w in range(1 << E):
        mask = np.array([(w >> e) & 1 for e in range(E)], bool)
        cl = extract_origin_cluster(BondConfiguration(cfg, mask))
        if predicate(cl):
            k = int(mask.sum())
            total += cfg.p ** k * (1 - cfg.p) ** (E - k)
    return total


def test_point_event_matches_python_loop():
    cfg = LatticeConfig(p=0.37, box_radius=1)
    ref = _brute(cfg, lambda cl: cl.contains_site((1, 1)))
    assert math.isclose(exact_event_probability(cfg, PointInCluster((1, 1))), ref, rel_tol=1e-12)


@pytest.mark.parametrize("S, eps", [
    (PolygonalSet.segment((0, 0), (1, 0)), 0.6),
    (PolygonalSet.segment((0, 0), (1, 0)), 0.8),
    (PolygonalSet.polyline([(0, 0), (1, 0), (1, 1)]), 0.75),
    (PolygonalSet.origin(), 1.2),
])
def test_hausdorff_ball_matches_geometry(S, eps):
    cfg = LatticeConfig(p=0.3, box_radius=1)
    ref = _brute(cfg, lambda cl: hausdorff_distance(PointCloud(cl.points), S) < eps)
    assert math.isclose(exact_event_probability(cfg, HausdorffBall(S, eps)), ref,
                        rel_tol=1e-12, abs_tol=1e-15)


def test_hausdorff_ball_needs_positive_eps():
    with pytest.raises(ValueError):
        HausdorffBall(PolygonalSet.origin(), 0.0)


def test_segment_ball_at_n1_small_eps_is_impossible():
    # the midpoint of the segment is 0.5 away from every site
    cfg = LatticeConfig(p=0.3, box_radius=2)
    assert exact_event_probability(cfg, HausdorffBall(PolygonalSet.segment((0, 0), (1, 0)), 0.3)) == 0


def test_constrained_connection_forced_path():
    for n in (1, 2, 3):
        cfg = LatticeConfig(n=n, p=0.3, box_radius=n)
        ev = ConstrainedConnection((0, 0), (1, 0), 0.0)
        assert math.isclose(exact_event_probability(cfg, ev), 0.3 ** n, rel_tol=1e-12)


def _connected(graph, mask, src, dst):
    seen, stack = {src}, [src]
    while stack:
        u = stack.pop()
        for e, v in graph.incidence[u]:
            if mask[e] and v not in seen:
                seen.add(v)
                stack.append(v)
    return dst in seen


@pytest.mark.parametrize("eps", [0.0, 0.5, 1.0])
def test_constrained_connection_matches_python_loop(eps):
    cfg = LatticeConfig(p=0.4, box_radius=1)
    g = cfg.graph
    ev = ConstrainedConnection((-1, 0), (1, 0), eps)
    allowed = ev.allowed_edges(g, 1)
    src, dst = g.site_index((-1, 0)), g.site_index((1, 0))
    o = EnumerationOracle(cfg)
    flags = o.flags(ev)
    for w in range(1 << cfg.num_edges):
        assert flags[w] == _connected(g, o.open_mask(w) & allowed, src, dst)
    # the support reduction leaves the probability unchanged
    assert math.isclose(exact_event_probability(cfg, ev), o.probability(ev), rel_tol=1e-12)


def test_set_connection_and_escape():
    S = PolygonalSet.origin()
    cfg = LatticeConfig(p=0.3, box_radius=1)
    ev = escape_event(S, 2.0)  # from outside B_1(0) to B_0.5(0)
    ref = _brute(cfg, lambda cl: any(np.linalg.norm(x) >= 1.0 for x in cl.points))
    assert math.isclose(exact_event_probability(cfg, ev), ref, rel_tol=1e-12)
    always = SetConnection(Region(S, 1.0), Region(S, 0.5))
    assert exact_event_probability(cfg, always) == 1.0


def test_monotone_in_p_and_box():
    ev = PointInCluster((1, 1))
    ps = [0.05, 0.2, 0.35, 0.5]
    vals = [exact_event_probability(LatticeConfig(p=p, box_radius=1), ev) for p in ps]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    sub = LatticeConfig(p=0.3, box_radius=2, edge_subset=_grid_edges((-1, -1), (1, 1)))
    bigger = LatticeConfig(p=0.3, box_radius=2, edge_subset=_grid_edges((-1, -1), (2, 1)))
    assert exact_event_probability(sub, ev) <= exact_event_probability(bigger, ev)


def test_fkg_on_small_box():
    cfg = LatticeConfig(p=0.3, box_radius=1)
    o = EnumerationOracle(cfg)
    events = [PointInCluster(u) for u in [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, -1)]]
    events.append(ConstrainedConnection((-1, 0), (1, 0), 0.0))
    for a, b in combinations(events, 2):
        pa, pb = o.probability(a), o.probability(b)
        assert o.probability(a & b) >= pa * pb - 1e-15


def test_bk_matches_brute_force_and_holds():
    cfg = LatticeConfig(p=0.4, box_radius=1)
    o = EnumerationOracle(cfg)
    a = ConstrainedConnection((-1, 0), (1, 1), 2.0)
    b = ConstrainedConnection((0, -1), (0, 1), 2.0)
    ab = disjoint(a, b)
    fast = o.flags(ab)
    slow = _disjoint_brute_force(o, ab)
    assert np.array_equal(fast, slow)
    assert o.probability(ab) <= o.probability(a) * o.probability(b) + 1e-15


def test_disjoint_requires_connection_events():
    with pytest.raises(TypeError):
        disjoint(PointsInCluster(((1, 0),)), PointInCluster((1, 0)))


def test_oracle_monte_carlo_agreement():
    # each 99% interval misses 1% of the time; with six cases, two or more
    # misses has probability about 0.0015 for a correct sampler
    misses = 0
    for p in (0.1, 0.3, 0.45):
        cfg = LatticeConfig(p=p, box_radius=1)
        for ev in (PointInCluster((1, 1)), PointsInCluster(((1, 0), (0, 1)))):
            exact = exact_event_probability(cfg, ev)
            est = estimate_event_probability(cfg, ev, 100_000, seed=17).with_confidence(0.99)
            misses += not est.contains(exact)
    assert misses <= 1
