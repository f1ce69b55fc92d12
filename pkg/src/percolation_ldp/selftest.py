"""Fast sanity suite: the degenerate cases every module must get exactly right."""
from __future__ import annotations

import math

import numpy as np

CHECKS = []


def check(module):
    def wrap(fn):
        CHECKS.append((module, fn.__name__, fn))
        return fn
    return wrap


# percolation_core ---------------------------------------------------------

@check("percolation_core")
def rounding():
    from .lattice import round_to_lattice
    return (np.array_equal(round_to_lattice((0, 0), 7), [0, 0])
            and np.array_equal(round_to_lattice((0.26, -0.9), 2), [0.5, -1.0])
            and np.array_equal(round_to_lattice((0.25, 0.25), 2), [0.5, 0.5]))


@check("percolation_core")
def degenerate_bernoulli():
    from .lattice import LatticeConfig, sample_configuration
    empty = sample_configuration(LatticeConfig(p=0.0, box_radius=3), seed=5)
    full = sample_configuration(LatticeConfig(p=1.0, box_radius=3), seed=5,
                                enforce_subcritical=False)
    return not empty.open_edges and len(full.open_edges) == full.config.num_edges


@check("percolation_core")
def cluster_extraction():
    from .lattice import BondConfiguration, LatticeConfig, extract_origin_cluster
    cfg = LatticeConfig(p=0.0, box_radius=1)
    iso = extract_origin_cluster(BondConfiguration.from_edges(cfg, []))
    full = extract_origin_cluster(BondConfiguration(cfg, np.ones(cfg.num_edges, bool)))
    big = LatticeConfig(p=0.0, box_radius=6)
    part = extract_origin_cluster(BondConfiguration.from_edges(
        big, [((0, 0), (1, 0)), ((1, 0), (1, 1)), ((5, 5), (5, 6))]))
    return (iso.vertices == {(0.0, 0.0)} and not iso.touches_boundary
            and len(full) == 9 and full.touches_boundary
            and part.vertices == {(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)})


@check("percolation_core")
def oracle_trivial():
    from .events import PointInCluster
    from .lattice import LatticeConfig
    from .oracle import exact_event_probability
    origin = exact_event_probability(LatticeConfig(p=0.3, box_radius=1), PointInCluster((0, 0)))
    edge = LatticeConfig(p=0.5, box_radius=1, edge_subset=(((0, 0), (1, 0)),))
    return origin == 1.0 and exact_event_probability(edge, PointInCluster((1, 0))) == 0.5


@check("percolation_core")
def monte_carlo_trivial():
    from .events import PointInCluster
    from .lattice import LatticeConfig, estimate_event_probability
    cfg = LatticeConfig(p=0.3, box_radius=2)
    a = estimate_event_probability(cfg, PointInCluster((0, 0)), 500, seed=1)
    b = estimate_event_probability(cfg.with_(p=0.0), PointInCluster((1, 0)), 500, seed=1)
    return a.value == 1.0 and a.ci_low < 1 and b.value == 0.0


# set_geometry -------------------------------------------------------------

@check("set_geometry")
def hausdorff_trivial():
    from .geometry import PointCloud, PolygonalSet, hausdorff_distance
    X = PolygonalSet.polyline([(0, 0), (1, 0), (1, 1)])
    seg = PolygonalSet.segment((0, 0), (1, 0))
    return (hausdorff_distance(X, X) == 0
            and math.isclose(hausdorff_distance(PointCloud([(0, 0)]), PointCloud([(3, 4)])), 5)
            and math.isclose(hausdorff_distance(seg, PointCloud([(0, 0), (1, 0)])), 0.5))


@check("set_geometry")
def neighbourhood_trivial():
    from .geometry import PolygonalSet, epsilon_neighborhood_contains as contains
    O = PolygonalSet.origin()
    seg = PolygonalSet.segment((0, 0), (2, 0))
    return contains(O, 1, (0.999, 0)) and not contains(O, 1, (1, 0)) and contains(seg, 0.5, (1, 0.4))


@check("set_geometry")
def length_trivial():
    from .geometry import PolygonalSet, norm_length
    from .norm import synthetic_model
    E = synthetic_model("euclidean")
    L = PolygonalSet.polyline([(0, 1), (0, 0), (1, 0)])
    return (norm_length(PolygonalSet.origin(), E) == 0
            and math.isclose(norm_length(PolygonalSet.segment((0, 0), (3, 4)), E), 5)
            and math.isclose(norm_length(L, E), 2))


@check("set_geometry")
def simplify_trivial():
    from .geometry import PolygonalSet, hausdorff_distance, simplify
    X = PolygonalSet.polyline([(0, 0), (1, 0), (1, 1)])
    dense = PolygonalSet.polyline(np.c_[np.linspace(0, 1, 1000), np.zeros(1000)])
    s = simplify(dense, 0.01)
    return (hausdorff_distance(simplify(X, 1e-3), X) == 0 and len(s.segments) == 1
            and hausdorff_distance(s, PolygonalSet.segment((0, 0), (1, 0))) == 0)


# correlation_norm ---------------------------------------------------------

@check("correlation_norm")
def norm_trivial():
    from .norm import RateFit, build_norm_model, synthetic_model
    E = synthetic_model("euclidean")
    u = np.array([0.3, -1.7])
    try:
        build_norm_model([RateFit((1.0, 0.0), 1.0)])
        rank_guard = False
    except ValueError:
        rank_guard = True
    return E(np.zeros(2)) == 0 and E(2 * u) == 2 * E(u) and math.isclose(E((3, 4)), 5) and rank_guard


@check("correlation_norm")
def direction_guard():
    from .lattice import LatticeConfig
    from .norm import measure_direction
    try:
        measure_direction((0, 0), [1, 2, 3], LatticeConfig(), exact=True)
    except ValueError:
        return True
    return False


@check("correlation_norm")
def vacuous_upper_bound():
    from .norm import forced_path_family, norm_upper_bound_check
    return norm_upper_bound_check(forced_path_family(0.0), 1) is None


# steiner_solver -----------------------------------------------------------

@check("steiner_solver")
def steiner_trivial():
    from .norm import synthetic_model
    from .steiner import enumerate_topologies, solve_steiner
    E = synthetic_model("euclidean")
    one = solve_steiner([(3, 4)], E)
    line = solve_steiner([(-1, 0), (1, 0)], E)
    return (len(enumerate_topologies(2)) == 1 and len(one) == 1
            and math.isclose(one[0].total_length, 5) and one[0].topology.s == 0
            and len(line) == 1 and math.isclose(line[0].total_length, 2)
            and line[0].topology.s == 0)


# ldp_harness --------------------------------------------------------------

@check("ldp_harness")
def conditioning_trivial():
    from .lattice import LatticeConfig
    from .ldp import sample_conditioned
    _, free = sample_conditioned([], 1, LatticeConfig(p=0.3, box_radius=2), 200, seed=2)
    _, none = sample_conditioned([(1, 0)], 1, LatticeConfig(p=0.0, box_radius=2), 200, seed=2)
    return free.acceptances == free.attempts == 200 and none.acceptances == 0


@check("ldp_harness")
def skeleton_trivial():
    from .lattice import BondConfiguration, LatticeConfig, extract_origin_cluster
    from .ldp import extract_skeleton
    cfg = LatticeConfig(p=0.0, box_radius=3)
    path = extract_origin_cluster(BondConfiguration.from_edges(
        cfg, [((0, 0), (1, 0)), ((1, 0), (2, 0))]))
    sk = extract_skeleton(path, [(2, 0)])
    plus = extract_origin_cluster(BondConfiguration.from_edges(cfg, [
        ((0, 0), (1, 0)), ((1, 0), (2, 0)), ((0, 0), (0, 1)), ((0, 1), (0, 2)),
        ((-1, 0), (0, 0)), ((-2, 0), (-1, 0)), ((0, -1), (0, 0)), ((0, -2), (0, -1))]))
    sp = extract_skeleton(plus, [(2, 0), (0, 2), (-2, 0)])
    return (sk.num_branch == 0 and sk.num_edges == 2 and sp.num_branch == 1
            and np.array_equal(sp.branch[0], [0, 0]) and sp.num_edges == 6)


@check("ldp_harness")
def zero_rate_origin():
    from .geometry import PolygonalSet
    from .lattice import LatticeConfig
    from .ldp import estimate_rate
    est = estimate_rate(PolygonalSet.origin(), 0.5, [2, 4], LatticeConfig(p=0.2), 2000, seed=3)
    return est.per_scale[-1].rate < est.per_scale[0].rate


@check("ldp_harness")
def vacuous_concentration():
    from .lattice import LatticeConfig
    from .ldp import steiner_concentration
    from .norm import synthetic_model
    _, reps = steiner_concentration([(1, 0)], 100.0, [1], LatticeConfig(p=0.2), 500,
                                    synthetic_model("euclidean"), seed=4, gap=False)
    return reps[0].acceptances > 0 and reps[0].failures == 0


# cli_runner ---------------------------------------------------------------

@check("cli_runner")
def config_trivial():
    from .config import SCHEMA, InfeasibleConfig, dump_config, validate_config
    cfg, defaults = validate_config("")
    try:
        validate_config("[lattice]\np = 0.7\nd = 2\n")
        gate = False
    except InfeasibleConfig:
        gate = True
    again, redone = validate_config(dump_config(cfg))
    return (len(defaults) == sum(len(v) for v in SCHEMA.values()) and gate
            and again == cfg and not redone)


def run_all(stream=None):
    """Run every check; returns (passed, results) with results as (module, name, ok, error)."""
    results = []
    for module, name, fn in CHECKS:
        try:
            ok, err = bool(fn()), ""
        except Exception as exc:  # a crashing check is a failing check
            ok, err = False, f"{type(exc).__name__}: {exc}"
        results.append((module, name, ok, err))
        if stream is not None:
            print(f"{'PASS' if ok else 'FAIL'} {module}.{name}{'  ' + err if err else ''}",
                  file=stream)
    return all(r[2] for r in results), results
