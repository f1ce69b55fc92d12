"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""
import json
import math
import time

import numpy as np

from percolation_ldp.events import (ConstrainedConnection, HausdorffBall, PointInCluster,
                                    PointsInCluster, disjoint, escape_event)
from percolation_ldp.geometry import PolygonalSet
from percolation_ldp.lattice import LatticeConfig, estimate_event_probability
from percolation_ldp.ldp import (MIN_ACCEPTANCES, estimate_rate, extract_skeleton,
                                 sample_conditioned, steiner_concentration)
from percolation_ldp.norm import (RateFit, _grid_edges, build_norm_model, forced_path_family,
                                  hyperoctahedral_group, norm_upper_bound_check, synthetic_model,
                                  unit_square_family)
from percolation_ldp.oracle import EnumerationOracle, exact_event_probability
from percolation_ldp.runner import replay, run
from percolation_ldp.stats import wilson_interval
from percolation_ldp.steiner import solve_steiner

E = synthetic_model("euclidean")
UNIT_SQUARE = (((0, 0), (1, 0)), ((1, 0), (1, 1)), ((0, 1), (1, 1)), ((0, 0), (0, 1)))
GRID24 = _grid_edges((-1, -1), (2, 2))  # 4 x 4 sites, 24 edges
SEG = PolygonalSet.segment((0, 0), (1, 0))
ELL = PolygonalSet.polyline([(0, 0), (1, 0), (1, 1)])


def _box(p):
    return LatticeConfig(p=p, box_radius=1)


def _grid(p):
    return LatticeConfig(p=p, box_radius=2, edge_subset=GRID24)


def _square(p):
    return LatticeConfig(p=p, box_radius=1, edge_subset=UNIT_SQUARE)


# twenty fixed (config, event) pairs on boxes with at most 24 edges
CASES = [
    (_square(0.3), PointInCluster((1, 0))),
    (_square(0.45), PointInCluster((1, 1))),
    (_box(0.1), PointInCluster((1, 0))),
    (_box(0.3), PointInCluster((1, 1))),
    (_box(0.45), PointInCluster((-1, 1))),
    (_box(0.3), PointsInCluster(((1, 0), (0, 1)))),
    (_box(0.45), PointsInCluster(((1, 1), (-1, -1)))),
    (_box(0.1), ConstrainedConnection((-1, 0), (1, 0), 0.0)),
    (_box(0.45), ConstrainedConnection((-1, 0), (1, 0), 1.0)),
    (_box(0.3), HausdorffBall(SEG, 0.6)),
    (_box(0.45), HausdorffBall(ELL, 0.75)),
    (_box(0.1), HausdorffBall(PolygonalSet.origin(), 1.2)),
    (_box(0.3), escape_event(PolygonalSet.origin(), 2.0)),
    (_grid(0.1), PointInCluster((1, 1))),
    (_grid(0.3), PointInCluster((2, 2))),
    (_grid(0.45), PointInCluster((2, -1))),
    (_grid(0.3), PointsInCluster(((2, 0), (0, 2)))),
    (_grid(0.45), ConstrainedConnection((-1, -1), (2, 2), 0.5)),
    (_grid(0.45), HausdorffBall(SEG, 0.6)),
    (_grid(0.3), HausdorffBall(PolygonalSet.origin(), 0.8)),
]


def test_criterion_1_oracle_equivalence(record):
    t0 = time.time()
    inside = 0
    worst = ""
    for i, (cfg, ev) in enumerate(CASES):
        assert cfg.num_edges <= 24 and cfg.p in (0.1, 0.3, 0.45)
        exact = exact_event_probability(cfg, ev)
        est = estimate_event_probability(cfg, ev, 100_000, seed=1000 + i, confidence=0.99)
        if est.ci_low <= exact <= est.ci_high:
            inside += 1
        else:
            worst = f"case {i} {ev.kind}: exact {exact:.5f} vs [{est.ci_low:.5f}, {est.ci_high:.5f}]"
    dt = time.time() - t0
    detail = f"{inside}/20 inside 99% Wilson intervals, {dt:.0f}s" + (f"; miss {worst}" if worst else "")
    record(1, "oracle equivalence", len(CASES) == 20 and inside >= 19 and dt < 120, detail)


def _random_increasing(rng, sites):
    kind = rng.integers(3)
    a, b = (tuple(int(x) for x in sites[i]) for i in rng.choice(len(sites), 2, replace=False))
    if kind == 0:
        return PointInCluster(a)
    if kind == 1:
        return PointsInCluster((a, b))
    return ConstrainedConnection(a, b, float(rng.choice([0.0, 0.5, 1.0, 2.0])))


def test_criterion_2_fkg_and_bk(record):
    t0 = time.time()
    rng = np.random.default_rng(2024)
    fkg_bad = 0
    oracles = {}
    for _ in range(50):
        p = float(rng.choice([0.1, 0.3, 0.45]))
        big = bool(rng.integers(2))
        cfg = _grid(p) if big else _box(p)
        o = oracles.setdefault((p, big), EnumerationOracle(cfg))
        sites = cfg.graph.sites[cfg.graph.sites.any(axis=1)]
        a, b = _random_increasing(rng, sites), _random_increasing(rng, sites)
        assert a.increasing and b.increasing
        if o.probability(a & b) < o.probability(a) * o.probability(b) - 1e-15:
            fkg_bad += 1
    bk_bad = 0
    for _ in range(20):
        p = float(rng.choice([0.1, 0.3, 0.45]))
        cfg = _box(p)
        o = oracles.setdefault((p, False), EnumerationOracle(cfg))
        sites = cfg.graph.sites
        ends = rng.choice(len(sites), 4, replace=False)
        pts = [tuple(int(x) for x in sites[i]) for i in ends]
        a = ConstrainedConnection(pts[0], pts[1], float(rng.choice([0.5, 2.0])))
        b = ConstrainedConnection(pts[2], pts[3], float(rng.choice([0.5, 2.0])))
        if o.probability(disjoint(a, b)) > o.probability(a) * o.probability(b) + 1e-15:
            bk_bad += 1
    dt = time.time() - t0
    record(2, "FKG and BK inequalities", fkg_bad == 0 and bk_bad == 0 and dt < 300,
           f"{fkg_bad}/50 FKG and {bk_bad}/20 BK violations, {dt:.0f}s")


def test_criterion_3_norm_axioms(record):
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    N = build_norm_model([RateFit((math.cos(t), math.sin(t)), 1.0) for t in th])
    rng = np.random.default_rng(3)
    u = rng.normal(size=(10_000, 2))
    v = rng.normal(size=(10_000, 2))
    # scaling by powers of two is exact in floating point
    homog = all(np.array_equal(N(t * u), abs(t) * N(u)) for t in (0.25, -2.0, 8.0, 0.0))
    homog_general = all(np.allclose(N(t * u), abs(t) * N(u), rtol=1e-13, atol=0)
                        for t in rng.uniform(-5, 5, 20))
    base = N(u)
    symmetric = all(np.array_equal(N(u @ M.T), base) for M in hyperoctahedral_group(2))
    # equality cases (u, v in one facet cone) round either way at the last bit
    excess = N(u + v) - (N(u) + N(v))
    triangle_bad = int(np.count_nonzero(excess > 1e-12 * (N(u) + N(v))))
    err = float(np.max(np.abs(N(u) / np.linalg.norm(u, axis=1) - 1)))
    ok = homog and homog_general and symmetric and triangle_bad == 0 and err < 0.005
    record(3, "norm model axioms", ok,
           f"homogeneity {homog and homog_general}, symmetry {symmetric}, "
           f"{triangle_bad} triangle violations on 1e4 pairs (max rounding excess {max(excess.max(), 0):.1e}), "
           f"reconstruction error {err:.2e}")


def test_criterion_4_subadditivity(record):
    results = []
    for family in (forced_path_family, unit_square_family):
        for p in (0.1, 0.2, 0.3, 0.45):
            results.append(norm_upper_bound_check(family(p), 1, slack=1e-12))
    ok = all(r is True for r in results)
    record(4, "finite-scale subadditivity", ok, f"{sum(r is True for r in results)}/{len(results)} hold")


def _grid_oracle_m3(P, N, h=1e-3):
    """Single Steiner point on a full h-grid over the terminals' bounding box."""
    lo, hi = P.min(0), P.max(0)
    xs = np.arange(lo[0], hi[0] + h / 2, h)
    best = math.inf
    for y in np.arange(lo[1], hi[1] + h / 2, h):
        X = np.c_[xs, np.full_like(xs, y)]
        best = min(best, float(np.min(sum(N(P[i] - X) for i in range(3)))))
    return best


def _grid_oracle_m4(P, N, h=1e-3):
    """Two Steiner points, coarse-to-fine grid down to spacing h, every full topology."""
    lo, hi = P.min(), P.max()
    best = math.inf
    for (a, b), (c, d) in (((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2))):
        L, H = np.full(4, lo), np.full(4, hi)
        step = (hi - lo) / 14
        while True:
            axes = [np.linspace(x, y, 15) for x, y in zip(L, H)]
            Z = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 4)
            x, y = Z[:, :2], Z[:, 2:]
            vals = N(P[a] - x) + N(P[b] - x) + N(x - y) + N(P[c] - y) + N(P[d] - y)
            i = int(np.argmin(vals))
            if step <= h:
                best = min(best, float(vals[i]))
                break
            L, H = Z[i] - 2 * step, Z[i] + 2 * step
            step = 4 * step / 14
    return best


def test_criterion_5_steiner_golden_values(record):
    t0 = time.time()
    checks = []
    a = np.array([0.7, -1.9])
    for name in ("euclidean", "l1", "linf"):
        N = synthetic_model(name)
        checks.append(("two-terminal " + name, solve_steiner([a], N)[0].total_length == N(a)))
    tri = solve_steiner([(1, 0), (0.5, math.sqrt(3) / 2)], E)
    checks.append(("triangle", abs(tri[0].total_length - math.sqrt(3)) <= 1e-6))
    sq = solve_steiner([(1, 0), (1, 1), (0, 1)], E)
    checks.append(("square", len(sq) == 2 and all(abs(t.total_length - 1 - math.sqrt(3)) <= 1e-6
                                                    for t in sq)))
    rng = np.random.default_rng(55)
    worst = 0.0
    for name in ("euclidean", "l1"):
        N = synthetic_model(name)
        for m in (3, 4):
            for _ in range(3):
                pts = rng.uniform(-1, 1, size=(m - 1, 2))
                got = solve_steiner(pts, N)[0].total_length
                P = np.vstack([[0.0, 0.0], pts])
                ref = _grid_oracle_m3(P, N) if m == 3 else _grid_oracle_m4(P, N)
                worst = max(worst, abs(got - ref))
                checks.append((f"grid {name} m={m}", got <= ref + 1e-9 and ref - got <= 5e-3))
    dt = time.time() - t0
    failed = [c for c, ok in checks if not ok]
    record(5, "Steiner golden values", not failed and dt < 120,
           f"{len(checks) - len(failed)}/{len(checks)} checks, worst grid gap {worst:.1e}, {dt:.0f}s"
           + (f"; failed {failed}" if failed else ""))


def test_criterion_6_skeleton_assertions(record):
    cfg = LatticeConfig(p=0.45, box_radius=2, edge_subset=GRID24)
    skeletons = 0
    bad = 0
    for pts, budget, seed in (([(1, 1)], 40_000, 61), ([(1, 0), (0, 1)], 60_000, 62)):
        k = len(pts) + 1
        clusters, _ = sample_conditioned(pts, 1, cfg, budget, seed=seed)
        for cl in clusters[:5000]:
            sk = extract_skeleton(cl, pts)
            sets = sk.path_edge_sets()
            disjoint_paths = sum(map(len, sets)) == len(frozenset().union(*sets))
            bad += not (sk.num_branch <= k - 2 and disjoint_paths)
            skeletons += 1
    record(6, "skeleton assertions", skeletons == 10_000 and bad == 0,
           f"{skeletons} skeletons, {bad} violations")


def test_criterion_7_zero_rate(record):
    t0 = time.time()
    est = estimate_rate(PolygonalSet.origin(), 0.5, [2, 4, 8], LatticeConfig(p=0.2),
                        replicates=100_000, seed=7, N=E)
    last = est.rows[-1]
    dt = time.time() - t0
    ok = last.n == 8 and last.rate < 0.05 and last.rate_low < 0.05 and dt < 300
    record(7, "zero-rate control", ok,
           f"rate at n=8 {last.rate:.4f}, CI [{last.rate_low:.4f}, {last.rate_high:.4f}], {dt:.0f}s")


def test_criterion_8_concentration_trend(record):
    t0 = time.time()
    _, reps = steiner_concentration([(1, 0)], 0.4, [2, 4, 6], LatticeConfig(p=0.2),
                                    [5000, 100_000, 1_000_000], E, seed=8, gap=False)
    dt = time.time() - t0
    conclusive = [r for r in reps if r.acceptances >= MIN_ACCEPTANCES]
    trend = all(b.failure_fraction <= a.failure_fraction
                or b.failure_interval()[0] <= a.failure_interval()[1]
                for a, b in zip(conclusive, conclusive[1:]))
    parts = [f"n={r.n}: {r.failures}/{r.acceptances}" + ("" if r.acceptances >= MIN_ACCEPTANCES
                                                        else " inconclusive") for r in reps]
    ok = len(conclusive) >= 2 and trend and dt < 900
    record(8, "concentration trend", ok, ", ".join(parts) + f", {dt:.0f}s")


REPRO = {
    "sample": dict(n=3),
    "estimate-norm": dict(replicates=2000),
    "ldp-rate": dict(set="origin", eps=0.5, scales="2,4", replicates=5000, p=0.2),
    "conditioned": dict(points=["0.5,0"], n=2, budget=5000),
    "concentration": dict(points=["1,0"], eps=0.4, scales="2,4", budgets="5000,20000", p=0.2),
    "steiner": dict(terminals=["1,0", "1,1", "0,1"], gauge="euclidean"),
}


def test_criterion_9_reproducibility(record, tmp_path):
    mismatches = []
    for cmd, params in REPRO.items():
        cfg = {"norm": {"directions": 4}} if cmd == "estimate-norm" else None
        serial = run(cmd, config=cfg, out=tmp_path / "serial", seed=9, workers=1, **params)
        parallel = run(cmd, config=cfg, out=tmp_path / "parallel", seed=9, workers=8, **params)
        again = replay(serial.files["manifest.json"], out=tmp_path / "replay")
        if not serial.status == parallel.status == again.status == 0:
            mismatches.append(f"{cmd}: status")
            continue
        manifest = json.loads(serial.files["manifest.json"].read_text())
        for name in manifest["outputs"]:
            data = serial.files[name].read_bytes()
            if data != parallel.files[name].read_bytes() or data != again.files[name].read_bytes():
                mismatches.append(f"{cmd}/{name}")
    record(9, "reproducibility", not mismatches,
           f"{len(REPRO)} experiments replayed and run with 8 workers" +
           (f"; mismatches {mismatches}" if mismatches else ", all byte-identical"))


def test_wilson_interval_is_the_reported_interval():
    # the intervals used above are the standard Wilson score intervals
    lo, hi = wilson_interval(50, 100, 0.99)
    z = 2.5758293035489
    c = (0.5 + z * z / 200) / (1 + z * z / 100)
    w = z * math.sqrt(0.25 / 100 + z * z / 40000) / (1 + z * z / 100)
    assert math.isclose(lo, c - w, rel_tol=1e-9) and math.isclose(hi, c + w, rel_tol=1e-9)
