"""Finite-scale large-deviation experiments.

Rates -(1/n) log P(delta(C_n, S) < eps) across scales, rejection-sampled
clusters conditioned on containing given points, tree skeletons of those
clusters, and their concentration around Steiner trees of the norm model.
"""
from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .events import HausdorffBall, PointsInCluster, _hausdorff_plan, check_targets_in_box
from .geometry import (GeometryError, PointCloud, PolygonalSet, distance_to_set,
                       hausdorff_distance, norm_length)
from .norm import BOUNDARY_TOUCH_LIMIT
from .lattice import (BatchContext, Cluster, LatticeConfig, auto_box_radius, clusters_from_batch,
                      estimate_event_probability, lattice_site, map_batches)
from .oracle import exact_event_probability
from .stats import EstimateWithCI, derive_seed, wilson_interval
from .steiner import enumerate_topologies, optimize_positions, solve_steiner

MIN_ACCEPTANCES = 30
CSV_COLUMNS = ("scale_n", "replicates", "hits", "p_hat", "ci_low", "ci_high",
               "neg_log_p_over_n", "lambda_ref", "boundary_touch_frac")


class ResolutionError(ValueError):
    """The event cannot occur at some scale: eps is below the lattice resolution."""


class SkeletonError(RuntimeError):
    """A structural bound on the skeleton failed; this indicates a bug."""


# --------------------------------------------------------------------------
# rate estimation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleRow:
    n: int
    replicates: int
    hits: int
    p_hat: float
    ci_low: float
    ci_high: float
    rate: float  # -(1/n) log p_hat, inf without hits
    rate_low: float
    rate_high: float
    boundary_touch_frac: float = 0.0
    box_radius: int = 0
    exact: bool = False


@dataclass
class RateEstimate:
    event: str
    eps: float
    per_scale: list  # rows with at least one hit
    rows: list  # every scale, for the CSV
    trend: float | None
    intercept: float | None
    lambda_reference: float | None
    lower_bound: float | None = None  # set when no scale had a hit

    @property
    def scales(self):
        return [r.n for r in self.rows]

    def rate_at(self, n):
        for r in self.per_scale:
            if r.n == n:
                return r
        return None


def _sup_radius(S: PolygonalSet) -> float:
    return float(np.abs(S.vertices).max()) if len(S.vertices) else 0.0


def hausdorff_box_radius(S: PolygonalSet, eps: float, n: int) -> int:
    """Box radius beyond which no site is within eps of S.

    Any cluster reaching the box boundary already contains a site at
    distance >= eps from S, so the event is decided inside the box.
    """
    return max(1, int(math.floor(n * (_sup_radius(S) + eps))) + 1)


def hausdorff_feasible(S: PolygonalSet, eps: float, config: LatticeConfig) -> bool:
    """Whether delta(C_n, S) < eps has positive probability on this box.

    The cluster of the configuration opening exactly the edges among sites
    near S contains every cluster compatible with the event, so the event is
    possible iff it holds there.
    """
    g = config.graph
    far, _ = _hausdorff_plan(S, eps, g.sites / config.n)
    near = np.ones(g.num_sites, bool)
    near[far] = False
    open_ = (near[g.edges[:, 0]] & near[g.edges[:, 1]])[:, None]
    ctx = BatchContext(config, open_)
    return bool(HausdorffBall(S, eps).evaluate(ctx)[0])


def _scale_row(n, est: EstimateWithCI, R, exact=False) -> ScaleRow:
    if est.hits == 0:
        lo_rate = -math.log(est.ci_high) / n
        return ScaleRow(n, est.replicates, 0, 0.0, est.ci_low, est.ci_high, math.inf,
                        lo_rate, math.inf, est.boundary_touch_fraction, R, exact)
    rate = -math.log(est.value) / n
    lo = -math.log(est.ci_high) / n
    hi = -math.log(est.ci_low) / n if est.ci_low > 0 else math.inf
    return ScaleRow(n, est.replicates, est.hits, est.value, est.ci_low, est.ci_high,
                    rate, lo, hi, est.boundary_touch_fraction, R, exact)


def estimate_rate(S: PolygonalSet, eps: float, scales, template: LatticeConfig,
                  replicates: int = 100_000, seed: int = 0, workers: int = 1, N=None,
                  exact: bool = False) -> RateEstimate:
    """Per-scale -(1/n) log P(delta(C_n, S) < eps), with Wilson intervals.

    The box at each scale is just large enough to decide the event (see
    :func:`hausdorff_box_radius`).  With ``exact=True`` the oracle replaces
    sampling.  Scales at which the event is impossible raise
    :class:`ResolutionError`.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    scales = sorted(set(int(n) for n in scales))
    if not scales:
        raise ValueError("need at least one scale")
    if not exact:
        template.check_subcritical()
    event = HausdorffBall(S, eps)
    rows = []
    for n in scales:
        R = max(hausdorff_box_radius(S, eps, n), 1)
        config = template.with_(n=n, box_radius=R, edge_subset=None)
        if not hausdorff_feasible(S, eps, config):
            raise ResolutionError(f"no cluster at scale n={n} lies within {eps} of S")
        if exact:
            p = exact_event_probability(config, event)
            rows.append(ScaleRow(n, 0, 0, p, p, p, -math.log(p) / n, -math.log(p) / n,
                                 -math.log(p) / n, 0.0, R, True))
            continue
        est = estimate_event_probability(config, event, replicates, derive_seed(seed, n), workers)
        rows.append(_scale_row(n, est, R))
    per_scale = [r for r in rows if r.exact or r.hits > 0]
    trend = intercept = None
    if len(per_scale) >= 2:
        slope, icpt = np.polyfit([r.n for r in per_scale], [r.rate for r in per_scale], 1)
        trend, intercept = float(slope), float(icpt)
    lower = None
    if not per_scale:
        # nothing observed: only a one-sided statement is honest
        lower = min(r.rate_low for r in rows)
    lam = norm_length(S, N) if N is not None else None
    return RateEstimate("HAUSDORFF_BALL", eps, per_scale, rows, trend, intercept, lam, lower)


# --------------------------------------------------------------------------
# exponential tightness proxy
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RadiusExceeds:
    """delta(C_n, {0}) > alpha, i.e. some cluster vertex has Euclidean norm > alpha."""

    alpha: float
    kind = "RADIUS_EXCEEDS"
    increasing = True

    def evaluate(self, ctx):
        r = np.linalg.norm(ctx.graph.sites / ctx.n, axis=1)
        far = np.flatnonzero(r > self.alpha)
        return ctx.any_rows(ctx.origin_members()[far])


def radius_tail(template: LatticeConfig, n: int, alphas, replicates: int = 100_000,
                seed: int = 0, workers: int = 1) -> list[tuple[float, ScaleRow]]:
    """P(delta(C_n, {0}) > alpha) for each alpha, from one shared sample.

    The box reaches past the largest alpha, so the event is decided inside it.
    """
    template.check_subcritical()
    alphas = sorted(float(a) for a in alphas)
    R = int(math.floor(n * alphas[-1])) + 1
    config = template.with_(n=n, box_radius=R, edge_subset=None)
    events = [RadiusExceeds(a) for a in alphas]

    def tally(ctx):
        return [int(np.count_nonzero(e.evaluate(ctx))) for e in events]

    parts = map_batches(config, replicates, derive_seed(seed, n), tally, workers)
    hits = np.sum(parts, axis=0)
    return [(a, _scale_row(n, EstimateWithCI.from_counts(int(h), replicates), R))
            for a, h in zip(alphas, hits)]


# --------------------------------------------------------------------------
# conditioned sampling
# --------------------------------------------------------------------------

@dataclass
class ConditionedSampleReport:
    n: int
    points: tuple
    attempts: int
    acceptances: int
    boundary_touches: int  # among accepted clusters
    box_radius: int
    draw_touches: int = 0  # among all draws; the box gate uses this one
    distances: list = field(default_factory=list)  # to the nearest Steiner tree
    eps: float | None = None
    failures: int | None = None
    lambda_ref: float | None = None
    gap: float | None = None

    def __post_init__(self):
        if not 0 <= self.acceptances <= self.attempts:
            raise ValueError("acceptances must lie in [0, attempts]")

    @property
    def acceptance_fraction(self) -> float:
        return self.acceptances / self.attempts

    @property
    def inconclusive(self) -> bool:
        return self.acceptances < MIN_ACCEPTANCES

    @property
    def failure_fraction(self) -> float | None:
        if self.failures is None or self.acceptances == 0:
            return None
        return self.failures / self.acceptances

    def failure_interval(self, confidence=0.95):
        if self.failures is None or self.acceptances == 0:
            return None
        return wilson_interval(self.failures, self.acceptances, confidence)

    @property
    def boundary_touch_frac(self) -> float:
        return self.draw_touches / self.attempts


def conditioned_config(points, n: int, template: LatticeConfig) -> LatticeConfig:
    """Scale-n box for conditioning on ``points``; explicit edge subsets are kept."""
    if template.edge_subset is not None:
        return template.with_(n=n)
    reach = max([max(map(abs, lattice_site(a, n))) for a in points] or [0])
    R = max(template.box_radius, auto_box_radius(reach))
    return template.with_(n=n, box_radius=R)


def sample_conditioned(points, n: int, template: LatticeConfig, budget: int, seed: int = 0,
                       workers: int = 1, max_radius: int = 64
                       ) -> tuple[list[Cluster], ConditionedSampleReport]:
    """Rejection sampling of C_n given {a^i_n} in C_n.

    Draws ``budget`` clusters and keeps those containing every rounded point.
    Kept clusters follow the conditional law exactly; with no acceptances the
    sample is empty and the report says so.  Unless the template fixes its
    edges, the box grows until fewer than 1e-3 of all draws touch its boundary.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    points = tuple(tuple(float(x) for x in a) for a in points)
    config = conditioned_config(points, n, template)
    event = PointsInCluster(points)
    check_targets_in_box(event, config)
    config.check_subcritical()

    def keep(ctx):
        cols = np.flatnonzero(event.evaluate(ctx))
        return clusters_from_batch(ctx, cols), int(np.count_nonzero(ctx.boundary_touch()))

    while True:
        parts = map_batches(config, budget, seed, keep, workers)
        touches = sum(t for _, t in parts)
        if (template.edge_subset is not None or touches < BOUNDARY_TOUCH_LIMIT * budget
                or config.box_radius >= max_radius):
            break
        config = config.with_(box_radius=min(max_radius, int(math.ceil(1.5 * config.box_radius))))
    clusters = [c for part, _ in parts for c in part]
    report = ConditionedSampleReport(n, points, budget, len(clusters),
                                     sum(c.touches_boundary for c in clusters), config.box_radius,
                                     draw_touches=touches)
    return clusters, report


# --------------------------------------------------------------------------
# skeletons
# --------------------------------------------------------------------------

@dataclass
class SkeletonTree:
    """Pruned BFS tree of a cluster, split into paths between key vertices.

    ``marked`` are the sites of the origin and the conditioning points,
    ``branch`` the sites of degree >= 3 in the pruned tree, and ``paths``
    lattice paths (integer sites) joining consecutive key vertices.
    """

    n: int
    marked: np.ndarray
    branch: np.ndarray
    paths: list
    tree_edges: np.ndarray  # (m, 2, d) integer sites

    @property
    def num_branch(self) -> int:
        return len(self.branch)

    @property
    def num_edges(self) -> int:
        return len(self.tree_edges)

    def length(self, gauge) -> float:
        if not len(self.tree_edges):
            return 0.0
        v = (self.tree_edges[:, 1] - self.tree_edges[:, 0]) / self.n
        return float(np.sum(gauge(v)))

    def path_edge_sets(self):
        return [frozenset(frozenset((tuple(a), tuple(b))) for a, b in zip(p[:-1], p[1:]))
                for p in self.paths]

    def to_polygonal_set(self) -> PolygonalSet:
        d = self.marked.shape[1]
        if not len(self.tree_edges):
            return PolygonalSet(points=np.zeros((1, d)))
        return PolygonalSet(self.tree_edges / self.n, d=d, require_origin=False, validate=False)


def extract_skeleton(cluster: Cluster, points) -> SkeletonTree:
    """BFS spanning tree of the cluster from the origin, pruned to the marked points."""
    n = cluster.scale
    index = {tuple(s): i for i, s in enumerate(cluster.sites.tolist())}
    origin = index[tuple([0] * cluster.sites.shape[1])]
    marked = {origin}
    for a in points:
        site = lattice_site(a, n)
        if site not in index:
            raise GeometryError(f"point {tuple(a)} (site {site}) is not in the cluster")
        marked.add(index[site])

    adj = [[] for _ in range(len(cluster.sites))]
    for u, v in cluster.edges.tolist():
        adj[u].append(v)
        adj[v].append(u)
    parent = {origin: -1}
    order = [origin]
    queue = deque([origin])
    while queue:
        u = queue.popleft()
        for v in sorted(adj[u]):
            if v not in parent:
                parent[v] = u
                order.append(v)
                queue.append(v)

    # keep a vertex iff its BFS subtree holds a marked vertex
    needed = set()
    for v in reversed(order):
        if v in marked or v in needed:
            needed.add(v)
            if parent[v] >= 0:
                needed.add(parent[v])
    tree = {v: [] for v in needed}
    edges = []
    for v in needed:
        p = parent[v]
        if p >= 0:
            tree[v].append(p)
            tree[p].append(v)
            edges.append((p, v))
    branch = sorted(v for v in needed if len(tree[v]) >= 3)
    k = len(marked)
    if len(branch) > max(0, k - 2):
        raise SkeletonError(f"{len(branch)} branch vertices for {k} marked points")

    key = marked | set(branch)
    paths = []
    for start in sorted(key):
        for nxt in sorted(tree[start]):
            if parent.get(nxt) != start:
                continue  # walk each tree edge downward exactly once
            path = [start, nxt]
            while path[-1] not in key:
                children = [c for c in tree[path[-1]] if parent[c] == path[-1]]
                path.append(children[0])
            paths.append(cluster.sites[path])
    seen = set()
    for p in paths:
        for a, b in zip(p[:-1].tolist(), p[1:].tolist()):
            e = frozenset((tuple(a), tuple(b)))
            if e in seen:
                raise SkeletonError("skeleton paths share an edge")
            seen.add(e)
    tree_edges = cluster.sites[np.array(edges, dtype=np.int64).reshape(-1, 2)]
    return SkeletonTree(n, cluster.sites[sorted(marked)], cluster.sites[branch].reshape(-1, cluster.sites.shape[1]),
                        paths, tree_edges)


# --------------------------------------------------------------------------
# concentration around Steiner trees
# --------------------------------------------------------------------------

@dataclass
class GapCandidate:
    label: str
    set: PolygonalSet
    length: float
    gap: float


def _min_dist(q, trees):
    return min(float(distance_to_set(q[None], T)[0]) for T in trees)


def _push_out(base, direction, trees, eps, hi=None):
    """Smallest t with min_j dist(base + t * direction, T_j) >= eps, by bisection."""
    hi = hi or 4 * eps + 1.0
    while _min_dist(base + hi * direction, trees) < eps:
        hi *= 2
        if hi > 1e6:
            return None
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _min_dist(base + mid * direction, trees) >= eps:
            hi = mid
        else:
            lo = mid
    return hi


def _directions(d, count):
    if d == 2:
        th = np.linspace(0, 2 * np.pi, count, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    rng = np.random.default_rng(0)
    v = rng.normal(size=(count, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def reference_gap(trees, N, eps: float, directions: int = 32, edge_points: int = 5):
    """Upper bound on inf lambda(S) - lambda(T) over S outside every B_eps(T_j).

    The infimum over all compact connected sets is not computable; this
    searches spurs of the trees, detours of their edges and the optimal
    trees of every other topology, keeping candidates whose Hausdorff
    distance to every T_j is at least eps.  The minimum is therefore an
    upper bound on the true infimum.
    """
    sets = [t.to_polygonal_set() for t in trees]
    best_len = min(t.total_length for t in trees)
    T0 = trees[0]
    P = T0.positions
    d = P.shape[1]
    dirs = _directions(d, directions)
    cands = []

    def accept(label, S, length):
        if all(hausdorff_distance(S, T) >= eps * (1 - 1e-9) for T in sets):
            cands.append(GapCandidate(label, S, length, length - best_len))

    base_segs = [np.array(s) for s in sets[0].segments]
    # spurs from vertices and interior edge points
    anchors = [P[i] for i in range(len(P))]
    for u, v in T0.topology.edges:
        for t in np.linspace(0, 1, edge_points + 2)[1:-1]:
            anchors.append(P[u] + t * (P[v] - P[u]))
    for x in anchors:
        for e in dirs:
            t = _push_out(x, e, sets, eps)
            if t is None:
                continue
            tip = x + t * e
            S = PolygonalSet(base_segs + [np.array([x, tip])], d=d, require_origin=False,
                             validate=False)
            accept("spur", S, best_len + float(N(tip - x)))
    # detours: replace an edge by a bent path through a pushed-out midpoint
    for i, (u, v) in enumerate(T0.topology.edges):
        a, b = P[u], P[v]
        mid = 0.5 * (a + b)
        for e in dirs:
            t = _push_out(mid, e, sets, eps)
            if t is None:
                continue
            m = mid + t * e
            segs = [s for j, s in enumerate(base_segs) if j != i] + [np.array([a, m]), np.array([m, b])]
            S = PolygonalSet(segs, d=d, require_origin=False, validate=False)
            length = best_len - float(N(b - a)) + float(N(m - a)) + float(N(b - m))
            accept("detour", S, length)
    # other topologies
    terminals = T0.terminals
    for topo in enumerate_topologies(len(terminals)):
        alt = optimize_positions(topo, terminals, N)
        if alt.converged:
            accept("topology", alt.to_polygonal_set(), alt.total_length)
    if not cands:
        return None, []
    cands.sort(key=lambda c: c.gap)
    return cands[0].gap, cands


def steiner_concentration(points, eps: float, scales, template: LatticeConfig, budgets, N,
                          seed: int = 0, workers: int = 1, gap: bool = True):
    """Per scale, the fraction of conditioned clusters at distance >= eps from every Steiner tree."""
    trees = solve_steiner(points, N)
    sets = [t.to_polygonal_set() for t in trees]
    lam = min(t.total_length for t in trees)
    gap_value = reference_gap(trees, N, eps)[0] if gap else None
    if isinstance(budgets, int):
        budgets = [budgets] * len(scales)
    reports = []
    for n, budget in zip(scales, budgets):
        clusters, rep = sample_conditioned(points, n, template, budget, derive_seed(seed, n), workers)
        dists = [min(hausdorff_distance(PointCloud(c.points), T) for T in sets) for c in clusters]
        rep.distances = dists
        rep.eps = eps
        rep.failures = int(sum(x >= eps for x in dists))
        rep.lambda_ref = lam
        rep.gap = gap_value
        reports.append(rep)
    return trees, reports


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def rate_csv_rows(est: RateEstimate):
    for r in est.rows:
        yield (r.n, r.replicates, r.hits, r.p_hat, r.ci_low, r.ci_high, r.rate,
               est.lambda_reference, r.boundary_touch_frac)


def concentration_csv_rows(reports):
    for rep in reports:
        if rep.acceptances:
            lo, hi = rep.failure_interval()
            frac = rep.failure_fraction
        else:
            lo, hi, frac = 0.0, 1.0, None
        rate = -math.log(frac) / rep.n if frac else math.inf
        yield (rep.n, rep.acceptances, rep.failures, frac, lo, hi, rate,
               rep.lambda_ref, rep.boundary_touch_frac)


def write_csv(rows, path=None) -> str:
    """Rows in the fixed experiment schema; returns the text and writes it if ``path``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([_fmt(float(x) if isinstance(x, (np.floating,)) else x) for x in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
