"""Events on bond configurations.

An event is evaluated against a context exposing the box graph, the scale
and column arrays (one column per configuration).  Only elementwise ``&``,
``|``, ``~`` and row reductions are used, so the same code runs on sampled
boolean batches and on the packed bit planes of the enumeration oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .geometry import GeometryError, PolygonalSet, distance_to_set, point_segment_distance
from .lattice import lattice_site

# relative slack so that exact geometric ties count as "not strictly inside"
TIE_SLACK = 1e-12


class Event:
    kind = "EVENT"
    increasing = False

    def evaluate(self, ctx):
        raise NotImplementedError

    def __and__(self, other):
        return AllOf((self, other))

    def __or__(self, other):
        return AnyOf((self, other))

    def __invert__(self):
        return Not(self)


def _site(ctx, u):
    return ctx.graph.site_index(lattice_site(u, ctx.n))


@dataclass(frozen=True, eq=False)
class PointInCluster(Event):
    """u_n (u rounded to the lattice) belongs to the origin cluster."""

    u: tuple
    kind = "POINT_IN_CLUSTER"
    increasing = True

    def __post_init__(self):
        object.__setattr__(self, "u", tuple(float(x) for x in self.u))

    def evaluate(self, ctx):
        i = _site(ctx, self.u)
        if i is None:
            return ctx.false()
        return ctx.origin_members()[i].copy()

    def endpoints(self, graph, n):
        return graph.origin, graph.site_index(lattice_site(self.u, n)), None


@dataclass(frozen=True, eq=False)
class PointsInCluster(Event):
    """Every a^i_n belongs to the origin cluster."""

    points: tuple
    kind = "POINTS_IN_CLUSTER"
    increasing = True

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(tuple(float(x) for x in p) for p in self.points))

    def evaluate(self, ctx):
        out = ctx.true()
        members = None
        for a in self.points:
            i = _site(ctx, a)
            if i is None:
                return ctx.false()
            if members is None:
                members = ctx.origin_members()
            out = out & members[i]
        return out


def _neighbourhood_mask(points, S, radius, closed):
    d = distance_to_set(points, S)
    if closed:
        return d <= radius + TIE_SLACK * max(radius, 1.0)
    return d < radius * (1 - TIE_SLACK)


@dataclass(frozen=True, eq=False)
class HausdorffBall(Event):
    """The origin cluster (as its vertex set) lies within Hausdorff distance < eps of S."""

    S: PolygonalSet
    eps: float
    kind = "HAUSDORFF_BALL"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    def _plan(self, graph, n):
        key = (id(graph), n)
        if key not in self._cache:
            self._cache[key] = _hausdorff_plan(self.S, self.eps, graph.sites / n)
        return self._cache[key]

    def support_at(self, graph, n):
        # an edge between two far sites never changes whether a far site is reached
        near = _neighbourhood_mask(graph.sites / n, self.S, self.eps, closed=False)
        return np.flatnonzero(near[graph.edges[:, 0]] | near[graph.edges[:, 1]])

    def evaluate(self, ctx):
        far, groups = self._plan(ctx.graph, ctx.n)
        members = ctx.origin_members()
        out = ~ctx.any_rows(members[far])
        for g in groups:
            out = out & ctx.any_rows(members[g])
        return out


def _hausdorff_plan(S, eps, pts):
    """Sites outside B_eps(S), and for each test point of S the sites covering it.

    Coverage of a segment by open balls around lattice sites changes only at
    the parameters where some ball boundary crosses the segment, so checking
    those parameters and the midpoints between them is exact.
    """
    far = np.flatnonzero(~_neighbourhood_mask(pts, S, eps, closed=False))
    tests = [p for p in S.points]
    r2 = eps * eps
    for a, b in S.segments:
        v = b - a
        L = float(v @ v)
        if L == 0.0:
            tests.append(a)
            continue
        w = pts - a
        proj = w @ v
        disc = proj * proj - L * (np.einsum("kd,kd->k", w, w) - r2)
        ok = disc > 0
        sq = np.sqrt(disc[ok])
        roots = np.concatenate([(proj[ok] - sq) / L, (proj[ok] + sq) / L])
        ts = np.unique(np.concatenate([[0.0, 1.0], roots[(roots > 0) & (roots < 1)]]))
        # merge parameters closer than the tie slack
        ts = ts[np.concatenate([[True], np.diff(ts) > 1e-12])]
        mids = 0.5 * (ts[1:] + ts[:-1])
        allt = np.concatenate([ts, mids])
        tests.extend(a + allt[:, None] * v)
    tests = np.asarray(tests).reshape(-1, pts.shape[1])
    groups = []
    seen = set()
    for q in tests:
        dq = np.einsum("kd,kd->k", pts - q, pts - q)
        cover = np.flatnonzero(dq < r2 * (1 - 2 * TIE_SLACK))
        key = cover.tobytes()
        if key not in seen:
            seen.add(key)
            groups.append(cover)
    # a group that contains another group is implied by it
    groups.sort(key=len)
    kept = []
    for g in groups:
        gs = set(g.tolist())
        if not any(set(h.tolist()) <= gs for h in kept):
            kept.append(g)
    return far, kept


@dataclass(frozen=True, eq=False)
class ConstrainedConnection(Event):
    """a_n and b_n joined by an open path staying within distance eps of the corridor.

    The corridor defaults to the segment [a, b]; a path qualifies when every
    vertex on it is within (closed) distance eps of the corridor.
    """

    a: tuple
    b: tuple
    eps: float
    corridor: PolygonalSet | None = None
    kind = "CONSTRAINED_CONNECTION"
    increasing = True

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(x) for x in self.a))
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")

    def corridor_set(self):
        if self.corridor is not None:
            return self.corridor
        return PolygonalSet.segment(self.a, self.b, require_origin=False)

    def allowed_edges(self, graph, n):
        inside = _neighbourhood_mask(graph.sites / n, self.corridor_set(), self.eps, closed=True)
        return inside[graph.edges[:, 0]] & inside[graph.edges[:, 1]]

    def support_at(self, graph, n):
        return np.flatnonzero(self.allowed_edges(graph, n))

    def endpoints(self, graph, n):
        return (graph.site_index(lattice_site(self.a, n)),
                graph.site_index(lattice_site(self.b, n)),
                self.allowed_edges(graph, n))

    def evaluate(self, ctx):
        src, dst, allowed = self.endpoints(ctx.graph, ctx.n)
        if src is None or dst is None:
            return ctx.false()
        return ctx.reach([src], allowed)[dst].copy()


@dataclass(frozen=True)
class Region:
    """Sites within (or, with ``outside=True``, not within) distance r of S."""

    S: PolygonalSet
    radius: float
    outside: bool = False

    def sites(self, graph, n):
        near = _neighbourhood_mask(graph.sites / n, self.S, self.radius, closed=False)
        return np.flatnonzero(~near if self.outside else near)


@dataclass(frozen=True, eq=False)
class SetConnection(Event):
    """Some open path joins a site of ``source`` to a site of ``target``.

    With source = outside B_{eps/2}(S') and target = B_{eps/4}(S') this is
    the escape event used to control clusters that wander off S'.
    """

    source: Region
    target: Region
    kind = "SET_CONNECTION"
    increasing = True

    def evaluate(self, ctx):
        src = self.source.sites(ctx.graph, ctx.n)
        dst = self.target.sites(ctx.graph, ctx.n)
        if len(src) == 0 or len(dst) == 0:
            return ctx.false()
        if np.intersect1d(src, dst).size:
            return ctx.true()
        return ctx.any_rows(ctx.reach(src)[dst])


def escape_event(S: PolygonalSet, eps: float) -> SetConnection:
    return SetConnection(Region(S, eps / 2, outside=True), Region(S, eps / 4))


@dataclass(frozen=True, eq=False)
class AllOf(Event):
    events: tuple
    kind = "ALL_OF"

    @property
    def increasing(self):
        return all(e.increasing for e in self.events)

    def evaluate(self, ctx):
        return reduce(lambda x, y: x & y, (e.evaluate(ctx) for e in self.events), ctx.true())


@dataclass(frozen=True, eq=False)
class AnyOf(Event):
    events: tuple
    kind = "ANY_OF"

    @property
    def increasing(self):
        return all(e.increasing for e in self.events)

    def evaluate(self, ctx):
        return reduce(lambda x, y: x | y, (e.evaluate(ctx) for e in self.events), ctx.false())


@dataclass(frozen=True, eq=False)
class Not(Event):
    event: Event
    kind = "NOT"

    def evaluate(self, ctx):
        return ~self.event.evaluate(ctx)


@dataclass(frozen=True, eq=False)
class DisjointOccurrence(Event):
    """A o B for two connection events: edge-disjoint open witness paths.

    Only the enumeration oracle evaluates it, from explicit path witnesses.
    """

    first: Event
    second: Event
    kind = "DISJOINT_OCCURRENCE"

    def evaluate(self, ctx):
        return ctx.disjoint_occurrence(self.first, self.second)


def disjoint(a: Event, b: Event) -> DisjointOccurrence:
    for e in (a, b):
        if not hasattr(e, "endpoints"):
            raise TypeError(f"{type(e).__name__} is not a connection event")
    return DisjointOccurrence(a, b)


def check_targets_in_box(event: Event, config) -> None:
    """Reject events whose rounded targets fall outside the configured box."""
    pts = []
    if isinstance(event, PointInCluster):
        pts = [event.u]
    elif isinstance(event, PointsInCluster):
        pts = list(event.points)
    elif isinstance(event, ConstrainedConnection):
        pts = [event.a, event.b]
    for u in pts:
        site = lattice_site(u, config.n)
        if max(abs(x) for x in site) > config.box_radius:
            raise GeometryError(f"target {u} rounds to {site}, outside the box of radius "
                                f"{config.box_radius}")
    for sub in getattr(event, "events", ()):
        check_targets_in_box(sub, config)
