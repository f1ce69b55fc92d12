"""Steiner trees under a convex gauge.

Topologies are enumerated exactly (full topologies by edge insertion, the
rest by contracting edges); for a fixed topology the total gauge length is
convex in the Steiner coordinates and is minimised as a conic program.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from .geometry import PolygonalSet, hausdorff_distance

MAX_TERMINALS = 6
TIE_RTOL = 1e-6


class SteinerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SteinerTopology:
    """Tree on terminals 0..m-1 and Steiner points m..m+s-1 (degree >= 3)."""

    m: int
    s: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        nodes = self.m + self.s
        if len(self.edges) != nodes - 1:
            raise ValueError("a tree on k nodes has k-1 edges")
        deg = np.zeros(nodes, int)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        if nodes > 1 and (deg[:self.m] < 1).any():
            raise ValueError("every terminal needs an edge")
        if (deg[self.m:] < 3).any():
            raise ValueError("Steiner points need degree >= 3")
        if _components(nodes, self.edges) != 1:
            raise ValueError("edges do not form a tree")

    @property
    def degrees(self) -> list[int]:
        deg = [0] * (self.m + self.s)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    @property
    def is_full(self) -> bool:
        return self.s == self.m - 2 and all(d == 1 for d in self.degrees[:self.m])

    @property
    def key(self) -> frozenset:
        return split_key(self.m, self.m + self.s, self.edges)


def _components(nodes, edges):
    parent = list(range(nodes))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    count = nodes
    for u, v in edges:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
            count -= 1
    return count


def split_key(m, nodes, edges) -> frozenset:
    """Terminal bipartitions induced by the edges.

    Every node of degree <= 2 is a terminal, so the splits determine the
    tree up to relabelling of Steiner points.
    """
    adj = [[] for _ in range(nodes)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    splits = []
    for u, v in edges:
        seen = {u, v}
        side = set()
        stack = [v]
        while stack:
            x = stack.pop()
            if x < m:
                side.add(x)
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        if 0 in side:
            side = set(range(m)) - side
        splits.append(frozenset(side))
    return frozenset(splits)


def _full_topologies(m):
    """Full topologies as edge lists on terminals 0..m-1 and Steiner m..2m-3."""
    if m == 2:
        return [[(0, 1)]]
    trees = [[(0, m), (1, m), (2, m)]]
    for k in range(3, m):
        new = []
        for tree in trees:
            w = m + k - 2
            for i, (u, v) in enumerate(tree):
                rest = tree[:i] + tree[i + 1:]
                new.append(rest + [(u, w), (w, v), (k, w)])
        trees = new
    return trees


def _contract(m, nodes, edges, chosen):
    parent = list(range(nodes))

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for i in chosen:
        u, v = edges[i]
        ru, rv = find(u), find(v)
        if ru < m and rv < m:
            return None  # would merge two terminals
        # keep terminals as representatives
        if rv < m:
            ru, rv = rv, ru
        parent[rv] = ru
    roots = sorted({find(x) for x in range(nodes)})
    steiner_roots = [r for r in roots if r >= m]
    relabel = {r: r for r in roots if r < m}
    relabel.update({r: m + i for i, r in enumerate(steiner_roots)})
    out = []
    for i, (u, v) in enumerate(edges):
        if i in chosen:
            continue
        a, b = relabel[find(u)], relabel[find(v)]
        out.append((min(a, b), max(a, b)))
    return len(steiner_roots), out


@lru_cache(maxsize=None)
def enumerate_topologies(m: int) -> tuple[SteinerTopology, ...]:
    """All Steiner topologies on m labelled terminals, up to isomorphism.

    Every topology is a contraction of a full topology, so contracting all
    edge subsets of all full topologies and deduplicating by split system
    gives the complete catalogue.
    """
    if not 2 <= m <= MAX_TERMINALS:
        raise ValueError(f"terminal count {m} outside the supported range 2..{MAX_TERMINALS}")
    if m == 2:
        return (SteinerTopology(2, 0, ((0, 1),)),)
    seen = {}
    nodes = 2 * m - 2
    for tree in _full_topologies(m):
        E = len(tree)
        for r in range(E + 1):
            for chosen in combinations(range(E), r):
                res = _contract(m, nodes, tree, set(chosen))
                if res is None:
                    continue
                s, edges = res
                key = split_key(m, m + s, edges)
                if key not in seen:
                    seen[key] = SteinerTopology(m, s, tuple(sorted(edges)))
    return tuple(sorted(seen.values(), key=lambda t: (-t.s, t.edges)))


@dataclass
class SteinerTree:
    topology: SteinerTopology
    terminals: np.ndarray
    steiner_points: np.ndarray
    total_length: float
    converged: bool = True
    gauge_fingerprint: str = ""
    status: str = "optimal"

    @property
    def positions(self) -> np.ndarray:
        return np.concatenate([self.terminals, self.steiner_points.reshape(-1, self.terminals.shape[1])])

    @property
    def edge_vectors(self) -> np.ndarray:
        P = self.positions
        e = np.array(self.topology.edges)
        return P[e[:, 1]] - P[e[:, 0]]

    def to_polygonal_set(self) -> PolygonalSet:
        P = self.positions
        segs = [(P[u], P[v]) for u, v in self.topology.edges]
        # degenerate optima under polytope gauges may overlap, so no validation
        return PolygonalSet(segs, d=P.shape[1], require_origin=False, validate=False)

    def to_json(self) -> str:
        omega = json.loads(self.to_polygonal_set().to_json())
        payload = {
            "version": "steiner/1",
            "set": omega,
            "metadata": {
                "terminals": self.terminals.tolist(),
                "steiner_points": self.steiner_points.tolist(),
                "topology": {"m": self.topology.m, "s": self.topology.s,
                             "edges": [list(e) for e in self.topology.edges]},
                "length": self.total_length,
                "gauge": self.gauge_fingerprint,
                "converged": self.converged,
            },
        }
        return json.dumps(payload, sort_keys=True)


def _tree_length(positions, edges, N):
    if not edges:
        return 0.0
    e = np.array(edges)
    return float(np.sum(N(positions[e[:, 1]] - positions[e[:, 0]])))


def _solve_conic(topology, terminals, N):
    import cvxpy as cp

    m, s = topology.m, topology.s
    d = terminals.shape[1]
    X = cp.Variable((s, d))

    def pos(i):
        return terminals[i] if i < m else X[i - m]

    cost = sum(N.cvx(pos(v) - pos(u)) for u, v in topology.edges)
    prob = cp.Problem(cp.Minimize(cost))
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        prob.solve(solver=cp.SCS, eps=1e-9, max_iters=100_000)
    ok = prob.status in ("optimal", "optimal_inaccurate") and X.value is not None
    pts = X.value if X.value is not None else np.repeat(terminals.mean(0, keepdims=True), s, 0)
    return np.asarray(pts, dtype=float), ok, prob.status


def _collapse(topology, terminals, steiner, radius):
    """Merge Steiner points lying within ``radius`` of a tree neighbour."""
    m = topology.m
    edges = list(topology.edges)
    P = np.concatenate([terminals, steiner])
    while True:
        target = None
        for i, (u, v) in enumerate(edges):
            if max(u, v) >= m and np.linalg.norm(P[u] - P[v]) <= radius:
                target = i
                break
        if target is None:
            break
        u, v = edges.pop(target)
        keep, drop = (u, v) if u < v else (v, u)  # terminals have lower labels
        edges = [(keep if a == drop else a, keep if b == drop else b) for a, b in edges]
    # relabel surviving Steiner points densely
    used = sorted({x for e in edges for x in e if x >= m})
    relabel = {x: m + i for i, x in enumerate(used)}
    edges = tuple(sorted((min(relabel.get(a, a), relabel.get(b, b)),
                          max(relabel.get(a, a), relabel.get(b, b))) for a, b in edges))
    pts = P[used] if used else np.zeros((0, terminals.shape[1]))
    return SteinerTopology(m, len(used), edges), pts


def optimize_positions(topology: SteinerTopology, terminals, N, tol: float = 1e-9) -> SteinerTree:
    """Minimise the total gauge length over Steiner coordinates for one topology.

    Steiner points that end up within a small radius of a neighbour are
    merged into it, and the smaller topology is re-solved.
    """
    T = np.asarray(terminals, dtype=float)
    if len(T) != topology.m:
        raise ValueError("terminal count does not match topology")
    if topology.s == 0:
        return SteinerTree(topology, T, np.zeros((0, T.shape[1])),
                           _tree_length(T, topology.edges, N), True, N.fingerprint)
    scale = max(float(np.ptp(T, axis=0).max()), 1.0)
    radius = max(tol, 1e-6 * scale)
    pts, ok, status = _solve_conic(topology, T, N)
    topo, pts = _collapse(topology, T, pts, radius)
    if topo.s != topology.s and topo.s > 0:
        pts, ok2, status = _solve_conic(topo, T, N)
        ok = ok and ok2
    length = _tree_length(np.concatenate([T, pts]), topo.edges, N)
    return SteinerTree(topo, T, pts, length, ok, N.fingerprint, status)


def solve_steiner(points, N, tol: float = 1e-9, include_origin: bool = True) -> list[SteinerTree]:
    """Every minimal tree (up to tie tolerance) spanning ``points`` and the origin."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if include_origin:
        P = np.concatenate([np.zeros((1, P.shape[1])), P])
    m = len(P)
    if m < 2:
        raise ValueError("need at least one point besides the origin")
    if m > MAX_TERMINALS:
        raise ValueError(f"{m} terminals exceed the supported maximum {MAX_TERMINALS}")
    diff = np.linalg.norm(P[:, None] - P[None], axis=-1)
    if (diff[np.triu_indices(m, 1)] == 0).any():
        raise ValueError("terminals must be distinct")
    trees = [optimize_positions(t, P, N, tol) for t in enumerate_topologies(m)]
    good = [t for t in trees if t.converged]
    if not good:
        raise SteinerError("no topology converged")
    best = min(t.total_length for t in good)
    cutoff = best * (1 + TIE_RTOL) + 1e-12
    scale = max(float(np.ptp(P, axis=0).max()), 1.0)
    dedupe = max(tol, 1e-6 * scale)
    out: list[SteinerTree] = []
    for t in sorted(good, key=lambda t: t.total_length):
        if t.total_length > cutoff:
            break
        S = t.to_polygonal_set()
        if all(hausdorff_distance(S, u.to_polygonal_set()) >= dedupe for u in out):
            out.append(t)
    return out
