"""Bernoulli bond percolation on boxes of the rescaled lattice (1/n) Z^d.

Sites are stored in integer (unscaled) coordinates; a cluster's metric
points are ``sites / n``.
"""
from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from itertools import product

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .stats import EstimateWithCI

# conservative defaults for the critical bond probability; d=2 is exact
P_C_BOUND = {2: 0.5}
P_C_BOUND_HIGH_D = 0.2
CHUNK_SIZE = 1024


class SubcriticalityError(ValueError):
    """Sampling was requested at or above the configured critical bound."""


def p_c_bound(d: int) -> float:
    return P_C_BOUND.get(d, P_C_BOUND_HIGH_D)


Site = tuple[int, ...]
Edge = tuple[Site, Site]


def canonical_edge(a, b) -> Edge:
    a, b = tuple(int(x) for x in a), tuple(int(x) for x in b)
    return (a, b) if a <= b else (b, a)


def edge_id(edge: Edge) -> str:
    """Serialize an edge as ``"x1,y1-x2,y2"`` in integer coordinates."""
    a, b = canonical_edge(*edge)
    return ",".join(map(str, a)) + "-" + ",".join(map(str, b))


def parse_edge_id(text: str) -> Edge:
    left, right = _split_signed(text)
    return canonical_edge(tuple(int(x) for x in left.split(",")),
                          tuple(int(x) for x in right.split(",")))


def _split_signed(text):
    # coordinates may be negative, so split on the '-' that follows a digit
    for i in range(1, len(text)):
        if text[i] == "-" and text[i - 1].isdigit():
            return text[:i], text[i + 1:]
    raise ValueError(f"malformed edge id {text!r}")


@dataclass(frozen=True)
class LatticeConfig:
    """Box of (1/n) Z^d with integer coordinates in [-R, R], bond probability p.

    ``edge_subset`` optionally restricts the in-play edges (integer
    coordinates); ``p_c`` overrides the configured critical bound.
    """

    d: int = 2
    n: int = 1
    p: float = 0.3
    box_radius: int = 1
    edge_subset: tuple[Edge, ...] | None = None
    p_c: float | None = None

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"d must be an integer >= 2, got {self.d}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be an integer >= 1, got {self.n}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if int(self.box_radius) != self.box_radius or self.box_radius < 1:
            raise ValueError(f"box_radius must be an integer >= 1, got {self.box_radius}")
        if self.edge_subset is not None:
            edges = tuple(sorted({canonical_edge(*e) for e in self.edge_subset}))
            R = self.box_radius
            for a, b in edges:
                if len(a) != self.d or len(b) != self.d:
                    raise ValueError(f"edge {a}-{b} has wrong dimension")
                if sum(abs(x - y) for x, y in zip(a, b)) != 1:
                    raise ValueError(f"edge {a}-{b} does not join adjacent sites")
                if max(map(abs, a + b)) > R:
                    raise ValueError(f"edge {a}-{b} leaves the box of radius {R}")
            object.__setattr__(self, "edge_subset", edges)

    @property
    def critical_bound(self) -> float:
        return self.p_c if self.p_c is not None else p_c_bound(self.d)

    def check_subcritical(self):
        if self.p >= self.critical_bound:
            raise SubcriticalityError(
                f"p={self.p} is not below p_c_bound({self.d})={self.critical_bound}")

    @property
    def graph(self) -> "BoxGraph":
        return box_graph(self.d, self.box_radius, self.edge_subset)

    @property
    def num_edges(self) -> int:
        return self.graph.num_edges

    def with_(self, **changes) -> "LatticeConfig":
        return replace(self, **changes)


class BoxGraph:
    """Sites and edges of a box; shared by every config with the same geometry."""

    def __init__(self, d: int, R: int, edge_subset=None):
        self.d, self.R = d, R
        if edge_subset is None:
            coords = np.array(list(product(range(-R, R + 1), repeat=d)), dtype=np.int64)
            index = {tuple(c): i for i, c in enumerate(coords.tolist())}
            edges = []
            for i, c in enumerate(coords.tolist()):
                for axis in range(d):
                    if c[axis] < R:
                        nb = list(c)
                        nb[axis] += 1
                        edges.append((i, index[tuple(nb)]))
            sites = coords
        else:
            pts = {tuple([0] * d)}
            for a, b in edge_subset:
                pts.update((a, b))
            sites = np.array(sorted(pts), dtype=np.int64)
            index = {tuple(c): i for i, c in enumerate(sites.tolist())}
            edges = [(index[a], index[b]) for a, b in edge_subset]
        self.sites = sites
        self.index = index
        self.edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
        self.origin = index[tuple([0] * d)]
        self.boundary = (np.abs(sites) == R).any(axis=1)
        self.sites.setflags(write=False)
        self.edges.setflags(write=False)

    @property
    def num_sites(self) -> int:
        return len(self.sites)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def site_index(self, site) -> int | None:
        return self.index.get(tuple(int(x) for x in site))

    def edge_tuple(self, e: int) -> Edge:
        u, v = self.edges[e]
        return canonical_edge(self.sites[u], self.sites[v])

    @cached_property
    def incidence(self) -> list[list[tuple[int, int]]]:
        """Per site, the (edge index, neighbour) pairs."""
        inc = [[] for _ in range(self.num_sites)]
        for e, (u, v) in enumerate(self.edges.tolist()):
            inc[u].append((e, v))
            inc[v].append((e, u))
        return inc


@lru_cache(maxsize=64)
def box_graph(d: int, R: int, edge_subset=None) -> BoxGraph:
    return BoxGraph(d, R, edge_subset)


def lattice_site(u, n: int) -> Site:
    """Integer coordinates of ``u`` rounded to (1/n) Z^d, halves toward +inf."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return tuple(int(math.floor(x * n + 0.5)) for x in np.asarray(u, dtype=float))


def round_to_lattice(u, n: int) -> np.ndarray:
    """Nearest point of (1/n) Z^d to ``u``; ties go toward +inf per coordinate."""
    return np.array(lattice_site(u, n), dtype=float) / n


@dataclass(frozen=True)
class BondConfiguration:
    config: LatticeConfig
    open_mask: np.ndarray = field(repr=False)

    @property
    def open_edges(self) -> frozenset[Edge]:
        g = self.config.graph
        return frozenset(g.edge_tuple(e) for e in np.flatnonzero(self.open_mask))

    def edge_ids(self) -> list[str]:
        return sorted(edge_id(e) for e in self.open_edges)

    @classmethod
    def from_edges(cls, config: LatticeConfig, edges) -> "BondConfiguration":
        g = config.graph
        lookup = {g.edge_tuple(e): e for e in range(g.num_edges)}
        mask = np.zeros(g.num_edges, bool)
        for a, b in edges:
            key = canonical_edge(a, b)
            if key not in lookup:
                raise ValueError(f"edge {edge_id(key)} is not in play")
            mask[lookup[key]] = True
        return cls(config, mask)


def sample_configuration(config: LatticeConfig, seed: int,
                         enforce_subcritical: bool = True) -> BondConfiguration:
    """Each in-play edge open independently with probability ``config.p``."""
    if enforce_subcritical:
        config.check_subcritical()
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    mask = rng.random(config.num_edges) < config.p
    mask.setflags(write=False)
    return BondConfiguration(config, mask)


@dataclass(frozen=True)
class Cluster:
    """The origin cluster: sites (integer coordinates) and its open edges."""

    sites: np.ndarray
    edges: np.ndarray  # (m, 2) indices into ``sites``
    scale: int
    box_radius: int
    touches_boundary: bool

    @property
    def points(self) -> np.ndarray:
        return self.sites / self.scale

    @property
    def vertices(self) -> set[tuple[float, ...]]:
        return {tuple(p) for p in self.points.tolist()}

    @property
    def open_edges(self) -> np.ndarray:
        """Open edges as ``(m, 2, d)`` scaled endpoint coordinates."""
        return self.points[self.edges]

    def __len__(self):
        return len(self.sites)

    def contains_site(self, site) -> bool:
        return bool((self.sites == np.asarray(site)).all(axis=1).any())


def _cluster_from_open(graph: BoxGraph, open_mask, n: int) -> Cluster:
    inc = graph.incidence
    seen = {graph.origin: 0}
    order = [graph.origin]
    queue = deque([graph.origin])
    cl_edges = []
    while queue:
        u = queue.popleft()
        for e, v in inc[u]:
            if not open_mask[e]:
                continue
            if v not in seen:
                seen[v] = len(order)
                order.append(v)
                queue.append(v)
            if u < v:
                cl_edges.append((seen[u], seen[v]))
    sites = graph.sites[order]
    edges = np.array(cl_edges, dtype=np.int64).reshape(-1, 2)
    return Cluster(sites, edges, n, graph.R, bool(graph.boundary[order].any()))


def extract_origin_cluster(bc: BondConfiguration) -> Cluster:
    """Connected component of the origin under the open edges."""
    return _cluster_from_open(bc.config.graph, bc.open_mask, bc.config.n)


# --------------------------------------------------------------------------
# batched evaluation
# --------------------------------------------------------------------------

class BatchContext:
    """A batch of sampled configurations, one column per replicate.

    ``open_`` has shape ``(E, B)``.  Event code only uses elementwise logic
    and row reductions, which the enumeration context mirrors on packed bits.
    """

    def __init__(self, config: LatticeConfig, open_: np.ndarray):
        self.config = config
        self.graph = config.graph
        self.open = open_
        self.width = open_.shape[1]
        self._reach_cache = {}

    @property
    def n(self):
        return self.config.n

    def true(self):
        return np.ones(self.width, bool)

    def false(self):
        return np.zeros(self.width, bool)

    def any_rows(self, rows) -> np.ndarray:
        rows = np.asarray(rows)
        if rows.shape[0] == 0:
            return self.false()
        return rows.any(axis=0)

    def reach(self, sources, allowed=None) -> np.ndarray:
        """``(V, B)`` membership of sites joined to any source by open allowed edges."""
        sources = tuple(sorted(int(s) for s in sources))
        key = (sources, None if allowed is None else allowed.tobytes())
        if key in self._reach_cache:
            return self._reach_cache[key]
        g = self.graph
        V, B = g.num_sites, self.width
        mask = self.open if allowed is None else self.open & allowed[:, None]
        e_idx, b_idx = np.nonzero(mask)
        u = g.edges[e_idx, 0] + b_idx * V
        v = g.edges[e_idx, 1] + b_idx * V
        adj = coo_matrix((np.ones(len(u), np.int8), (u, v)), shape=(B * V, B * V)).tocsr()
        _, labels = connected_components(adj, directed=False)
        L = labels.reshape(B, V)
        flags = np.zeros(labels.max() + 1, bool)
        if sources:
            flags[L[:, list(sources)].ravel()] = True
        out = flags[L].T
        self._reach_cache[key] = out
        return out

    def origin_members(self) -> np.ndarray:
        return self.reach([self.graph.origin])

    def boundary_touch(self) -> np.ndarray:
        return self.any_rows(self.origin_members()[self.graph.boundary])


def chunk_layout(replicates: int, chunk_size: int = CHUNK_SIZE) -> list[tuple[int, int]]:
    """(chunk index, size) pairs; independent of how many workers run them."""
    full, rest = divmod(int(replicates), chunk_size)
    out = [(i, chunk_size) for i in range(full)]
    if rest:
        out.append((full, rest))
    return out


def sample_batch(config: LatticeConfig, seed: int, chunk: int, size: int) -> np.ndarray:
    """Open-edge matrix ``(E, size)`` for one chunk of the stream of ``seed``."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(chunk),)))
    return rng.random((config.num_edges, size)) < config.p


def map_batches(config: LatticeConfig, replicates: int, seed: int, fn, workers: int = 1,
                chunk_size: int = CHUNK_SIZE) -> list:
    """Apply ``fn(ctx)`` to every chunk; results come back in chunk order.

    Chunks draw from streams keyed by (seed, chunk index), so the output does
    not depend on ``workers``.
    """
    layout = chunk_layout(replicates, chunk_size)

    def run(item):
        c, size = item
        return fn(BatchContext(config, sample_batch(config, seed, c, size)))

    if workers <= 1 or len(layout) <= 1:
        return [run(item) for item in layout]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, layout))


def estimate_event_probability(config: LatticeConfig, event, replicates: int, seed: int,
                               workers: int = 1, confidence: float = 0.95,
                               chunk_size: int = CHUNK_SIZE) -> EstimateWithCI:
    """Monte Carlo hit fraction of ``event`` with a Wilson interval."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    config.check_subcritical()

    def tally(ctx):
        hit = event.evaluate(ctx)
        return int(np.count_nonzero(hit)), int(np.count_nonzero(ctx.boundary_touch()))

    parts = map_batches(config, replicates, seed, tally, workers, chunk_size)
    hits = sum(h for h, _ in parts)
    touches = sum(t for _, t in parts)
    return EstimateWithCI.from_counts(hits, replicates, confidence, touches)


def clusters_from_batch(ctx: BatchContext, columns) -> list[Cluster]:
    return [_cluster_from_open(ctx.graph, ctx.open[:, b], ctx.n) for b in columns]


def auto_box_radius(target_sup_norm: float, minimum: int = 2) -> int:
    """Smallest R with the target at most 2/3 of the box radius."""
    return max(minimum, int(math.ceil(1.5 * target_sup_norm - 1e-12)))
