"""Exact event probabilities by summing over every bond configuration.

Configuration ``w`` in ``[0, 2**E)`` opens edge ``e`` iff bit ``e`` of ``w``
is set.  Per-site reachability is held as packed bit planes (one bit per
configuration), so a 24-edge box costs a few megabytes per site.
"""
from __future__ import annotations

from fractions import Fraction
from functools import lru_cache

import numpy as np

from .events import DisjointOccurrence, Event
from .lattice import LatticeConfig

ENUMERATION_CAP = 24


class EnumerationCapError(ValueError):
    """Too many edges for exhaustive enumeration."""


@lru_cache(maxsize=8)
def _popcounts(E: int) -> np.ndarray:
    pc = np.zeros(1, np.uint8)
    for _ in range(E):
        pc = np.concatenate([pc, pc + 1])
    pc.setflags(write=False)
    return pc


@lru_cache(maxsize=8)
def _bit_planes(E: int) -> np.ndarray:
    """Packed (little bit order) plane of configurations opening edge e, per e."""
    W = max(1, (1 << E) // 8)
    planes = np.empty((E, W), np.uint8)
    low = (0xAA, 0xCC, 0xF0)
    for e in range(E):
        if e < 3:
            planes[e] = low[e]
        else:
            block = np.repeat(np.array([0, 255], np.uint8), 1 << (e - 3))
            planes[e] = np.tile(block, W // len(block))
    planes.setflags(write=False)
    return planes


class EnumerationContext:
    """Event-evaluation context whose columns are all 2**E configurations."""

    def __init__(self, config: LatticeConfig):
        self.config = config
        self.graph = config.graph
        self.E = self.graph.num_edges
        self.N = 1 << self.E
        self.open = _bit_planes(self.E)
        self.width = self.open.shape[1]
        self._reach_cache = {}

    @property
    def n(self):
        return self.config.n

    def true(self):
        return np.full(self.width, 0xFF, np.uint8)

    def false(self):
        return np.zeros(self.width, np.uint8)

    def any_rows(self, rows):
        rows = np.asarray(rows)
        if rows.shape[0] == 0:
            return self.false()
        return np.bitwise_or.reduce(rows, axis=0)

    def reach(self, sources, allowed=None):
        sources = tuple(sorted(int(s) for s in sources))
        key = (sources, None if allowed is None else np.asarray(allowed).tobytes())
        if key in self._reach_cache:
            return self._reach_cache[key]
        g = self.graph
        R = np.zeros((g.num_sites, self.width), np.uint8)
        R[list(sources)] = 0xFF
        edges = [(e, int(u), int(v)) for e, (u, v) in enumerate(g.edges)
                 if allowed is None or allowed[e]]
        while True:
            before = R.copy()
            for order in (edges, edges[::-1]):
                for e, u, v in order:
                    m = self.open[e]
                    R[v] |= R[u] & m
                    R[u] |= R[v] & m
            if np.array_equal(before, R):
                break
        self._reach_cache[key] = R
        return R

    def origin_members(self):
        return self.reach([self.graph.origin])

    def boundary_touch(self):
        return self.any_rows(self.origin_members()[self.graph.boundary])

    def unpack(self, packed) -> np.ndarray:
        return np.unpackbits(packed, count=self.N, bitorder="little").view(bool)

    def pack(self, flags) -> np.ndarray:
        out = np.packbits(flags, bitorder="little")
        if len(out) < self.width:
            out = np.concatenate([out, np.zeros(self.width - len(out), np.uint8)])
        return out

    def disjoint_occurrence(self, first, second):
        masks_a = _path_masks(self.graph, *first.endpoints(self.graph, self.n))
        masks_b = _path_masks(self.graph, *second.endpoints(self.graph, self.n))
        flags = np.zeros(self.N, bool)
        if len(masks_a) and len(masks_b):
            a = np.array(masks_a, dtype=np.uint64)
            b = np.array(masks_b, dtype=np.uint64)
            for chunk in range(0, len(a), 512):
                aa = a[chunk:chunk + 512, None]
                ok = (aa & b[None]) == 0
                flags[(aa | b[None])[ok].astype(np.int64)] = True
            _upward_closure(flags, self.E)
        return self.pack(flags)


def _path_masks(graph, src, dst, allowed):
    """Edge bitmasks of all simple open-path witnesses from src to dst."""
    if src is None or dst is None:
        return []
    if src == dst:
        return [0]
    inc = graph.incidence
    out = []
    stack = [(src, 0, 1 << src)]
    while stack:
        u, emask, vmask = stack.pop()
        for e, v in inc[u]:
            if allowed is not None and not allowed[e]:
                continue
            if vmask >> v & 1:
                continue
            if v == dst:
                out.append(emask | (1 << e))
            else:
                stack.append((v, emask | (1 << e), vmask | (1 << v)))
    return out


def _upward_closure(flags: np.ndarray, E: int) -> None:
    """In place: flags[w] |= flags[w'] for every w' whose bits are a subset of w."""
    for e in range(E):
        view = flags.reshape(-1, 2, 1 << e)
        view[:, 1, :] |= view[:, 0, :]


class EnumerationOracle:
    """Exact probabilities for events on a box with at most ``cap`` edges."""

    def __init__(self, config: LatticeConfig, cap: int = ENUMERATION_CAP):
        E = config.num_edges
        if E > cap:
            raise EnumerationCapError(
                f"box has {E} in-play edges; exhaustive enumeration is capped at {cap}")
        self.config = config
        self.ctx = EnumerationContext(config)

    @property
    def num_edges(self):
        return self.ctx.E

    def indicator(self, event: Event) -> np.ndarray:
        return event.evaluate(self.ctx)

    def counts(self, event_or_indicator) -> np.ndarray:
        """Number of configurations in the event, by number of open edges."""
        packed = self._packed(event_or_indicator)
        flags = self.ctx.unpack(packed)
        return np.bincount(_popcounts(self.ctx.E)[flags], minlength=self.ctx.E + 1)

    def probability(self, event_or_indicator) -> float:
        return weighted_sum(self.counts(event_or_indicator), self.config.p)

    def _packed(self, x):
        return self.indicator(x) if isinstance(x, Event) else x

    # per-configuration views, for small boxes only
    def weights(self) -> np.ndarray:
        p = self.config.p
        k = _popcounts(self.ctx.E).astype(float)
        return p ** k * (1 - p) ** (self.ctx.E - k)

    def flags(self, event_or_indicator) -> np.ndarray:
        return self.ctx.unpack(self._packed(event_or_indicator))

    def cluster_sizes(self) -> np.ndarray:
        members = self.ctx.origin_members()
        sizes = np.zeros(self.ctx.N, np.int32)
        for row in members:
            sizes += self.ctx.unpack(row)
        return sizes

    def open_mask(self, w: int) -> np.ndarray:
        return np.array([(w >> e) & 1 for e in range(self.ctx.E)], dtype=bool)


def weighted_sum(counts, p: float) -> float:
    """sum_k counts[k] p^k (1-p)^(E-k), summed exactly and rounded once."""
    E = len(counts) - 1
    q = Fraction(p)
    total = sum(int(c) * q ** k * (1 - q) ** (E - k) for k, c in enumerate(counts) if c)
    return float(total)


def _reduced_config(config: LatticeConfig, event: Event) -> LatticeConfig:
    """Restrict the box to the edges the event can depend on."""
    support_at = getattr(event, "support_at", None)
    if support_at is None:
        return config
    g = config.graph
    keep = support_at(g, config.n)
    if len(keep) == g.num_edges:
        return config
    return config.with_(edge_subset=tuple(g.edge_tuple(e) for e in keep))


def exact_event_probability(config: LatticeConfig, event: Event,
                            cap: int = ENUMERATION_CAP) -> float:
    """Exact P(event) by enumeration of all 2**E configurations."""
    return EnumerationOracle(_reduced_config(config, event), cap).probability(event)


def _disjoint_brute_force(oracle: EnumerationOracle, event: DisjointOccurrence) -> np.ndarray:
    """Reference A o B by splitting each configuration's open edges two ways.

    Exponential in the number of open edges; for cross-checking only.
    """
    ctx = oracle.ctx
    fa = ctx.unpack(event.first.evaluate(ctx))
    fb = ctx.unpack(event.second.evaluate(ctx))
    out = np.zeros(ctx.N, bool)
    for w in range(ctx.N):
        sub = w
        while True:
            if fa[sub] and fb[w & ~sub]:
                out[w] = True
                break
            if sub == 0:
                break
            sub = (sub - 1) & w
    return out
