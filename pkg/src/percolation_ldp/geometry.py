"""Compact connected sets as polygonal sets and point clouds.

Distances between points are Euclidean.  Lengths of segments are measured
with a caller-supplied gauge (any callable mapping an ``(k, d)`` array of
vectors to ``k`` nonnegative values), so the same code serves the correlation
norm model and the analytic test gauges.
"""
from __future__ import annotations

import heapq
import json
import math

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

MERGE_TOL = 1e-12
BISECTION_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for inputs outside the domain of a geometric operation."""


class PointCloud:
    """A finite nonempty set of points in R^d."""

    def __init__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.size == 0:
            raise GeometryError("point cloud must be nonempty")
        self.points = pts
        self.points.setflags(write=False)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return len(self.points)

    def __repr__(self):
        return f"PointCloud({len(self)} points, d={self.d})"


class PolygonalSet:
    """Finite union of closed segments (plus possibly isolated points).

    Segments may only meet at endpoints, the union must be connected and,
    unless ``require_origin=False``, it must contain the origin.
    """

    def __init__(self, segments=(), points=(), d=None, *, require_origin=True, validate=True):
        seg = np.asarray(segments, dtype=float)
        pts = np.asarray(points, dtype=float)
        if d is None:
            if seg.size:
                d = seg.shape[-1]
            elif pts.size:
                d = pts.shape[-1]
            else:
                raise GeometryError("cannot infer dimension of an empty set")
        self.segments = seg.reshape(-1, 2, d)
        self.points = pts.reshape(-1, d)
        if len(self.segments) == 0 and len(self.points) == 0:
            raise GeometryError("polygonal set must be nonempty")
        self.segments.setflags(write=False)
        self.points.setflags(write=False)
        self.require_origin = require_origin
        if validate:
            self._validate()

    @classmethod
    def origin(cls, d=2):
        return cls(points=np.zeros((1, d)))

    @classmethod
    def segment(cls, a, b, **kw):
        return cls([[a, b]], **kw)

    @classmethod
    def polyline(cls, vertices, **kw):
        v = np.asarray(vertices, dtype=float)
        return cls(np.stack([v[:-1], v[1:]], axis=1), **kw)

    @property
    def d(self) -> int:
        return self.segments.shape[-1]

    @property
    def vertices(self) -> np.ndarray:
        """Distinct segment endpoints and isolated points."""
        allpts = np.concatenate([self.segments.reshape(-1, self.d), self.points])
        return _unique_rows(allpts)

    def __repr__(self):
        return f"PolygonalSet({len(self.segments)} segments, {len(self.points)} points, d={self.d})"

    def _validate(self):
        k = len(self.segments)
        if k >= 2:
            i, j = np.triu_indices(k, 1)
            a0, a1 = self.segments[i, 0], self.segments[i, 1]
            b0, b1 = self.segments[j, 0], self.segments[j, 1]
            dist, bad = _pair_contact(a0, a1, b0, b1)
            if bad.any():
                q = int(np.flatnonzero(bad)[0])
                raise GeometryError(
                    f"segments {i[q]} and {j[q]} intersect away from their endpoints")
            touch = dist <= MERGE_TOL
            links = (i[touch], j[touch])
        else:
            links = (np.zeros(0, int), np.zeros(0, int))
        m = len(self.points)
        nodes = k + m
        rows, cols = [links[0]], [links[1]]
        if m and k:
            dp = point_segment_distance(self.points, self.segments[:, 0], self.segments[:, 1])
            pi, si = np.nonzero(dp <= MERGE_TOL)
            rows.append(k + pi)
            cols.append(si)
        if m > 1:
            diff = np.linalg.norm(self.points[:, None] - self.points[None], axis=-1)
            pi, pj = np.nonzero(diff <= MERGE_TOL)
            rows.append(k + pi)
            cols.append(k + pj)
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        graph = coo_matrix((np.ones(len(r)), (r, c)), shape=(nodes, nodes))
        ncomp, _ = connected_components(graph, directed=False)
        if ncomp != 1:
            raise GeometryError(f"set is not connected ({ncomp} components)")
        if self.require_origin and distance_to_set(np.zeros((1, self.d)), self)[0] > MERGE_TOL:
            raise GeometryError("set does not contain the origin")

    def to_json(self) -> str:
        payload = {
            "version": "omega-set/1",
            "d": self.d,
            "segments": self.segments.tolist(),
            "points": self.points.tolist(),
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PolygonalSet":
        payload = json.loads(text) if isinstance(text, str) else text
        if payload.get("version") != "omega-set/1":
            raise GeometryError(f"unsupported version {payload.get('version')!r}")
        return cls(payload["segments"], payload.get("points", []), d=payload["d"])

    def scaled(self, t: float) -> "PolygonalSet":
        return PolygonalSet(self.segments * t, self.points * t, d=self.d,
                            require_origin=self.require_origin, validate=False)


def _unique_rows(x):
    if len(x) == 0:
        return x
    _, idx = np.unique(np.round(x / 1e-10).astype(np.int64), axis=0, return_index=True)
    return x[np.sort(idx)]


def _primitives(X):
    """Segments ``(k, 2, d)`` and points ``(m, d)`` making up ``X``."""
    if isinstance(X, PolygonalSet):
        return X.segments, X.points
    pts = getattr(X, "points", None)
    if pts is None:
        pts = np.atleast_2d(np.asarray(X, dtype=float))
    pts = np.asarray(pts, dtype=float)
    if pts.size == 0:
        raise GeometryError("empty set")
    return np.zeros((0, 2, pts.shape[1])), pts


def point_segment_distance(q, a, b):
    """Euclidean distances from points ``q (m, d)`` to segments ``[a, b]`` (k each)."""
    q = np.atleast_2d(q)
    v = b - a  # (k, d)
    L = np.einsum("kd,kd->k", v, v)
    w = q[:, None, :] - a[None]  # (m, k, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.einsum("mkd,kd->mk", w, v) / L
    t = np.where(L > 0, np.clip(t, 0.0, 1.0), 0.0)
    diff = w - t[..., None] * v[None]
    return np.sqrt(np.einsum("mkd,mkd->mk", diff, diff))


def distance_to_set(q, X) -> np.ndarray:
    """Euclidean distance from each query point to the set ``X``."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    seg, pts = _primitives(X)
    out = np.full(len(q), np.inf)
    if len(seg):
        out = np.minimum(out, point_segment_distance(q, seg[:, 0], seg[:, 1]).min(axis=1))
    if len(pts):
        # chunk to bound memory on large clouds
        step = max(1, 2_000_000 // max(len(pts), 1))
        for s in range(0, len(q), step):
            dq = q[s:s + step, None, :] - pts[None]
            out[s:s + step] = np.minimum(out[s:s + step],
                                         np.sqrt(np.einsum("mkd,mkd->mk", dq, dq)).min(axis=1))
    return out


def _segment_to_points_sup(a, b, P) -> float:
    """Exact sup over the segment [a, b] of the distance to the finite set P.

    Squared distances to the points are t^2 L + (line in t), so the pointwise
    minimum is a concave piecewise-linear envelope plus L t^2; its maximum on
    [0, 1] sits at 0, 1 or an envelope breakpoint.
    """
    v = b - a
    L = float(v @ v)
    w = a - P
    c = np.einsum("kd,kd->k", w, w)
    if L == 0.0:
        return math.sqrt(c.min())
    m = 2.0 * (w @ v)
    ts = np.concatenate([[0.0, 1.0], _envelope_breaks(m, c)])
    vals = (c[None, :] + m[None, :] * ts[:, None]).min(axis=1) + L * ts * ts
    return math.sqrt(max(vals.max(), 0.0))


def _envelope_breaks(m, c):
    """Breakpoints in (0, 1) of the lower envelope of the lines c + m t."""
    order = np.lexsort((c, -m))
    hull_m: list[float] = []
    hull_c: list[float] = []
    for k in order:
        mk, ck = m[k], c[k]
        if hull_m and hull_m[-1] == mk:
            continue  # same slope, larger intercept
        while len(hull_m) >= 2:
            m1, c1, m2, c2 = hull_m[-2], hull_c[-2], hull_m[-1], hull_c[-1]
            # line 2 is useless if line k overtakes line 1 no later than line 2 does
            if (ck - c1) * (m1 - m2) <= (c2 - c1) * (m1 - mk):
                hull_m.pop()
                hull_c.pop()
            else:
                break
        hull_m.append(mk)
        hull_c.append(ck)
    hm = np.asarray(hull_m)
    hc = np.asarray(hull_c)
    if len(hm) < 2:
        return np.zeros(0)
    t = (hc[1:] - hc[:-1]) / (hm[:-1] - hm[1:])
    return t[(t > 0.0) & (t < 1.0)]


def _segment_to_set_sup(a, b, seg, pts, tol=BISECTION_TOL) -> float:
    """Sup over [a, b] of the distance to a set of segments and points.

    Each primitive's distance is convex along the segment, so on any
    sub-interval the pointwise min is bounded above by the min over
    primitives of the larger endpoint value.  Branch and bound on that.
    """
    A = np.concatenate([seg[:, 0], pts])
    B = np.concatenate([seg[:, 1], pts])
    v = b - a

    def prim(t):
        return point_segment_distance((a + t * v)[None], A, B)[0]

    d0, d1 = prim(0.0), prim(1.0)
    best = max(d0.min(), d1.min())
    heap = [(-float(np.maximum(d0, d1).min()), 0.0, 1.0, d0, d1)]
    while heap:
        neg_ub, t0, t1, e0, e1 = heapq.heappop(heap)
        if -neg_ub <= best + tol:
            break
        tm = 0.5 * (t0 + t1)
        em = prim(tm)
        best = max(best, em.min())
        for lo, hi, el, eh in ((t0, tm, e0, em), (tm, t1, em, e1)):
            ub = float(np.maximum(el, eh).min())
            if ub > best + tol:
                heapq.heappush(heap, (-ub, lo, hi, el, eh))
    return float(best)


def directed_hausdorff(X, Y, tol=BISECTION_TOL) -> float:
    """sup over x in X of dist(x, Y)."""
    xs, xp = _primitives(X)
    ys, yp = _primitives(Y)
    out = 0.0
    if len(xp):
        out = max(out, float(distance_to_set(xp, Y).max()))
    for a, b in xs:
        if len(ys) == 0:
            out = max(out, _segment_to_points_sup(a, b, yp))
        else:
            out = max(out, _segment_to_set_sup(a, b, ys, yp, tol))
    return out


def hausdorff_distance(X, Y, tol=BISECTION_TOL) -> float:
    """Hausdorff distance between two nonempty compact sets.

    Accepts :class:`PolygonalSet`, :class:`PointCloud`, clusters (anything
    exposing a ``points`` array, taken as their vertex set) or raw arrays.
    """
    return max(directed_hausdorff(X, Y, tol), directed_hausdorff(Y, X, tol))


def epsilon_neighborhood_contains(X, eps: float, q) -> bool:
    """True iff ``q`` lies in the open eps-neighbourhood of ``X``."""
    if eps <= 0:
        raise GeometryError("eps must be positive")
    return bool(distance_to_set(np.asarray(q, dtype=float)[None], X)[0] < eps)


def norm_length(S: PolygonalSet, gauge) -> float:
    """Sum of gauge lengths of the segments of ``S``."""
    if len(S.segments) == 0:
        return 0.0
    return float(np.sum(gauge(S.segments[:, 1] - S.segments[:, 0])))


def _pair_contact(a0, a1, b0, b1, tol=MERGE_TOL):
    """Distances between segment pairs and whether they touch improperly."""
    u = a1 - a0
    v = b1 - b0
    w = a0 - b0
    uu = np.einsum("pd,pd->p", u, u)
    vv = np.einsum("pd,pd->p", v, v)
    uv = np.einsum("pd,pd->p", u, v)
    uw = np.einsum("pd,pd->p", u, w)
    vw = np.einsum("pd,pd->p", v, w)
    den = uu * vv - uv * uv
    parallel = den <= 1e-14 * np.maximum(uu * vv, 1e-300)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(parallel, 0.0, np.clip((uv * vw - vv * uw) / den, 0, 1))
        t = np.where(vv > 0, (uv * s + vw) / vv, 0.0)
        t = np.clip(t, 0, 1)
        s = np.where(uu > 0, np.clip((uv * t - uw) / uu, 0, 1), 0.0)
    diff = w + s[:, None] * u - t[:, None] * v
    dist = np.sqrt(np.einsum("pd,pd->p", diff, diff))
    # exact minimum including endpoint candidates (covers the parallel case)
    cand = np.stack([
        dist,
        point_segment_distance_pairs(a0, b0, b1),
        point_segment_distance_pairs(a1, b0, b1),
        point_segment_distance_pairs(b0, a0, a1),
        point_segment_distance_pairs(b1, a0, a1),
    ])
    dist = cand.min(axis=0)
    touching = dist <= tol
    la = np.sqrt(uu)
    lb = np.sqrt(vv)
    bad = np.zeros(len(dist), bool)
    if touching.any():
        idx = np.flatnonzero(touching)
        for q in idx:
            bad[q] = _improper_touch(a0[q], a1[q], b0[q], b1[q], la[q], lb[q], tol)
    return dist, bad


def point_segment_distance_pairs(q, a, b):
    v = b - a
    L = np.einsum("pd,pd->p", v, v)
    w = q - a
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(L > 0, np.clip(np.einsum("pd,pd->p", w, v) / L, 0, 1), 0.0)
    diff = w - t[:, None] * v
    return np.sqrt(np.einsum("pd,pd->p", diff, diff))


def _improper_touch(a0, a1, b0, b1, la, lb, tol):
    """Two touching segments: do they share anything besides common endpoints?"""
    u = a1 - a0
    if la > 0 and lb > 0:
        off = point_line_distance(b0, a0, u) + point_line_distance(b1, a0, u)
        if off <= 2 * tol:
            t = sorted(((b0 - a0) @ u / (la * la), (b1 - a0) @ u / (la * la)))
            return (min(1.0, t[1]) - max(0.0, t[0])) * la > tol
    # a single contact point, which must be an endpoint of both segments
    return not any(np.linalg.norm(p - q) <= tol for p in (a0, a1) for q in (b0, b1))


def point_line_distance(q, a, u):
    L = u @ u
    w = q - a
    return float(np.linalg.norm(w - (w @ u) / L * u))


# --------------------------------------------------------------------------
# simplification
# --------------------------------------------------------------------------

def _douglas_peucker(chain: np.ndarray, tol: float) -> list[int]:
    keep = [0, len(chain) - 1]
    stack = [(0, len(chain) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        a, b = chain[i], chain[j]
        if np.allclose(a, b, atol=MERGE_TOL, rtol=0):
            dist = np.linalg.norm(chain[i + 1:j] - a, axis=1)
        else:
            dist = point_segment_distance(chain[i + 1:j], a[None], b[None])[:, 0]
        k = int(np.argmax(dist))
        if dist[k] > tol:
            keep.append(i + 1 + k)
            stack.extend([(i, i + 1 + k), (i + 1 + k, j)])
    return sorted(set(keep))


def simplify(S: PolygonalSet, tol: float) -> PolygonalSet:
    """Polygonal approximant within Hausdorff distance ``tol`` and no longer.

    Maximal chains of degree-2 vertices are reduced with Douglas-Peucker;
    branch points, leaves and the origin are kept, and the origin becomes a
    segment endpoint.
    """
    if tol <= 0:
        raise GeometryError("tol must be positive")
    if not isinstance(S, PolygonalSet):
        raise GeometryError("simplify expects a PolygonalSet")
    try:
        S = PolygonalSet(S.segments, S.points, d=S.d)
    except GeometryError as exc:
        raise GeometryError(f"simplify requires a connected origin-containing set: {exc}") from exc
    if len(S.segments) == 0:
        return S
    d = S.d
    segs = _split_at_origin(S.segments)
    verts, inv = _merge_vertices(segs.reshape(-1, d))
    edges = inv.reshape(-1, 2)
    edges = edges[edges[:, 0] != edges[:, 1]]
    if len(edges) == 0:
        return PolygonalSet.origin(d)
    origin_id = int(np.argmin(np.linalg.norm(verts, axis=1)))
    adj: dict[int, list[int]] = {}
    for e, (u, v) in enumerate(edges):
        adj.setdefault(int(u), []).append(e)
        adj.setdefault(int(v), []).append(e)
    fixed = {v for v, es in adj.items() if len(es) != 2}
    if origin_id in adj:
        fixed.add(origin_id)
    used = np.zeros(len(edges), bool)
    chains = []

    def walk(start, e0):
        chain = [start]
        cur, e = start, e0
        while True:
            used[e] = True
            u, v = edges[e]
            nxt = int(v if u == cur else u)
            chain.append(nxt)
            if nxt in fixed:
                return chain
            e = next(x for x in adj[nxt] if not used[x])
            cur = nxt

    for v in sorted(fixed):
        for e in adj[v]:
            if not used[e]:
                chains.append(walk(v, e))
    # leftover pure cycles
    while not used.all():
        e = int(np.flatnonzero(~used)[0])
        start = int(edges[e, 0])
        fixed.add(start)
        chains.append(walk(start, e))

    for t in (tol, tol / 2, tol / 4, tol / 8):
        out = []
        for ch in chains:
            pts = verts[ch]
            if ch[0] == ch[-1]:
                # closed loop: anchor at the vertex farthest from the start
                far = int(np.argmax(np.linalg.norm(pts - pts[0], axis=1)))
                pieces = [pts[:far + 1], pts[far:]]
            else:
                pieces = [pts]
            for piece in pieces:
                keep = _douglas_peucker(piece, t)
                kept = piece[keep]
                out.extend(zip(kept[:-1], kept[1:]))
        out = _dedupe_segments(np.array(out, dtype=float).reshape(-1, 2, d))
        try:
            return PolygonalSet(out, d=d)
        except GeometryError:
            continue
    return S


def _split_at_origin(segs):
    d = segs.shape[-1]
    o = np.zeros((1, d))
    dist = point_segment_distance(o, segs[:, 0], segs[:, 1])[0]
    out = []
    for (a, b), dd in zip(segs, dist):
        if dd <= MERGE_TOL and np.linalg.norm(a) > MERGE_TOL and np.linalg.norm(b) > MERGE_TOL:
            out.extend([(a, np.zeros(d)), (np.zeros(d), b)])
        else:
            out.append((a, b))
    return np.array(out, dtype=float)


def _merge_vertices(pts):
    keys = np.round(pts / 1e-10).astype(np.int64)
    _, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    return pts[first], inv.ravel()


def _dedupe_segments(segs):
    if len(segs) == 0:
        return segs
    keep = []
    seen = set()
    for a, b in segs:
        if np.linalg.norm(a - b) <= MERGE_TOL:
            continue
        ka = tuple(np.round(a / 1e-10).astype(np.int64))
        kb = tuple(np.round(b / 1e-10).astype(np.int64))
        key = (ka, kb) if ka <= kb else (kb, ka)
        if key not in seen:
            seen.add(key)
            keep.append((a, b))
    return np.array(keep, dtype=float).reshape(-1, 2, segs.shape[-1])
