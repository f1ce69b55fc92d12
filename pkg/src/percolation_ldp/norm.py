"""Estimating the correlation norm and packaging it as a convex gauge.

The decay rate of P(u_n in C_n) along a direction is fitted with the affine
model ``-log P = n * rate - log(alpha)``; the rates over many directions give
points ``e / rate(e)`` on the boundary of the unit ball, whose convex hull
(closed under the lattice symmetries) defines the gauge.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from itertools import permutations, product

import numpy as np
from scipy.spatial import ConvexHull

from .events import PointInCluster
from .lattice import LatticeConfig, auto_box_radius, estimate_event_probability, lattice_site
from .oracle import exact_event_probability
from .stats import derive_seed

BOUNDARY_TOUCH_LIMIT = 1e-3


class RateFitError(RuntimeError):
    """Too few usable scales to fit a decay rate."""

    def __init__(self, message, per_scale=()):
        super().__init__(message)
        self.per_scale = list(per_scale)


@dataclass(frozen=True)
class ScaleEstimate:
    n: int
    p_hat: float
    neg_log_p: float
    ci_low: float  # on the -log P scale
    ci_high: float
    replicates: int = 0
    hits: int = 0
    box_radius: int = 0
    boundary_touch_frac: float = 0.0


@dataclass(frozen=True)
class RateFit:
    direction: tuple
    slope: float
    intercept: float = 0.0
    scales: tuple = ()
    per_scale: tuple = ()
    seed: int | None = None

    @property
    def alpha(self) -> float:
        """Prefactor of the affine model, exp(-intercept)."""
        return math.exp(-self.intercept)

    def to_dict(self):
        return {
            "direction": list(self.direction),
            "slope": self.slope,
            "intercept": self.intercept,
            "scales": list(self.scales),
            "seed": self.seed,
            "per_scale": [vars(s) for s in self.per_scale],
        }


def fit_affine(ns, y, sigma=None) -> tuple[float, float]:
    """Weighted least squares fit of y = slope * n + intercept."""
    ns = np.asarray(ns, dtype=float)
    y = np.asarray(y, dtype=float)
    w = None
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)
        if np.all(sigma > 0):
            w = 1.0 / sigma
    slope, intercept = np.polyfit(ns, y, 1, w=w)
    return float(slope), float(intercept)


def _unit(direction):
    e = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(e)
    if not norm > 0:
        raise ValueError("direction must be a nonzero vector")
    return e / norm


def point_family(direction, template: LatticeConfig):
    """Scale n -> (config, event) for u_n in C_n in an auto-sized box."""
    e = _unit(direction)

    def family(n):
        site = lattice_site(e, n)
        R = max(template.box_radius, auto_box_radius(max(map(abs, site))))
        return template.with_(n=n, box_radius=R), PointInCluster(tuple(e))

    return family


def _gated_estimate(config, event, replicates, seed, workers, grow=1.5, max_radius=64):
    """Monte Carlo estimate, enlarging the box until boundary touches are rare."""
    while True:
        est = estimate_event_probability(config, event, replicates, seed, workers)
        if est.boundary_touch_fraction < BOUNDARY_TOUCH_LIMIT or config.box_radius >= max_radius:
            return config, est
        R = min(max_radius, int(math.ceil(config.box_radius * grow)))
        config = config.with_(box_radius=R)


def measure_direction(direction, scales, template: LatticeConfig, replicates: int = 100_000,
                      seed: int = 0, workers: int = 1, exact: bool = False,
                      family=None) -> RateFit:
    """Fit the decay rate of P(u_n in C_n) along ``direction``.

    ``family`` maps a scale to ``(config, event)``; by default it is the
    point-connection event in an auto-sized box.  With ``exact=True`` the
    probabilities come from the enumeration oracle instead of sampling.
    """
    e = _unit(direction)
    scales = sorted(set(int(n) for n in scales))
    if len(scales) < 3:
        raise ValueError("need at least 3 distinct scales")
    family = family or point_family(e, template)
    rows = []
    floor_R = 0  # the touch rate depends on p and R only, so a passing radius carries over
    for n in scales:
        config, event = family(n)
        if not exact and config.edge_subset is None and floor_R > config.box_radius:
            config = config.with_(box_radius=floor_R)
        if exact:
            p = exact_event_probability(config, event)
            if p <= 0:
                continue
            y = -math.log(p)
            rows.append(ScaleEstimate(n, p, y, y, y, box_radius=config.box_radius))
            continue
        config.check_subcritical()
        config, est = _gated_estimate(config, event, replicates, derive_seed(seed, n), workers)
        floor_R = config.box_radius
        if est.hits == 0:
            continue
        rows.append(ScaleEstimate(
            n, est.value, -math.log(est.value), -math.log(est.ci_high),
            -math.log(est.ci_low) if est.ci_low > 0 else math.inf,
            est.replicates, est.hits, config.box_radius, est.boundary_touch_fraction))
    if len(rows) < 3:
        raise RateFitError(f"only {len(rows)} scales with hits along {tuple(e)}; need 3", rows)
    ns = [r.n for r in rows]
    ys = [r.neg_log_p for r in rows]
    widths = [r.ci_high - r.ci_low for r in rows]
    if not all(np.isfinite(widths)):
        widths = None
    slope, intercept = fit_affine(ns, ys, None if exact else widths)
    return RateFit(tuple(e), slope, intercept, tuple(ns), tuple(rows), seed)


# --------------------------------------------------------------------------
# gauges
# --------------------------------------------------------------------------

def hyperoctahedral_group(d: int):
    """All 2^d d! signed permutation matrices."""
    mats = []
    for perm in permutations(range(d)):
        for signs in product((1.0, -1.0), repeat=d):
            M = np.zeros((d, d))
            for i, (j, s) in enumerate(zip(perm, signs)):
                M[i, j] = s
            mats.append(M)
    return mats


def _canonical(u):
    """Orbit representative under signed permutations: sorted absolute values."""
    return -np.sort(-np.abs(u), axis=-1)


class NormModel:
    """A norm on R^d given either analytically or as the gauge of a convex hull."""

    ANALYTIC = ("euclidean", "l1", "linf", "weighted-l2")

    def __init__(self, d: int, kind: str = "hull", vertices=None, weights=None,
                 boundary_samples=None, provenance=None):
        self.d = int(d)
        self.kind = kind
        self.provenance = provenance or {}
        self.boundary_samples = boundary_samples or []
        self.vertices = None
        self.weights = None
        self._facets = None
        if kind == "hull":
            pts = np.asarray(vertices, dtype=float)
            hull = ConvexHull(pts)
            self.vertices = pts[hull.vertices]
            normals, offsets = hull.equations[:, :-1], hull.equations[:, -1]
            if np.any(offsets >= 0):
                raise ValueError("origin is not interior to the hull")
            self._facets = normals / (-offsets)[:, None]
            # evaluation canonicalizes its argument, which needs a symmetric hull
            for M in hyperoctahedral_group(self.d):
                if (self.vertices @ M.T @ self._facets.T).max() > 1 + 1e-9:
                    raise ValueError("hull is not closed under signed coordinate permutations")
        elif kind == "weighted-l2":
            w = np.ones(d) if weights is None else np.asarray(weights, dtype=float)
            if w.shape != (d,) or np.any(w <= 0):
                raise ValueError("weights must be d positive numbers")
            self.weights = w
        elif kind not in self.ANALYTIC:
            raise ValueError(f"unknown gauge kind {kind!r}")

    @property
    def symmetric(self) -> bool:
        """Invariant under all signed coordinate permutations."""
        return self.kind != "weighted-l2" or bool(np.all(self.weights == self.weights[0]))

    def __call__(self, u) -> np.ndarray | float:
        u = np.asarray(u, dtype=float)
        scalar = u.ndim == 1
        U = np.atleast_2d(u)
        if U.shape[-1] != self.d:
            raise ValueError(f"expected vectors of dimension {self.d}")
        if self.kind == "euclidean":
            out = np.sqrt(np.einsum("kd,kd->k", U, U))
        elif self.kind == "l1":
            out = np.abs(U).sum(axis=1)
        elif self.kind == "linf":
            out = np.abs(U).max(axis=1)
        elif self.kind == "weighted-l2":
            out = np.sqrt(np.einsum("kd,d,kd->k", U, self.weights, U))
        else:
            out = np.maximum((_canonical(U) @ self._facets.T).max(axis=1), 0.0)
        return float(out[0]) if scalar else out

    def cvx(self, expr):
        """The gauge as a convex cvxpy expression of a length-d vector."""
        import cvxpy as cp

        if self.kind == "euclidean":
            return cp.norm(expr, 2)
        if self.kind == "l1":
            return cp.norm(expr, 1)
        if self.kind == "linf":
            return cp.norm(expr, "inf")
        if self.kind == "weighted-l2":
            return cp.norm(cp.multiply(np.sqrt(self.weights), expr), 2)
        return cp.max(self._facets @ expr)

    def unit_sphere_min(self, samples: int = 4096) -> float:
        """Approximate min of the gauge over the Euclidean unit sphere."""
        if self.d == 2:
            th = np.linspace(0, 2 * np.pi, samples, endpoint=False)
            dirs = np.c_[np.cos(th), np.sin(th)]
        else:
            rng = np.random.default_rng(0)
            dirs = rng.normal(size=(samples, self.d))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return float(self(dirs).min())

    def to_dict(self):
        return {
            "version": "corr-norm/1",
            "dimension": self.d,
            "kind": self.kind,
            "hull_vertices": None if self.vertices is None else self.vertices.tolist(),
            "weights": None if self.weights is None else self.weights.tolist(),
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text) -> "NormModel":
        payload = json.loads(text) if isinstance(text, str) else text
        if payload.get("version") != "corr-norm/1":
            raise ValueError(f"unsupported version {payload.get('version')!r}")
        return cls(payload["dimension"], payload["kind"], payload.get("hull_vertices"),
                   payload.get("weights"), provenance=payload.get("provenance"))

    @property
    def fingerprint(self) -> str:
        body = {k: v for k, v in self.to_dict().items() if k != "provenance"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def __repr__(self):
        return f"NormModel(d={self.d}, kind={self.kind!r})"


def evaluate_norm(N: NormModel, u):
    return N(u)


def synthetic_model(name: str, d: int = 2, weights=None) -> NormModel:
    """Analytic test gauges: euclidean, l1, linf, weighted-l2."""
    if name not in NormModel.ANALYTIC:
        raise ValueError(f"unknown synthetic gauge {name!r}; choose from {NormModel.ANALYTIC}")
    return NormModel(d, name, weights=weights)


def build_norm_model(fits) -> NormModel:
    """Convex hull of the points e / rate(e), closed under lattice symmetries."""
    fits = list(fits)
    if not fits:
        raise ValueError("no fits given")
    dirs = np.array([f.direction for f in fits], dtype=float)
    d = dirs.shape[1]
    if np.linalg.matrix_rank(dirs) < d:
        raise ValueError(f"need at least {d} linearly independent directions")
    for f in fits:
        if not f.slope > 0:
            raise ValueError(f"nonpositive rate {f.slope} along direction {tuple(f.direction)}")
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    slopes = np.array([f.slope for f in fits])
    boundary = dirs / slopes[:, None]
    closed = np.concatenate([boundary @ M.T for M in hyperoctahedral_group(d)])
    closed = np.unique(np.round(closed, 15), axis=0)
    provenance = {"fits": [f.to_dict() for f in fits]}
    samples = [(tuple(e), float(s)) for e, s in zip(dirs.tolist(), slopes)]
    return NormModel(d, "hull", closed, boundary_samples=samples, provenance=provenance)


def default_directions(d: int) -> np.ndarray:
    """32 first-octant directions in d=2; the 26 lattice directions in d=3."""
    if d == 2:
        th = np.linspace(0.0, np.pi / 4, 32)
        return np.c_[np.cos(th), np.sin(th)]
    if d == 3:
        dirs = np.array([v for v in product((-1, 0, 1), repeat=3) if any(v)], dtype=float)
        return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    raise ValueError("default direction sets exist for d = 2, 3")


def estimate_norm(template: LatticeConfig, scales, directions=None, replicates=100_000,
                  seed=0, workers=1) -> NormModel:
    dirs = default_directions(template.d) if directions is None else np.asarray(directions)
    fits = []
    for i, e in enumerate(dirs):
        fit = measure_direction(e, scales, template, replicates, derive_seed(seed, i), workers)
        fits.append(fit)
        if template.edge_subset is None:
            R = min(r.box_radius for r in fit.per_scale)
            template = template.with_(box_radius=max(template.box_radius, R))
    model = build_norm_model(fits)
    model.provenance.update({"seed": seed, "scales": list(scales), "p": template.p})
    return model


# --------------------------------------------------------------------------
# exactly computable scale families
# --------------------------------------------------------------------------

def _grid_edges(lo, hi):
    """All edges of the integer grid on the box prod_i [lo_i, hi_i]."""
    d = len(lo)
    out = []
    for site in product(*[range(a, b + 1) for a, b in zip(lo, hi)]):
        for axis in range(d):
            if site[axis] < hi[axis]:
                nb = list(site)
                nb[axis] += 1
                out.append((tuple(site), tuple(nb)))
    return tuple(out)


def forced_path_family(p: float):
    """Only the straight path from 0 to (n, 0) exists, so P = p**n."""
    def family(n):
        edges = tuple(((k, 0), (k + 1, 0)) for k in range(n))
        return LatticeConfig(d=2, n=n, p=p, box_radius=n, edge_subset=edges), PointInCluster((1, 0))
    return family


def unit_square_family(p: float):
    """Grid on [0, n]^2 at scale n, target (1, 0)."""
    def family(n):
        edges = _grid_edges((0, 0), (n, n))
        return LatticeConfig(d=2, n=n, p=p, box_radius=n, edge_subset=edges), PointInCluster((1, 0))
    return family


def strip_family(p: float, half_width: int = 1):
    """Grid on [0, n] x [-w, w] at scale n, target (1, 0)."""
    def family(n):
        edges = _grid_edges((0, -half_width), (n, half_width))
        R = max(n, half_width)
        return LatticeConfig(d=2, n=n, p=p, box_radius=R, edge_subset=edges), PointInCluster((1, 0))
    return family


def norm_upper_bound_check(family, n: int, slack: float = 1e-12):
    """Finite-scale consequence of P(u_2n in C_2n) >= P(u_n in C_n)^2.

    Returns whether -(1/2n) log P_2n <= -(1/n) log P_n (+ slack) with both
    probabilities exact, or None when either probability vanishes.
    """
    p_n = exact_event_probability(*family(n))
    p_2n = exact_event_probability(*family(2 * n))
    if p_n <= 0 or p_2n <= 0:
        return None
    return -math.log(p_2n) / (2 * n) <= -math.log(p_n) / n + slack
