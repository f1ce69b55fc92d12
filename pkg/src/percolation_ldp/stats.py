"""Binomial confidence intervals and seed derivation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm


def wilson_interval(hits: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion.

    With zero hits (or all hits) the open side uses the one-sided quantile,
    so the reported bound is a one-sided Wilson bound at ``confidence``.
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= hits <= trials:
        raise ValueError(f"hits={hits} outside [0, {trials}]")
    if hits == 0:
        z = norm.ppf(confidence)
        return 0.0, float(z * z / (trials + z * z))
    if hits == trials:
        z = norm.ppf(confidence)
        return float(trials / (trials + z * z)), 1.0
    z = norm.ppf(1.0 - (1.0 - confidence) / 2.0)
    phat = hits / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return float(max(0.0, center - half)), float(min(1.0, center + half))


@dataclass(frozen=True)
class EstimateWithCI:
    """Hit fraction of a Monte Carlo experiment with its Wilson interval."""

    value: float
    ci_low: float
    ci_high: float
    replicates: int
    hits: int
    confidence: float = 0.95
    boundary_touches: int = 0

    @classmethod
    def from_counts(cls, hits, replicates, confidence=0.95, boundary_touches=0):
        lo, hi = wilson_interval(hits, replicates, confidence)
        return cls(hits / replicates, lo, hi, replicates, hits, confidence, boundary_touches)

    @property
    def boundary_touch_fraction(self) -> float:
        return self.boundary_touches / self.replicates

    def with_confidence(self, confidence: float) -> "EstimateWithCI":
        return EstimateWithCI.from_counts(self.hits, self.replicates, confidence,
                                          self.boundary_touches)

    def contains(self, x: float) -> bool:
        return self.ci_low <= x <= self.ci_high


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit child seed for the stream labelled by ``keys``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def intervals_overlap(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]
