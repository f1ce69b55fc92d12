"""
Exact enumeration next to Monte Carlo on tiny boxes.

On the four edges of the unit square the origin reaches (1, 0) either along
the bottom edge or the long way round, so P = p + (1 - p) p^3.  The oracle
gets that exactly; sampling gets it within its Wilson interval.
"""
from percolation_ldp import LatticeConfig, PointInCluster
from percolation_ldp.lattice import estimate_event_probability
from percolation_ldp.oracle import exact_event_probability

square = (((0, 0), (1, 0)), ((1, 0), (1, 1)), ((0, 1), (1, 1)), ((0, 0), (0, 1)))
cfg = LatticeConfig(p=0.3, box_radius=1, edge_subset=square)
event = PointInCluster((1, 0))

exact = exact_event_probability(cfg, event)
print("exact      ", exact, "  closed form", 0.3 + 0.7 * 0.3 ** 3)

est = estimate_event_probability(cfg, event, 100_000, seed=1, confidence=0.99)
print("sampled    ", est.value, " 99% interval", (round(est.ci_low, 5), round(est.ci_high, 5)))

# the full 3x3 box has 12 edges, still trivially enumerable
box = LatticeConfig(p=0.3, box_radius=1)
for target in [(1, 0), (1, 1), (-1, 1)]:
    ev = PointInCluster(target)
    p_exact = exact_event_probability(box, ev)
    p_mc = estimate_event_probability(box, ev, 50_000, seed=2).value
    print(f"{str(target):8s} exact {p_exact:.5f}  sampled {p_mc:.5f}")

# past 24 edges the oracle refuses rather than grinding for hours
try:
    exact_event_probability(LatticeConfig(p=0.3, box_radius=2), event)
except Exception as exc:
    print(type(exc).__name__, "-", exc)
