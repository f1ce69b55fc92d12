"""
Finite-scale large-deviation rates and concentration around Steiner trees.

A cluster staying within 0.5 of the origin costs nothing at large scale:
-(1/n) log P heads to 0.  Conditioning the cluster to reach a^1 = (1, 0)
makes it hug the segment [0, a^1], and the fraction of conditioned clusters
further than eps from that segment drops with n.

Takes about a minute.
"""
from percolation_ldp import LatticeConfig, PolygonalSet, synthetic_model
from percolation_ldp.ldp import estimate_rate, reference_gap, steiner_concentration
from percolation_ldp.steiner import solve_steiner

template = LatticeConfig(p=0.2)
euclid = synthetic_model("euclidean")

est = estimate_rate(PolygonalSet.origin(), 0.5, [2, 4, 8], template,
                    replicates=100_000, seed=7, N=euclid)
for r in est.rows:
    print(f"n={r.n}: P = {r.p_hat:.4f}   rate = {r.rate:.4f}  [{r.rate_low:.4f}, {r.rate_high:.4f}]")
print("reference lambda({0}) =", est.lambda_reference)

# the cheapest way to stray eps from the segment is a bent detour
trees = solve_steiner([(1, 0)], euclid)
gap, cands = reference_gap(trees, euclid, 0.4)
print("gap upper bound %.4f from a %s candidate" % (gap, cands[0].label))

_, reports = steiner_concentration([(1, 0)], 0.4, [2, 4, 6], template,
                                   [5000, 100_000, 1_000_000], euclid, seed=8, gap=False)
for rep in reports:
    lo, hi = rep.failure_interval()
    flag = "" if not rep.inconclusive else "  (inconclusive)"
    print(f"n={rep.n}: {rep.acceptances} accepted of {rep.attempts}, "
          f"far from the tree {rep.failure_fraction:.3f} [{lo:.3f}, {hi:.3f}]{flag}")
