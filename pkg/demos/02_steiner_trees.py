"""
Minimal trees through the origin under different gauges.

Three corners of the unit square plus the origin: under the Euclidean norm
there are two mirror-image optimal trees of length 1 + sqrt(3).  Under l1 the
optimum is rectilinear and many trees tie.
"""
import math

import numpy as np

from percolation_ldp import solve_steiner, synthetic_model
from percolation_ldp.steiner import enumerate_topologies

corners = [(1, 0), (1, 1), (0, 1)]

euclid = synthetic_model("euclidean")
trees = solve_steiner(corners, euclid)
print("euclidean: %d minimal trees, length %.7f (1 + sqrt 3 = %.7f)"
      % (len(trees), trees[0].total_length, 1 + math.sqrt(3)))
for t in trees:
    print("  Steiner points", np.round(t.steiner_points, 4).tolist())

l1 = synthetic_model("l1")
best = solve_steiner(corners, l1)
print("l1: length %.6f, %d distinct optimal shapes kept" % (best[0].total_length, len(best)))

# how many topologies get searched
for m in range(2, 6):
    print(f"{m} terminals: {len(enumerate_topologies(m))} topologies")

# a tree is just a polygonal set, so it serializes like any other
print(trees[0].to_json()[:120], "...")
