"""
Recovering the correlation norm from simulated connection probabilities.

Along each direction e the decay of P(n e in C_n) is fitted as
slope * n + intercept; slopes become support values of a symmetric gauge.
A handful of directions and small replicate counts keep this quick, so the
result is rough.  Exact oracle families show the same fit with no noise.
"""
import math

import numpy as np

from percolation_ldp import LatticeConfig
from percolation_ldp.norm import (build_norm_model, forced_path_family, measure_direction,
                                  norm_upper_bound_check, unit_square_family)

# exact: a single forced path decays at exactly -log p per unit length
fit = measure_direction((1, 0), [1, 2, 3], LatticeConfig(p=0.3), exact=True,
                        family=forced_path_family(0.3))
print("forced path slope %.6f   -log p = %.6f" % (fit.slope, -math.log(0.3)))

# subadditivity at finite scale on exact families
for p in (0.1, 0.3, 0.45):
    print(p, norm_upper_bound_check(unit_square_family(p), 1))

# simulated: four first-octant directions, 20k replicates per scale
template = LatticeConfig(p=0.3, box_radius=1)
fits = []
for theta in np.linspace(0, math.pi / 4, 4):
    f = measure_direction((math.cos(theta), math.sin(theta)), [2, 3, 4], template,
                          replicates=20_000, seed=int(100 * theta))
    fits.append(f)
    print("direction %.3f rad: slope %.3f, intercept %.3f" % (theta, f.slope, f.intercept))

# the gauge is the convex hull of the fitted points, so a noisy low slope in
# one direction pulls the gauge below the raw slopes of its neighbours
N = build_norm_model(fits)
print("gauge of (1,0) %.3f, of (1,1)/sqrt2 %.3f" % (N((1, 0)), N((1 / math.sqrt(2),) * 2)))
print("fingerprint", N.fingerprint)
