"""Large deviations of subcritical percolation clusters at desk scale.

Bond percolation on boxes of (1/n) Z^d with an exact enumeration oracle,
Hausdorff geometry of polygonal sets, a convex-gauge model of the
correlation norm, Steiner trees under that gauge, and the experiments that
tie them together.
"""
from .events import (AllOf, AnyOf, ConstrainedConnection, DisjointOccurrence, HausdorffBall, Not,
                     PointInCluster, PointsInCluster, Region, SetConnection, disjoint, escape_event)
from .geometry import (GeometryError, PointCloud, PolygonalSet, directed_hausdorff,
                       epsilon_neighborhood_contains, hausdorff_distance, norm_length, simplify)
from .lattice import (BondConfiguration, Cluster, LatticeConfig, SubcriticalityError,
                      estimate_event_probability, extract_origin_cluster, p_c_bound,
                      round_to_lattice, sample_configuration)
from .ldp import (ConditionedSampleReport, RateEstimate, SkeletonTree, estimate_rate,
                  extract_skeleton, radius_tail, reference_gap, sample_conditioned,
                  steiner_concentration)
from .norm import (NormModel, RateFit, build_norm_model, estimate_norm, evaluate_norm,
                   measure_direction, norm_upper_bound_check, synthetic_model)
from .oracle import EnumerationCapError, EnumerationOracle, exact_event_probability
from .stats import EstimateWithCI, wilson_interval
from .steiner import SteinerTopology, SteinerTree, enumerate_topologies, optimize_positions, solve_steiner

__all__ = [name for name in dir() if not name.startswith("_")]
