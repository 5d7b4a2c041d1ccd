"""Testing convexity of a discrete distribution with finite support.

The test statistic is the scaled squared distance between the empirical
pmf and its convex least-squares fit; critical values come from Monte
Carlo projections of Gaussian draws onto second-difference cones.
"""

from .calibration import (
    CalibrationConfig,
    DegenerateSupportError,
    TestReport,
    VnRule,
    calibrate,
    knot_constraint_set,
    test_statistic,
    vn_value,
)
from .pmf import (
    Pmf,
    Sample,
    ShapeError,
    TriangularMixture,
    benchmark_pmfs,
    delta,
    empirical_pmf,
    knots,
    mixture_to_pmf,
    perturbed_triangular,
    pmf_to_mixture,
    sample_from,
    triangular,
    truncated_poisson,
)
from .projection import (
    ConeProjector,
    ConeSpec,
    ConvexLseResult,
    NotPSDError,
    cone_kkt_residual,
    cone_project,
    convex_lse,
    dispersion_matrix,
    factor_psd,
    rank_diagnostic,
    sample_gaussian,
)
from .simulation import ExperimentPlan, SimTable, emit_table, preset, run_cell, run_plan


__version__ = "0.1.0"
