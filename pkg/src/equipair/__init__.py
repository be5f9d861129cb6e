"""Pair correlation, local counts and discrepancy of triangular point arrays."""

import numba

# The default TBB layer warns on version mismatch; OpenMP is always available.
numba.config.THREADING_LAYER = "omp"

from .arrays import (  # noqa: E402
    BallRescaled,
    Grid,
    Kronecker,
    PolyFrac,
    PrimeFrac,
    RandomUniform,
    RowSchedule,
    SqrtFrac,
    TriangularArray,
    generate_row,
    prime_sieve,
)
from .geometry import (  # noqa: E402
    Ball,
    Box,
    FlatTorus,
    UnitAreaSphere,
    Window,
    ball_overlap,
    omega_measure,
    sample_uniform,
    space_from_json,
    sphere_geodesic,
    torus_distance,
    unit_ball_volume,
)
from .localstats import (  # noqa: E402
    LocalCounts,
    StarDiscrepancy,
    empirical_vs_sigma,
    find_poisson_scale,
    lemma4_check_torus,
    mean_functional,
    mu_x,
    variance_functional,
    verify_poisson,
    verify_theorem_forward,
)
from .paircorr import (  # noqa: E402
    PairCorrelation,
    PairCorrelationCurve,
    TestFunction,
    pair_correlation_curve,
    pc_brute_force,
    pc_distance_curve,
    pc_euclidean,
    pc_sphere_curve,
    pc_torus,
    pc_torus_curve,
)
from .scaling import (  # noqa: E402
    FrameField,
    ScaleSequence,
    SigmaMeasure,
    normalize_frame,
    scale_at,
    sigma_sample,
)

__version__ = "0.1.0"
