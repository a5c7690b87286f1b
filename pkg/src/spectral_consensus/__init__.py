"""Spectral-density approximation and acceleration-filter design for
distributed average consensus on directed random networks."""

from .errors import (
    CoverageError,
    DegenerateModelError,
    DensityFailure,
    EmptyRegionError,
    InfeasibleBaselineError,
    InvalidInputError,
    IsolatedNodeError,
    McFailure,
    NodeTransitivityViolation,
    NonConvergenceError,
    NumericalFailure,
    PerronFailure,
    RateUndefinedError,
    SolverFailure,
    SpectralConsensusError,
)
from .grids import DensityGrid, GridSpec, build_u_grid, l1_distance
from .graph_models import (
    DirectedGraph,
    IterationMatrix,
    MeanSpectrum,
    SbmConfig,
    VarianceProfile,
    iteration_matrix,
    mean_adjacency,
    mean_spectrum,
    sample_sbm,
    sample_sbm_with_retry,
    scaling_gamma,
    variance_profile,
)
from .girko_k25 import (
    CanonicalSolution,
    GeneralModel,
    ScalarModel,
    compute_m,
    integrate_density,
    map_xi_density_to_w,
    solve_general_ce,
    solve_scalar_ce,
)
from .spectral_empirical import (
    ConsensusProjector,
    SpectrumSample,
    convergence_factor,
    eigenvalues,
    empirical_density,
    expected_density_mc,
    left_perron,
)
from .filter_design import (
    Filter,
    Region,
    SamplePoints,
    build_q,
    design_filter,
    extract_region,
    mean_spectrum_filter,
    oracle_filter,
    per_iteration_rate,
    sample_region,
)
from .consensus_sim import (
    ComparisonTable,
    Trajectory,
    compare_filters,
    error_trajectory,
    estimate_rate,
    run_consensus,
)

__version__ = "0.1.0"
