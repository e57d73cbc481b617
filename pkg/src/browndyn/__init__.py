"""Brownian dynamics with position-dependent diffusion.

Integrators for dX = F(X) dt + sigma Sigma(X) dW with
F = -D grad V + (sigma^2/2) div D, including a post-processed second-order
sampler, weak baselines, mean-square stability maps, quadrature-backed
estimators, and a config-driven benchmark harness.
"""

from .estimators import (
    ConvergenceRecord,
    Estimate,
    HistogramEstimator,
    HistogramRun,
    ReferenceOracle,
    adaptive_simpson,
    default_burn_in,
    ensemble_histogram,
    ensemble_observable,
    fit_slope,
    l1_bin_error,
    reference_squarenorm,
    steps_for_horizon,
    time_average_histogram,
    time_average_observable,
)
from .harness import (
    ExperimentConfig,
    geometric_h_grid,
    load_config,
    parse_config,
    preset_text,
    read_records_csv,
    run_experiment,
    run_reference,
    write_problem_grid_csv,
    write_records_csv,
    write_region_csv,
)
from .integrators import (
    MethodKind,
    default_x0,
    method_from_string,
    simulate,
)
from .model import (
    DiffusionEval,
    DriftEval,
    ProblemSpec,
    UsageError,
    drift,
    make_diffusion,
    make_potential,
    make_problem,
    sigma_eval,
)
from .noise import NoiseMethodKind, noise_increment
from .rng import NoiseDraws, StreamKey, draw
from .stability import (
    RegionScan,
    empirical_second_moment,
    exact_region,
    moment_matrix,
    moment_matrix_grid,
    scan_region,
    spectral_radius,
    spectral_radius_grid,
    stability_entries,
)

__all__ = [
    "ConvergenceRecord",
    "DiffusionEval",
    "DriftEval",
    "Estimate",
    "ExperimentConfig",
    "HistogramEstimator",
    "HistogramRun",
    "MethodKind",
    "NoiseDraws",
    "NoiseMethodKind",
    "ProblemSpec",
    "ReferenceOracle",
    "RegionScan",
    "StreamKey",
    "UsageError",
    "adaptive_simpson",
    "default_burn_in",
    "default_x0",
    "draw",
    "drift",
    "empirical_second_moment",
    "ensemble_histogram",
    "ensemble_observable",
    "exact_region",
    "fit_slope",
    "geometric_h_grid",
    "l1_bin_error",
    "load_config",
    "make_diffusion",
    "make_potential",
    "make_problem",
    "method_from_string",
    "moment_matrix",
    "noise_increment",
    "moment_matrix_grid",
    "parse_config",
    "preset_text",
    "read_records_csv",
    "reference_squarenorm",
    "run_experiment",
    "run_reference",
    "scan_region",
    "sigma_eval",
    "simulate",
    "spectral_radius",
    "spectral_radius_grid",
    "stability_entries",
    "steps_for_horizon",
    "time_average_histogram",
    "time_average_observable",
    "write_problem_grid_csv",
    "write_records_csv",
    "write_region_csv",
]

__version__ = "0.1.0"
