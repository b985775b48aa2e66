"""Small-area epidemic surveillance: spatio-temporal Poisson smoothing of
daily areal counts and derived reproduction-number indicators."""

from .data_io import (
    RunConfig,
    SurveillanceDataset,
    emit_results,
    load_adjacency,
    load_dataset,
    load_draws,
    load_run_config,
    save_draws,
)
from .model import (
    ModelState,
    PosteriorDraws,
    SpatioTemporalPoissonModel,
    diagnostics,
    dow,
    fit,
    fitted_curves,
    log_intensity,
    log_posterior,
)
from .rt import (
    InfectivityProfile,
    RtSurface,
    build_infectivity,
    cori_rt,
    regional_rt,
    renewal_growth_rate,
    smoothed_rt,
)
from .spatial import (
    AdjacencyGraph,
    LerouxField,
    conditional_moments,
    lattice_graph,
    log_density,
    path_graph,
    sample_field,
)
from .simulate import SimulationSpec, simulate_from_model, simulate_renewal
from .splines import SplineBasis, build_basis, evaluate_trend
from .surveillance import (
    RiskCuts,
    classify_risk,
    pattern_correlation,
    risk_table,
    smoothed_rate,
    weekly_rate,
)

__version__ = "0.1.0"

__all__ = [
    "AdjacencyGraph",
    "InfectivityProfile",
    "LerouxField",
    "ModelState",
    "PosteriorDraws",
    "RiskCuts",
    "RtSurface",
    "RunConfig",
    "SimulationSpec",
    "SpatioTemporalPoissonModel",
    "SplineBasis",
    "SurveillanceDataset",
    "build_basis",
    "build_infectivity",
    "classify_risk",
    "conditional_moments",
    "cori_rt",
    "diagnostics",
    "dow",
    "emit_results",
    "evaluate_trend",
    "fit",
    "fitted_curves",
    "load_adjacency",
    "load_dataset",
    "load_draws",
    "lattice_graph",
    "load_run_config",
    "log_density",
    "log_intensity",
    "log_posterior",
    "path_graph",
    "pattern_correlation",
    "regional_rt",
    "renewal_growth_rate",
    "risk_table",
    "sample_field",
    "save_draws",
    "simulate_from_model",
    "simulate_renewal",
    "smoothed_rate",
    "smoothed_rt",
    "weekly_rate",
]
