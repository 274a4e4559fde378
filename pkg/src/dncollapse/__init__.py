"""Double-null evolution of the spherically symmetric Einstein-scalar
system, with excision at small area radius and diagnostics for the
approach to the spacelike singularity."""

__version__ = "0.1.0"

from .geometry import (ACTIVE, EXCISED, UNSET, Cell, ConfigurationError,
                       DoubleNullGrid, FieldState, build_grid,
                       default_r_floor, refine)
from .field_equations import (ConstraintResiduals, MassData,
                              constraint_residuals, hawking_mass,
                              kretschmann_field, kretschmann_oracle)
from .initial_data import (CriterionReport, Family, InitialDataSpec,
                           build_initial_data, criterion_functionals,
                           trapped_threshold)
from .evolution import (ConvergenceRow, EvolutionReport,
                        NumericalBlowupError, SchemeConfig,
                        convergence_study, dump_checkpoint, load_checkpoint,
                        march, update_cell)
from .diagnostics import (DiagnosticsRecord, HorizonCrossing, OmegaFit,
                          RateFit, RayTrack, ScalarBounds,
                          diagnostics_record, find_apparent_horizon,
                          fit_blowup_exponent, mass_inequality_check,
                          mass_monotonicity_check, omega_window,
                          scalar_bound_constants, track_r_dr_limits)
from .cli import RunConfig, load_config, main

__all__ = [
    "ACTIVE", "EXCISED", "UNSET", "Cell", "ConfigurationError",
    "DoubleNullGrid", "FieldState", "build_grid", "default_r_floor",
    "refine",
    "ConstraintResiduals", "MassData", "constraint_residuals",
    "hawking_mass", "kretschmann_field", "kretschmann_oracle",
    "CriterionReport", "Family", "InitialDataSpec", "build_initial_data",
    "criterion_functionals", "trapped_threshold",
    "ConvergenceRow", "EvolutionReport", "NumericalBlowupError",
    "SchemeConfig", "convergence_study", "dump_checkpoint",
    "load_checkpoint", "march", "update_cell",
    "DiagnosticsRecord", "HorizonCrossing", "OmegaFit", "RateFit",
    "RayTrack", "ScalarBounds", "diagnostics_record",
    "find_apparent_horizon", "fit_blowup_exponent", "mass_inequality_check",
    "mass_monotonicity_check", "omega_window", "scalar_bound_constants",
    "track_r_dr_limits",
    "RunConfig", "load_config", "main",
    "__version__",
]
