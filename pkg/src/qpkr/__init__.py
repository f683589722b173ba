"""Quasiperiodic kicked rotor: quantum evolution, classical baselines,
Anderson-lattice mapping, and finite-time scaling analysis."""

__version__ = "0.1.0"

from .errors import (
    BootstrapError,
    GridSaturatedError,
    NonConvergenceError,
    NonOverlapError,
    ParameterError,
    RankDeficiencyError,
    SingularKickError,
    SweepFailure,
)
from .params import (
    EXPERIMENTAL_PATH,
    GOLDEN,
    PhysicalParams,
    RotorParams,
    SweepPath,
    kick_strength,
    load_config,
    log_schedule,
    physical_to_scaled,
)
from .observables import (
    AnomalousFit,
    Distribution,
    EnsembleSeries,
    GaussianFit,
    LocalizationFit,
    fit_anomalous_diffusion,
    fit_exponential_localization,
    fit_gaussian_shape,
    lambda_series,
    localization_time_estimate,
    pi0,
    read_series,
    write_distributions,
    write_series,
)
from .classical import (
    ClassicalState,
    classical_diffusion_constant,
    evolve_classical_3d,
    evolve_classical_ensemble,
    quasiperiodic_classical_step,
    standard_map_step,
)
from .quantum import (
    EnsembleSpec,
    MomentumGrid,
    WaveState,
    apply_gravity_drift,
    apply_spontaneous_emission,
    dense_oracle_evolve,
    evolve_ensemble,
    step,
    suggest_grid_size,
)
from .anderson import (
    AndersonLattice,
    CommensurabilityReport,
    FloquetLocalization,
    HoppingCoefficients,
    OnsiteEnergies,
    build_lattice_1d,
    build_lattice_3d,
    commensurability_check,
    floquet_localization_lengths,
    hopping_coefficients_1d,
    hopping_coefficients_3d,
    hopping_decay_rate,
    onsite_energies_1d,
    onsite_energies_3d,
    period_search,
    reconstruct_kernel,
)
from .scaling import (
    BootstrapResult,
    CollapseResult,
    CriticalFit,
    CrossingPoint,
    CutoffFit,
    ScalingDataset,
    SlopeMethodResult,
    WegnerReport,
    bootstrap_ci,
    bootstrap_cutoff,
    bootstrap_full_scaling,
    collapse,
    critical_window,
    crossing_points,
    dataset_from_series,
    fit_critical_cutoff,
    fit_full_scaling,
    normalize_xi,
    order_robustness,
    read_dataset,
    slope_method,
    wegner_consistency,
    write_dataset,
)
from .harness import (
    RunManifest,
    SweepResult,
    content_hash,
    default_output_dir,
    reproduce_figure,
    run_classical_point,
    run_point,
    run_sweep,
)
