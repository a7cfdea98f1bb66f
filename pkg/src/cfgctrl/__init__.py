"""Feedback-controlled classifier-free guidance on analytic flow systems."""

from .config import ConfigError, ExperimentConfig, build_control_law, build_system, load_config
from .control_lab import (
    ConvergenceReport,
    CorridorRow,
    PerturbedDynamics,
    corridor_sweep,
    simulate_sliding,
    stability_corridor,
)
from .flow_systems import (
    FlowSystem,
    GaussComponent,
    error_signal,
    marginal_velocity,
    mc_velocity_oracle,
)
from .guidance import (
    ControlLaw,
    SlidingState,
    StepContext,
    apg_combine,
    apply_controller,
    cfg_combine,
    cfg_zero_star_combine,
    rectified_cfgpp_combine,
    smc_step,
    weight_schedule,
)
from .metrics import GaussFit, QualityReport, lyapunov_audit, phase_plane, quality_report, w2_gaussian
from .numerics import Rng, cholesky_solve, dot, gaussian_sample, sign_elementwise, spectral_norm
from .sampler import (
    DivergenceError,
    IntegratorSpec,
    RunResult,
    Trace,
    run_batch,
    sample_trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ControlLaw",
    "ConvergenceReport",
    "CorridorRow",
    "DivergenceError",
    "ExperimentConfig",
    "FlowSystem",
    "GaussComponent",
    "GaussFit",
    "IntegratorSpec",
    "PerturbedDynamics",
    "QualityReport",
    "Rng",
    "RunResult",
    "SlidingState",
    "StepContext",
    "Trace",
    "apg_combine",
    "apply_controller",
    "build_control_law",
    "build_system",
    "cfg_combine",
    "cfg_zero_star_combine",
    "cholesky_solve",
    "corridor_sweep",
    "dot",
    "error_signal",
    "gaussian_sample",
    "load_config",
    "lyapunov_audit",
    "marginal_velocity",
    "mc_velocity_oracle",
    "phase_plane",
    "quality_report",
    "rectified_cfgpp_combine",
    "run_batch",
    "sample_trajectory",
    "sign_elementwise",
    "simulate_sliding",
    "smc_step",
    "spectral_norm",
    "stability_corridor",
    "w2_gaussian",
    "weight_schedule",
]
