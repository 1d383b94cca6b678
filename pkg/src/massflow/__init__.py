"""massflow: a laboratory for coalescing heavy-diffusion particle flows.

Particles on the unit interval diffuse with variance rate inverse to
their mass and merge on contact; the package simulates the resulting
monotone flow, its measure-valued pushforward with exact 1-D quadratic
Wasserstein geometry, a discrete stochastic calculus (projection,
integrals, change of measure), and a short-time large-deviations
harness.
"""

from .config import ExperimentConfig, parse_config_file
from .flow import (
    Block,
    FlowPath,
    FlowState,
    MergeRecord,
    eval_at,
    init_uniform,
    mass_at,
    simulate_path,
    step,
)
from .measures import (
    AtomicMeasure,
    QuantileFunction,
    cluster_count,
    l2_lambda_distance,
    l2_mu_distance,
    pushforward,
    quantile,
    wasserstein2,
    wasserstein2_to_uniform,
)
from .calculus import (
    IntegralPath,
    SimpleProcess,
    integrate_simple,
    integration_by_parts_check,
    project,
    projection_continuity_probe,
    self_representation_check,
)
from .girsanov import (
    DriftPath,
    TiltedEstimate,
    drift_convergence_diagnostic,
    log_likelihood_ratio,
    simulate_drifted,
    tilted_probability,
)
from .ldp import (
    GeneratorProbe,
    TargetSet,
    VaradhanReport,
    VaradhanRow,
    generator_probe,
    rate_function,
    rescale,
    varadhan_sweep,
)
from .batteries import (
    TestReport,
    coalescence_battery,
    generator_battery,
    martingale_battery,
    scaling_battery,
)

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "parse_config_file",
    "Block",
    "FlowState",
    "FlowPath",
    "MergeRecord",
    "init_uniform",
    "step",
    "simulate_path",
    "eval_at",
    "mass_at",
    "AtomicMeasure",
    "QuantileFunction",
    "pushforward",
    "quantile",
    "wasserstein2",
    "wasserstein2_to_uniform",
    "cluster_count",
    "l2_lambda_distance",
    "l2_mu_distance",
    "SimpleProcess",
    "IntegralPath",
    "project",
    "integrate_simple",
    "self_representation_check",
    "integration_by_parts_check",
    "projection_continuity_probe",
    "DriftPath",
    "TiltedEstimate",
    "simulate_drifted",
    "log_likelihood_ratio",
    "tilted_probability",
    "drift_convergence_diagnostic",
    "TargetSet",
    "VaradhanRow",
    "VaradhanReport",
    "GeneratorProbe",
    "rate_function",
    "rescale",
    "varadhan_sweep",
    "generator_probe",
    "TestReport",
    "martingale_battery",
    "scaling_battery",
    "coalescence_battery",
    "generator_battery",
]
