"""meterpriv: a numerical laboratory for battery-shaped meter-load privacy.

Simulates stochastic energy management policies over harvesting and
storage, estimates the information leakage rate between appliance and grid
loads with a scaled forward trellis recursion, and searches policy space
for Pareto-optimal privacy/efficiency trade-offs.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConvergenceError,
    EnumerationSizeError,
    EvaluationError,
    InvalidParameterError,
    PolicyValidationError,
    ZeroProbabilityError,
)
from .model import (
    BatteryParams,
    BinaryEHParams,
    Branch,
    NoBatteryParams,
    Policy,
    PolicyParams,
    SystemSpec,
    ValidationReport,
    binary_entropy,
    build_battery_policy,
    build_binary_eh_policy,
    build_no_battery_policy,
    build_policy,
    complementary_params,
    no_battery_leakage,
    no_battery_output,
    no_battery_waste,
    symmetric_params,
    validate_policy,
)
from .pareto import (
    CapacitySweepEntry,
    HarvestSweepEntry,
    ParetoFront,
    RatePair,
    WasteSweepEntry,
    convex_hull_timeshare,
    evaluate_grid,
    evaluate_policy,
    evaluate_policy_replicated,
    grid_policies,
    pareto_filter,
    probability_grid,
    sweep_battery_capacity,
    sweep_harvest_rate,
    sweep_waste,
    with_hull,
)
from .simulate import (
    BatteryChain,
    Trajectory,
    battery_chain,
    derive_seed,
    export_trajectory,
    make_rng,
    sample_trajectory,
    wasted_energy_exact,
    wasted_energy_mc,
)
from .trellis import (
    LeakageEstimate,
    TrellisMetrics,
    block_joint_pmf,
    block_marginal_pmf,
    brute_block_leakage,
    brute_block_pmfs,
    estimate_leakage,
    exact_block_leakage,
    exact_joint_logprob,
    exact_sequence_logprob,
    forward_logprobs,
    forward_step,
    init_metrics,
)
