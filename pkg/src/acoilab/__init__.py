"""Numerical laboratory for average-cost MDPs via the vanishing-discount approach."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    ActionStructure,
    CostTable,
    DegenerateKernelError,
    DeterministicPolicy,
    DiscreteKernel,
    MarkovPolicy,
    MdpModel,
    StateGrid,
    UcParameters,
    WeightVector,
    discretize_density_kernel,
    evaluate_policy_average_cost,
    validate_model,
    weighted_norm,
)
from .report import AssumptionEntry, AssumptionReport  # noqa: E402
from .discounted import (  # noqa: E402
    DiscountedSolution,
    bellman_apply,
    build_tilde_weight,
    extract_epsilon_policy,
    solve_dcoe,
)
from .vanishing import (  # noqa: E402
    DiscountSchedule,
    VanishingDiscountResult,
    acoi_residual,
    default_alphas,
    egoroff_diagnostic,
    extract_acoi_policy,
    lower_envelope,
    pc_relative_values,
    reverse_inequality_residual,
    rho_star,
    run_vanishing_discount,
    solve_schedule,
    uc_relative_values,
    upper_envelope,
)
from .minpair import (  # noqa: E402
    OccupationMeasure,
    PairCandidate,
    average_occupation,
    cost_of_pair,
    decompose,
    improve_pair,
    invariance_residual,
    limit_occupation,
    minimum_pair_search,
    propagate_marginals,
)
from .presets import (  # noqa: E402
    DamModelParams,
    LqModelParams,
    build_dam_model,
    build_lq_model,
    build_micro_oracles,
    build_preset,
    lq_reference_policy,
)
