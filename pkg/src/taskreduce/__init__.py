"""Reductions between reinforcement-learning tasks, and counterexamples to them."""

from .learn import LearnerConfig, PolicyTrace, convergence_trace, model_based_learner, pac_mistake_count, q_learning
from .ltl import LtlSyntaxError, parse_ltl, to_text
from .machines import (
    AbstractRewardMachine,
    BuchiAutomaton,
    RewardMachine,
    build_reach_arm,
    build_safe_arm,
    machine_from_json,
    machine_to_json,
    rm_return,
)
from .mdp import (
    FiniteMemoryPolicy,
    LassoRun,
    Mdp,
    MdpShape,
    MdpValidationError,
    PositionalPolicy,
    Run,
    Simulator,
    Violation,
    derive_seed,
    load_mdp,
    mdp_from_json,
    mdp_to_json,
    validate_mdp,
)
from .reduce import (
    ReductionDescriptor,
    ReductionError,
    check_optimality_preservation,
    lambda_sink_reduction,
    map_policy,
    multidiscount_reduction,
    product_rm_reduction,
    reduced_mdp,
    two_discount_reduction,
    validate_reduction,
    wrap_simulator,
)
from .specs import DiscountedRM, LimitAvgRM, Ltl, Reach, Safe, UnsupportedSpecError, is_eps_optimal, optimal_value, spec_value

__version__ = "0.1.0"
