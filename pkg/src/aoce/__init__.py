"""Optimal transmission policies for remote estimation of a Markov source
under significance-aware age of consecutive error (AoCE).

States are 0-based throughout the library; config files and CLI output use
1-based states.
"""

from .evaluation import (
    SimulationReport,
    StationaryDistribution,
    average_cost_exact,
    simulate,
    stationary_distribution,
    truncation_gap_bound,
    truncation_sweep,
)
from .kernels import BACKEND
from .mdp import SystemState, TruncatedMdp, aoce_update, build, check_recurrence_always_transmit, transitions
from .policies import (
    NEVER,
    BaselineSpec,
    HistoryPolicy,
    NotSwitching,
    Policy,
    SwitchingPolicy,
    expand,
    extract_thresholds,
    make_baseline,
)
from .significance import (
    Clipped,
    Constant,
    Exponential,
    Linear,
    Logarithmic,
    SignificanceProfile,
    Table,
    age_penalty,
    alarm_profile,
    check_existence,
    growth_ratio_limit,
    per_stage_cost,
)
from .solvers import (
    SolveResult,
    brute_force_switching_search,
    classical_policy_iteration,
    grid_search_baseline,
    policy_evaluation,
    relative_value_iteration,
    structured_policy_iteration,
)
from .source import SourceModel, classify_states, is_symmetric, make_symmetric_source, validate

__version__ = "0.1.0"
