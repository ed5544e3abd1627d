"""Finite-horizon MDPs with time-consistent risk constraints, solved by
dynamic programming over the augmented state (state, risk threshold)."""

from .feasibility import FeasibilityTables, build_tables, feasible_interval, min_risk_to_go, rho_max
from .mdp import History, HistoryPolicy, PolicyError, ProblemSpec, expected_cost, validate
from .oracle import brute_force_solve, check_coherence
from .policy import InfeasibleStateError, act, rollout, verify_policy
from .risk import FiniteDistribution, RiskMeasureSpec, evaluate, one_step_risk, policy_risk
from .solver import OffGridError, bellman, build_grid, solve

__version__ = "0.1.0"

__all__ = [
    "FeasibilityTables", "FiniteDistribution", "History", "HistoryPolicy", "InfeasibleStateError",
    "OffGridError", "PolicyError", "ProblemSpec", "RiskMeasureSpec", "act", "bellman",
    "brute_force_solve", "build_grid", "build_tables", "check_coherence", "evaluate",
    "expected_cost", "feasible_interval", "min_risk_to_go", "one_step_risk", "policy_risk",
    "rho_max", "rollout", "solve", "validate", "verify_policy",
]
