"""Minimum risk-to-go, the constant rho_max and feasible threshold intervals."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mdp import ProblemSpec
from .risk import one_step_risk

log = logging.getLogger(__name__)

MEMBER_TOL = 1e-9


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    @property
    def degenerate(self) -> bool:
        return self.lo == self.hi

    def contains(self, r: float, tol: float = MEMBER_TOL) -> bool:
        return self.lo - tol <= r <= self.hi + tol


@dataclass(frozen=True, eq=False)
class FeasibilityTables:
    """``min_risk[k, x]`` is the minimum risk-to-go from ``x`` at stage ``k``
    (row ``N`` is zero) and ``upper_bound[k] = (N - k) * rho_max``."""

    min_risk: np.ndarray  # (N + 1, S)
    rho_max: float
    upper_bound: np.ndarray  # (N + 1,)

    @property
    def horizon(self) -> int:
        return self.min_risk.shape[0] - 1

    def interval(self, k: int, x: int) -> Interval:
        return feasible_interval(self, k, x)


def min_risk_to_go(spec: ProblemSpec) -> np.ndarray:
    """Backward recursion ``R_k(x) = min_u d(x, u) + rho(R_{k+1})`` with ``R_N = 0``."""
    N, S = spec.horizon, spec.n_states
    table = np.zeros((N + 1, S))
    d = spec.constraint_cost
    for k in range(N - 1, -1, -1):
        for x in range(S):
            table[k, x] = min(
                d[x, u] + one_step_risk(spec, spec.risk_measure, x, u, table[k + 1])
                for u in spec.admissible[x]
            )
    table.setflags(write=False)
    return table


def rho_max(spec: ProblemSpec) -> float:
    # rho of a deterministic cost is the cost itself (translation invariance, rho(0) = 0)
    best = max(
        spec.constraint_cost[x, u] for x in range(spec.n_states) for u in spec.admissible[x]
    )
    assert abs(spec.risk_measure.evaluate([best], [1.0]) - best) <= 1e-12
    return float(best)


def build_tables(spec: ProblemSpec) -> FeasibilityTables:
    rmax = rho_max(spec)
    N = spec.horizon
    upper = np.array([(N - k) * rmax for k in range(N + 1)], dtype=float)
    upper.setflags(write=False)
    return FeasibilityTables(min_risk_to_go(spec), rmax, upper)


def feasible_interval(tables: FeasibilityTables, k: int, x: int) -> Interval:
    """Closed interval of useful thresholds at ``(k, x)``; ``{0}`` at the horizon."""
    N = tables.horizon
    if not 0 <= k <= N:
        raise IndexError(f"stage {k} out of range 0..{N}")
    if k == N:
        return Interval(0.0, 0.0)
    return Interval(float(tables.min_risk[k, x]), float(tables.upper_bound[k]))


def clamp_threshold(tables: FeasibilityTables, k: int, r: float) -> float:
    """Cap ``r`` at the stage upper bound; larger thresholds are redundant."""
    hi = float(tables.upper_bound[k])
    if r > hi:
        log.info("threshold %.17g exceeds upper bound %.17g at stage %d; clamped", r, hi, k)
        return hi
    return r
