"""Executing the augmented-state optimal policy: lookup, rollout, verification."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .feasibility import MEMBER_TOL
from .mdp import HistoryPolicy, ProblemSpec, expected_cost
from .risk import policy_risk
from .solver import FEAS_TOL, FeasiblePair, OffGridError, PolicyTable

RNG_NAME = "numpy.random.PCG64"
MATCH_TOL = 1e-9


class InfeasibleStateError(RuntimeError):
    """The augmented state ``(k, x, r)`` admits no feasible control."""


def _node(table: PolicyTable, k: int, x: int, r: float) -> int:
    if not 0 <= k < table.horizon:
        raise IndexError(f"stage {k} out of range 0..{table.horizon - 1}")
    g = table.grid.at(k, x)
    if r < g[0] - MEMBER_TOL:
        raise InfeasibleStateError(f"threshold {r!r} below minimum risk-to-go {g[0]!r} at stage {k}, state {x}")
    i = table.grid.node_index(k, x, min(r, g[-1]))
    if i is None:
        raise OffGridError(f"threshold {r!r} is not a grid node at stage {k}, state {x}")
    return i


def act(table: PolicyTable, k: int, x: int, r: float) -> FeasiblePair:
    """Stored minimizer ``(u*, r')`` at the augmented state ``(k, x, r)``."""
    i = _node(table, k, x, r)
    pair = table.entry(k, x, i)
    if pair is None:
        raise InfeasibleStateError(f"no feasible control at stage {k}, state {x}, threshold {r!r}")
    return pair


def _start_node(table: PolicyTable, x0: int, r0: float) -> int:
    i = table.grid.snap_index(0, x0, r0)
    if i is None or table.entry(0, x0, i) is None:
        raise InfeasibleStateError(f"initial threshold {r0!r} is infeasible from state {x0}")
    return i


@dataclass(frozen=True)
class RolloutStep:
    stage: int
    state: int
    threshold: float
    control: int
    stage_cost: float
    constraint_cost: float


@dataclass
class RolloutRecord:
    steps: list[RolloutStep]
    final_state: int
    seed: int
    generator: str = RNG_NAME

    @property
    def total_cost(self) -> float:
        return sum(s.stage_cost for s in self.steps)

    @property
    def total_constraint_cost(self) -> float:
        return sum(s.constraint_cost for s in self.steps)


def rollout(spec: ProblemSpec, table: PolicyTable, seed: int, x0: int | None = None,
            r0: float | None = None) -> RolloutRecord:
    """Simulate one episode, carrying the threshold as part of the state.

    Successors are drawn by inverse-CDF sampling from one uniform per stage of
    a PCG64 stream seeded with ``seed``.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    x = spec.initial_state if x0 is None else x0
    r0 = spec.initial_threshold if r0 is None else r0
    i = _start_node(table, x, r0)
    steps = []
    for k in range(spec.horizon):
        pair = table.entry(k, x, i)
        if pair is None:
            raise InfeasibleStateError(f"rollout reached infeasible node at stage {k}, state {x}")
        u = pair.control
        steps.append(RolloutStep(k, x, float(table.grid.at(k, x)[i]), u,
                                 float(spec.stage_cost[x, u]), float(spec.constraint_cost[x, u])))
        succ = spec.successors(x, u)
        cdf = np.cumsum(spec.kernel[x, u, succ])
        j = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(succ) - 1)
        y = int(succ[j])
        i = pair.next_index[y]
        x = y
    return RolloutRecord(steps, x, seed)


def expand(spec: ProblemSpec, table: PolicyTable, x0: int, i0: int):
    """Unfold the augmented policy from node ``i0`` into a history policy.

    Returns the :class:`HistoryPolicy` and, per reachable sub-history, the
    ``(stage, state, node index)`` it visits.
    """
    decisions: dict[tuple[int, ...], int] = {}
    visited: dict[tuple[int, ...], tuple[int, int, int]] = {}
    stack = [((x0,), 0, i0)]
    while stack:
        path, k, i = stack.pop()
        if k >= spec.horizon:
            continue
        x = path[-1]
        pair = table.entry(k, x, i)
        if pair is None:
            raise InfeasibleStateError(f"expanded policy hits infeasible node at stage {k}, state {x}")
        decisions[path] = pair.control
        visited[path] = (k, x, i)
        for y in spec.successors(x, pair.control):
            stack.append((path + (pair.control, int(y)), k + 1, pair.next_index[int(y)]))
    return HistoryPolicy(0, decisions), visited


def threshold_along(path, table: PolicyTable, r0: float) -> float:
    """Threshold reached after ``path`` by composing the stored ``r'`` maps."""
    i = table.grid.snap_index(0, path[0], r0)
    for k, t in enumerate(range(0, len(path) - 1, 2)):
        x, y = path[t], path[t + 2]
        i = table.entry(k, x, i).next_index[y]
    k = len(path) // 2
    return float(table.grid.at(k, path[-1])[i])


@dataclass
class VerificationReport:
    x0: int
    r0: float
    threshold: float | None
    value: float
    expected_cost: float | None
    nested_risk: float | None
    feasible: bool
    matches_value: bool
    max_node_violation: float | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def verify_policy(spec: ProblemSpec, table: PolicyTable, x0: int | None = None,
                  r0: float | None = None) -> VerificationReport:
    """Exact closed-loop check of the stored policy from ``(x0, r0)``.

    The policy is unfolded over the full history tree and evaluated without
    sampling; it is feasible when its nested risk is within ``r0 + 1e-9`` and
    matches when its expected cost equals ``V_0(x0, r0)`` to ``1e-9``.
    """
    x0 = spec.initial_state if x0 is None else x0
    r0 = spec.initial_threshold if r0 is None else r0
    value = table.value_table.value(0, x0, r0)
    try:
        i0 = _start_node(table, x0, r0)
    except InfeasibleStateError as exc:
        return VerificationReport(x0, r0, None, value, None, None, False, False, notes=[str(exc)])
    hp, visited = expand(spec, table, x0, i0)
    cost = expected_cost(spec, hp, 0, x0)
    risk = policy_risk(spec, hp, 0, x0)
    worst = -np.inf
    for path, (k, x, i) in visited.items():
        pair = table.entry(k, x, i)
        worst = max(worst, pair.risk(spec, x) - float(table.grid.at(k, x)[i]))
    return VerificationReport(
        x0=x0, r0=r0, threshold=float(table.grid.at(0, x0)[i0]), value=value,
        expected_cost=cost, nested_risk=risk,
        feasible=bool(risk <= r0 + FEAS_TOL),
        matches_value=bool(abs(cost - value) <= MATCH_TOL),
        max_node_violation=float(worst),
    )
