"""Finite MDP container, histories, history-dependent policies and expected cost."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .risk import RiskMeasureSpec

ROW_TOL = 1e-12


class PolicyError(LookupError):
    """A policy has no (admissible) decision for a reachable sub-history."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """A finite-horizon risk-constrained control problem.

    States and controls are dense indices ``0..n-1``; the optional labels are
    only used by the file format.  ``kernel[x, u]`` is the successor
    distribution ``Q(. | x, u)``; rows of inadmissible pairs are ignored.
    """

    kernel: np.ndarray  # shape (S, U, S)
    admissible: tuple[tuple[int, ...], ...]
    stage_cost: np.ndarray  # shape (S, U)
    constraint_cost: np.ndarray  # shape (S, U)
    horizon: int
    initial_state: int = 0
    initial_threshold: float = 0.0
    risk_measure: RiskMeasureSpec = field(default_factory=RiskMeasureSpec)
    sentinel: float | None = None
    state_labels: tuple[str, ...] | None = None
    control_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        kernel = _frozen(self.kernel)
        if kernel.ndim != 3:
            raise ValueError(f"kernel must have shape (S, U, S), got {kernel.shape}")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "stage_cost", _frozen(self.stage_cost))
        object.__setattr__(self, "constraint_cost", _frozen(self.constraint_cost))
        object.__setattr__(
            self, "admissible", tuple(tuple(sorted(int(u) for u in us)) for us in self.admissible)
        )
        if self.state_labels is not None:
            object.__setattr__(self, "state_labels", tuple(self.state_labels))
        if self.control_labels is not None:
            object.__setattr__(self, "control_labels", tuple(self.control_labels))

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def n_controls(self) -> int:
        return self.kernel.shape[1]

    @property
    def max_abs_cost(self) -> float:
        vals = [abs(self.stage_cost[x, u]) for x in range(self.n_states) for u in self.admissible[x]]
        return max(vals, default=0.0)

    @property
    def cbar(self) -> float:
        """Infeasibility sentinel; defaults to ``N * max|c| + 1``."""
        if self.sentinel is not None:
            return float(self.sentinel)
        return self.horizon * self.max_abs_cost + 1.0

    def is_admissible(self, x: int, u: int) -> bool:
        return 0 <= x < self.n_states and u in self.admissible[x]

    def successors(self, x: int, u: int) -> np.ndarray:
        """Indices of successor states with positive probability."""
        return np.flatnonzero(self.kernel[x, u] > 0.0)

    def replace(self, **changes) -> "ProblemSpec":
        kw = {name: getattr(self, name) for name in self.__dataclass_fields__}
        kw.update(changes)
        return ProblemSpec(**kw)

    def normalized(self) -> "ProblemSpec":
        """Copy with every admissible kernel row renormalized to sum to one.

        Idempotent: rows whose exact sum already rounds to 1.0 are untouched.
        """
        kernel = np.array(self.kernel)
        for x in range(self.n_states):
            for u in self.admissible[x]:
                kernel[x, u] = _renormalize_row(kernel[x, u])
        return self.replace(kernel=kernel)

    def __eq__(self, other):
        if not isinstance(other, ProblemSpec):
            return NotImplemented
        return (
            np.array_equal(self.kernel, other.kernel)
            and np.array_equal(self.stage_cost, other.stage_cost)
            and np.array_equal(self.constraint_cost, other.constraint_cost)
            and self.admissible == other.admissible
            and self.horizon == other.horizon
            and self.initial_state == other.initial_state
            and self.initial_threshold == other.initial_threshold
            and self.risk_measure == other.risk_measure
            and self.sentinel == other.sentinel
            and self.state_labels == other.state_labels
            and self.control_labels == other.control_labels
        )

    __hash__ = None


def _renormalize_row(row: np.ndarray) -> np.ndarray:
    row = np.array(row, dtype=float)
    total = math.fsum(row)
    if total == 1.0 or total <= 0.0:
        return row
    row = row / total
    # nudge the largest entry until the exact sum rounds to one
    i = int(np.argmax(row))
    for _ in range(16):
        total = math.fsum(row)
        if total == 1.0:
            break
        row[i] = np.nextafter(row[i], np.inf if total < 1.0 else -np.inf)
    return row


def validate(spec: ProblemSpec) -> list[str]:
    """Return human-readable invariant violations; an empty list means valid."""
    out: list[str] = []
    S, U = spec.n_states, spec.n_controls
    if spec.kernel.shape != (S, U, S):
        out.append(f"kernel has shape {spec.kernel.shape}, expected ({S}, {U}, {S})")
        return out
    for name, table in (("stage_cost", spec.stage_cost), ("constraint_cost", spec.constraint_cost)):
        if table.shape != (S, U):
            out.append(f"{name} has shape {table.shape}, expected ({S}, {U})")
    if out:
        return out
    if len(spec.admissible) != S:
        out.append(f"admissible has {len(spec.admissible)} entries for {S} states")
        return out
    if spec.horizon < 1:
        out.append(f"horizon must be >= 1, got {spec.horizon}")
    if not 0 <= spec.initial_state < S:
        out.append(f"initial state {spec.initial_state} out of range 0..{S - 1}")
    if not math.isfinite(spec.initial_threshold):
        out.append("initial threshold is not finite")
    for x, us in enumerate(spec.admissible):
        if not us:
            out.append(f"state {x} has no admissible controls")
        for u in us:
            if not 0 <= u < U:
                out.append(f"state {x} lists unknown control {u}")
                continue
            row = spec.kernel[x, u]
            if np.any(row < 0):
                out.append(f"row (x={x},u={u}) has negative entries")
            total = math.fsum(row)
            if abs(total - 1.0) > ROW_TOL:
                out.append(f"row (x={x},u={u}) sums to {total:.12g}")
            for name, table in (("c", spec.stage_cost), ("d", spec.constraint_cost)):
                if not math.isfinite(table[x, u]):
                    out.append(f"{name}(x={x},u={u}) is not finite")
    if spec.sentinel is not None and not out:
        bound = spec.horizon * spec.max_abs_cost
        if not spec.sentinel > bound:
            out.append(f"sentinel {spec.sentinel} must exceed N*max|c| = {bound}")
    for labels, n, what in ((spec.state_labels, S, "state"), (spec.control_labels, U, "control")):
        if labels is not None:
            if len(labels) != n:
                out.append(f"{len(labels)} {what} labels for {n} {what}s")
            elif len(set(labels)) != n:
                out.append(f"duplicate {what} labels")
    return out


@dataclass(frozen=True)
class History:
    """Sub-history ``(x_k, u_k, ..., x_j)`` starting at stage ``start``."""

    start: int
    path: tuple[int, ...]

    @property
    def stage(self) -> int:
        return self.start + len(self.path) // 2

    @property
    def state(self) -> int:
        return self.path[-1]

    def extend(self, u: int, x: int) -> "History":
        return History(self.start, self.path + (u, x))

    def violations(self, spec: ProblemSpec) -> list[str]:
        out = []
        if len(self.path) % 2 != 1:
            out.append("history must alternate states and controls and end in a state")
        if self.stage > spec.horizon:
            out.append(f"history reaches stage {self.stage} beyond horizon {spec.horizon}")
        for i in range(0, len(self.path) - 1, 2):
            x, u = self.path[i], self.path[i + 1]
            if not spec.is_admissible(x, u):
                out.append(f"control {u} not admissible in state {x} at position {i}")
        return out


@dataclass(frozen=True)
class HistoryPolicy:
    """Deterministic policy mapping sub-history paths to controls.

    Keys are paths ``(x_k, u_k, ..., x_j)`` as in :class:`History`.  Only
    reachable sub-histories need an entry.
    """

    start: int
    decisions: Mapping[tuple[int, ...], int]

    def __call__(self, path: Sequence[int]) -> int:
        try:
            return self.decisions[tuple(path)]
        except KeyError:
            raise PolicyError(f"policy undefined on sub-history {tuple(path)}") from None


def _decide(spec: ProblemSpec, policy, path: tuple[int, ...]) -> int:
    u = policy(path)
    if not spec.is_admissible(path[-1], u):
        raise PolicyError(f"policy picks inadmissible control {u} on sub-history {path}")
    return u


def expected_cost(spec: ProblemSpec, policy, k: int, x_k: int, cost=None) -> float:
    """Exact tail expectation of the summed stage costs from ``(k, x_k)``.

    Enumerates every positive-probability trajectory of the history tree.
    ``cost`` overrides the stage-cost table (e.g. pass ``spec.constraint_cost``).
    """
    table = spec.stage_cost if cost is None else np.asarray(cost)
    total = 0.0
    stack = [((x_k,), 1.0, 0.0)]
    while stack:
        path, prob, acc = stack.pop()
        j = k + len(path) // 2
        if j >= spec.horizon:
            total += prob * acc
            continue
        x = path[-1]
        u = _decide(spec, policy, path)
        acc = acc + table[x, u]
        for y in spec.successors(x, u):
            stack.append((path + (u, int(y)), prob * spec.kernel[x, u, y], acc))
    return float(total)
