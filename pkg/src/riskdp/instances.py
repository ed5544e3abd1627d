"""Problem builders: the two-state maintenance model and random desk-scale instances."""

from __future__ import annotations

import numpy as np

from .mdp import ProblemSpec
from .risk import RiskMeasureSpec


def maintenance_problem(q: float = 0.8, h: float = 0.3, c1: float = 0.5, c2: float = 1.0,
                        lam: float = 0.5, p: float = 2.0, horizon: int = 2,
                        initial_state: int = 1, initial_threshold: float = 1.0) -> ProblemSpec:
    """Machine maintenance: state 0 is normal, 1 failed; control 0 waits, 1 repairs.

    Repair costs ``c2`` and moves to normal with probability ``q``; waiting in
    the normal state keeps it normal with probability ``h < q`` and a failed
    machine stays failed.  Being failed costs ``c1`` in the constraint.
    """
    if not 1.0 >= q > h >= 0.0:
        raise ValueError(f"need 1 >= q > h >= 0, got q={q}, h={h}")
    kernel = np.array([
        [[h, 1.0 - h], [q, 1.0 - q]],
        [[0.0, 1.0], [q, 1.0 - q]],
    ])
    return ProblemSpec(
        kernel=kernel,
        admissible=((0, 1), (0, 1)),
        stage_cost=np.array([[0.0, c2], [0.0, c2]]),
        constraint_cost=np.array([[0.0, 0.0], [c1, c1]]),
        horizon=horizon,
        initial_state=initial_state,
        initial_threshold=initial_threshold,
        risk_measure=RiskMeasureSpec.mean_semideviation(lam, p),
        state_labels=("normal", "failed"),
        control_labels=("wait", "repair"),
    )


def semideviation_factor(x: float, lam: float, p: float) -> float:
    """Risk of a unit cost incurred with probability ``1 - x`` under mean-semideviation."""
    return lam * x * (1.0 - x) ** (1.0 / p) + (1.0 - x)


def random_measure(rng: np.random.Generator) -> RiskMeasureSpec:
    if rng.random() < 1 / 3:
        return RiskMeasureSpec.expectation()
    return RiskMeasureSpec.mean_semideviation(float(rng.uniform(0.0, 1.0)), float(rng.choice([1.0, 2.0])))


def random_problem(rng: np.random.Generator, max_states: int = 3, max_controls: int = 2,
                   max_horizon: int = 3, measure: RiskMeasureSpec | None = None,
                   sparsity: float = 0.3) -> ProblemSpec:
    """Random instance with costs in [0, 1] and random admissibility.

    Kernel entries are zeroed with probability ``sparsity`` (each row keeps at
    least one successor).  The initial threshold is left at 0; callers set it.
    """
    S = int(rng.integers(1, max_states + 1))
    U = int(rng.integers(1, max_controls + 1))
    N = int(rng.integers(1, max_horizon + 1))
    admissible = []
    for _ in range(S):
        mask = rng.random(U) < 0.7
        if not mask.any():
            mask[rng.integers(U)] = True
        admissible.append(tuple(int(u) for u in np.flatnonzero(mask)))
    kernel = np.zeros((S, U, S))
    for x in range(S):
        for u in admissible[x]:
            w = rng.random(S) * (rng.random(S) >= sparsity)
            if not w.any():
                w[rng.integers(S)] = 1.0
            kernel[x, u] = w / w.sum()
    return ProblemSpec(
        kernel=kernel,
        admissible=tuple(admissible),
        stage_cost=rng.random((S, U)),
        constraint_cost=rng.random((S, U)),
        horizon=N,
        initial_state=int(rng.integers(S)),
        initial_threshold=0.0,
        risk_measure=random_measure(rng) if measure is None else measure,
    ).normalized()
