"""Ground truth by exhaustive enumeration of deterministic history-dependent policies.

Only the reachable part of the history tree is enumerated; decisions on
zero-probability branches cannot change cost or risk.  The enumeration
refuses to run above a size cap rather than ever falling back to sampling.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

import numpy as np

from .mdp import HistoryPolicy, ProblemSpec, expected_cost
from .risk import policy_risk

DEFAULT_CAP = 10**6
FEAS_TOL = 1e-9


class PolicyCountError(RuntimeError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"{count} policies exceed the enumeration cap of {cap}")
        self.count = count
        self.cap = cap


def count_policies(spec: ProblemSpec, k: int = 0, x: int | None = None) -> int:
    """Number of distinct reachable-tree policies from ``(k, x)``."""
    x = spec.initial_state if x is None else x

    @lru_cache(maxsize=None)
    def count(j: int, y: int) -> int:
        if j >= spec.horizon:
            return 1
        total = 0
        for u in spec.admissible[y]:
            prod = 1
            for z in spec.successors(y, u):
                prod *= count(j + 1, int(z))
            total += prod
        return total

    return count(k, x)


def enumerate_policies(spec: ProblemSpec, k: int = 0, x: int | None = None,
                       cap: int = DEFAULT_CAP) -> Iterator[HistoryPolicy]:
    """Yield every policy on the reachable tree from ``(k, x)``.

    Order: ascending control at the root, then lexicographic over the
    successors' sub-policies.
    """
    x = spec.initial_state if x is None else x
    n = count_policies(spec, k, x)
    if n > cap:
        raise PolicyCountError(n, cap)

    def subtrees(path: tuple[int, ...], j: int) -> list[dict]:
        if j >= spec.horizon:
            return [{}]
        out = []
        xj = path[-1]
        for u in spec.admissible[xj]:
            kids = [subtrees(path + (u, int(y)), j + 1) for y in spec.successors(xj, u)]
            for combo in itertools.product(*kids):
                dec = {path: u}
                for part in combo:
                    dec.update(part)
                out.append(dec)
        return out

    for dec in subtrees((x,), k):
        yield HistoryPolicy(k, dec)


def evaluate_policies(spec: ProblemSpec, x0: int | None = None, cap: int = DEFAULT_CAP):
    """``(cost, risk, policy)`` for every policy from ``x0`` at stage 0."""
    x0 = spec.initial_state if x0 is None else x0
    return [(expected_cost(spec, pol, 0, x0), policy_risk(spec, pol, 0, x0), pol)
            for pol in enumerate_policies(spec, 0, x0, cap)]


def _best(evaluated, r0: float, sentinel: float):
    best_cost, best_pol = sentinel, None
    for cost, risk, pol in evaluated:
        if risk <= r0 + FEAS_TOL and (best_pol is None or cost < best_cost):
            best_cost, best_pol = cost, pol
    return best_cost, best_pol


def brute_force_solve(spec: ProblemSpec, x0: int | None = None, r0: float | None = None,
                      cap: int = DEFAULT_CAP) -> tuple[float, HistoryPolicy | None]:
    """Minimum expected cost over all policies meeting the risk constraint.

    Returns ``(sentinel, None)`` when no policy is feasible; ties go to the
    first policy in enumeration order.
    """
    r0 = spec.initial_threshold if r0 is None else r0
    return _best(evaluate_policies(spec, x0, cap), r0, spec.cbar)


def brute_force_sweep(spec: ProblemSpec, thresholds, x0: int | None = None,
                      cap: int = DEFAULT_CAP) -> np.ndarray:
    evaluated = evaluate_policies(spec, x0, cap)
    return np.array([_best(evaluated, float(r), spec.cbar)[0] for r in thresholds])


def brute_force_expectation(spec: ProblemSpec, x0: int | None = None, r0: float | None = None,
                            cap: int = DEFAULT_CAP) -> tuple[float, HistoryPolicy | None]:
    """Expectation-constrained optimum that never touches the risk module.

    The constraint is the expected summed constraint cost, computed by
    trajectory enumeration like the objective.
    """
    x0 = spec.initial_state if x0 is None else x0
    r0 = spec.initial_threshold if r0 is None else r0
    evaluated = [(expected_cost(spec, pol, 0, x0),
                  expected_cost(spec, pol, 0, x0, cost=spec.constraint_cost), pol)
                 for pol in enumerate_policies(spec, 0, x0, cap)]
    return _best(evaluated, r0, spec.cbar)


def tail_risks(spec: ProblemSpec, policy: HistoryPolicy, k: int = 0, x: int | None = None
               ) -> dict[tuple[int, ...], tuple[int, int, float]]:
    """Nested risk-to-go of ``policy`` at every reachable decision node.

    Maps each sub-history path to ``(stage, state, risk)``.
    """
    x = spec.initial_state if x is None else x
    measure = spec.risk_measure
    out: dict[tuple[int, ...], tuple[int, int, float]] = {}

    def visit(path: tuple[int, ...], j: int) -> float:
        if j >= spec.horizon:
            return 0.0
        xj = path[-1]
        u = policy(path)
        succ = spec.successors(xj, u)
        child = [visit(path + (u, int(y)), j + 1) for y in succ]
        risk = spec.constraint_cost[xj, u] + measure.evaluate(child, spec.kernel[xj, u, succ])
        out[path] = (j, xj, risk)
        return risk

    visit((x,), k)
    return out


@dataclass
class CoherenceReport:
    measure: str
    trials: int
    convexity: float
    monotonicity: float
    translation: float
    homogeneity: float
    tol: float = 1e-9

    @property
    def violations(self) -> dict[str, float]:
        return {"convexity": self.convexity, "monotonicity": self.monotonicity,
                "translation": self.translation, "homogeneity": self.homogeneity}

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.violations.values())

    def failed_axioms(self) -> list[str]:
        return [name for name, v in self.violations.items() if v > self.tol]


def check_coherence(measure, trials: int = 10_000, seed: int = 0, max_support: int = 6,
                    tol: float = 1e-9) -> CoherenceReport:
    """Worst violation of each coherence axiom over random finite distributions.

    ``measure`` only needs an ``evaluate(values, probs)`` method.  Supports
    sometimes carry zero-probability atoms and tied values.
    """
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(("convexity", "monotonicity", "translation", "homogeneity"), 0.0)
    rho = measure.evaluate
    for _ in range(trials):
        n = int(rng.integers(1, max_support + 1))
        probs = rng.dirichlet(np.ones(n))
        if n > 1 and rng.random() < 0.2:
            probs[rng.integers(n)] = 0.0
            probs /= probs.sum()
        z = rng.normal(scale=3.0, size=n)
        w = rng.normal(scale=3.0, size=n)
        if rng.random() < 0.3:
            z, w = np.round(z), np.round(w)
        lam = rng.random()
        conv = rho(lam * z + (1 - lam) * w, probs) - (lam * rho(z, probs) + (1 - lam) * rho(w, probs))
        worst["convexity"] = max(worst["convexity"], conv)
        bump = np.abs(rng.normal(size=n)) * (rng.random(n) < 0.7)
        worst["monotonicity"] = max(worst["monotonicity"], rho(z, probs) - rho(z + bump, probs))
        a = rng.normal(scale=5.0)
        worst["translation"] = max(worst["translation"], abs(rho(a + w, probs) - a - rho(w, probs)))
        t = rng.uniform(0.0, 5.0)
        worst["homogeneity"] = max(worst["homogeneity"], abs(rho(t * z, probs) - t * rho(z, probs)))
    return CoherenceReport(str(measure), trials, tol=tol, **worst)
