"""Coherent one-step risk measures and nested, time-consistent policy risk.

All measures here act on a finite distribution of next-stage values.  The
three kinds are the risk-neutral expectation, the upper mean-semideviation
``m + lam * (E[(V - m)_+^p])^(1/p)`` and CVaR in its minimization form
``min_t t + E[(V - t)_+] / alpha`` (mean of the worst ``alpha`` tail).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

KINDS = ("expectation", "mean_semideviation", "cvar")
DIST_TOL = 1e-12


class RiskParameterError(ValueError):
    pass


@dataclass(frozen=True)
class RiskMeasureSpec:
    kind: str = "expectation"
    lam: float = 0.0
    p: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RiskParameterError(f"unknown risk measure kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "mean_semideviation":
            if not 0.0 <= self.lam <= 1.0:
                raise RiskParameterError(f"lambda must lie in [0, 1], got {self.lam}")
            if not (self.p >= 1.0 and math.isfinite(self.p)):
                raise RiskParameterError(f"p must lie in [1, inf), got {self.p}")
        if self.kind == "cvar" and not 0.0 < self.alpha <= 1.0:
            raise RiskParameterError(f"alpha must lie in (0, 1], got {self.alpha}")

    @classmethod
    def expectation(cls) -> "RiskMeasureSpec":
        return cls("expectation")

    @classmethod
    def mean_semideviation(cls, lam: float, p: float = 1.0) -> "RiskMeasureSpec":
        return cls("mean_semideviation", lam=float(lam), p=float(p))

    @classmethod
    def cvar(cls, alpha: float) -> "RiskMeasureSpec":
        return cls("cvar", alpha=float(alpha))

    def to_dict(self) -> dict:
        if self.kind == "mean_semideviation":
            return {"kind": self.kind, "lambda": self.lam, "p": self.p}
        if self.kind == "cvar":
            return {"kind": self.kind, "alpha": self.alpha}
        return {"kind": self.kind}

    def __str__(self):
        if self.kind == "mean_semideviation":
            return f"mean_semideviation(lambda={self.lam:g}, p={self.p:g})"
        if self.kind == "cvar":
            return f"cvar(alpha={self.alpha:g})"
        return "expectation"

    def evaluate(self, values, probs) -> float:
        """Risk of the distribution placing mass ``probs[i]`` on ``values[i]``."""
        v = np.asarray(values, dtype=float)
        w = np.asarray(probs, dtype=float)
        if self.kind == "expectation":
            return float(w @ v)
        if self.kind == "mean_semideviation":
            m = float(w @ v)
            if self.lam == 0.0:
                return m
            up = np.maximum(v - m, 0.0)
            if self.p == 1.0:
                return m + self.lam * float(w @ up)
            return m + self.lam * float(w @ up**self.p) ** (1.0 / self.p)
        return _cvar_sorted(v, w, self.alpha)

    def evaluate_batch(self, values: np.ndarray, probs: np.ndarray) -> np.ndarray:
        """Row-wise risk of ``values`` (shape ``(n, s)``) under common ``probs``.

        CVaR uses the minimization form over support points here, whereas
        :meth:`evaluate` walks the sorted support; the two are cross-checked
        in the tests.
        """
        v = np.asarray(values, dtype=float)
        w = np.asarray(probs, dtype=float)
        m = rowdot(v, w)
        if self.kind == "expectation":
            return m
        if self.kind == "mean_semideviation":
            if self.lam == 0.0:
                return m
            up = np.maximum(v - m[:, None], 0.0)
            if self.p == 1.0:
                return m + self.lam * rowdot(up, w)
            return m + self.lam * rowdot(up**self.p, w) ** (1.0 / self.p)
        best = np.full(v.shape[0], np.inf)
        for j in range(v.shape[1]):
            t = v[:, j]
            obj = t + rowdot(np.maximum(v - t[:, None], 0.0), w) / self.alpha
            best = np.minimum(best, obj)
        return best


def rowdot(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``v @ w`` summed column by column, so results do not depend on the row count."""
    acc = np.zeros(v.shape[0])
    for j in range(v.shape[1]):
        acc += v[:, j] * w[j]
    return acc


def _cvar_sorted(v: np.ndarray, w: np.ndarray, alpha: float) -> float:
    # worst outcomes first; the alpha-quantile atom is split exactly
    order = np.argsort(-v, kind="stable")
    acc = 0.0
    mass = 0.0
    for i in order:
        if mass >= alpha:
            break
        take = min(w[i], alpha - mass)
        acc += take * v[i]
        mass += take
    return acc / alpha


@dataclass(frozen=True)
class FiniteDistribution:
    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != len(self.probs):
            raise ValueError("values and probs differ in length")
        if any(p < 0 for p in self.probs):
            raise ValueError("negative probability")
        if abs(math.fsum(self.probs) - 1.0) > DIST_TOL:
            raise ValueError(f"probabilities sum to {math.fsum(self.probs)!r}")

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]) -> "FiniteDistribution":
        return cls(tuple(float(v) for v, _ in pairs), tuple(float(p) for _, p in pairs))


def evaluate(measure: RiskMeasureSpec, dist: FiniteDistribution) -> float:
    return measure.evaluate(dist.values, dist.probs)


def one_step_risk(spec, measure: RiskMeasureSpec, x: int, u: int, next_values) -> float:
    """Risk of ``next_values[x']`` under the successor distribution of ``(x, u)``.

    The measure sees only the distribution ``Q(. | x, u)``; ``x`` is passed
    so a state-dependent measure could be added without changing callers.
    """
    if not spec.is_admissible(x, u):
        raise ValueError(f"control {u} is not admissible in state {x}")
    succ = spec.successors(x, u)
    vals = np.asarray(next_values, dtype=float)[succ]
    return measure.evaluate(vals, spec.kernel[x, u, succ])


def policy_risk(spec, policy, k: int, x_k: int, measure: RiskMeasureSpec | None = None) -> float:
    """Nested risk of the constraint-cost stream of ``policy`` from ``(k, x_k)``.

    Backward recursion over the full history tree: zero at the horizon, and
    ``d(x_j, u) + rho(x' -> risk of the extended history)`` before it.
    """
    from .mdp import _decide

    measure = spec.risk_measure if measure is None else measure
    d = spec.constraint_cost

    def tail(path: tuple[int, ...], j: int) -> float:
        if j >= spec.horizon:
            return 0.0
        x = path[-1]
        u = _decide(spec, policy, path)
        succ = spec.successors(x, u)
        child = [tail(path + (u, int(y)), j + 1) for y in succ]
        return float(d[x, u] + measure.evaluate(child, spec.kernel[x, u, succ]))

    return tail((x_k,), k)
