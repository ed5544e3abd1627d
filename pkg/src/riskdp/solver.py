"""Threshold grids, the risk-constrained Bellman operator and value iteration.

The augmented state is ``(x, r)`` with ``r`` restricted to a finite grid on
each feasible interval.  The inner minimization over threshold functions
``r'`` is exhaustive over products of successor grid nodes, so the computed
values are conservative (never below the continuum optimum) and improve
monotonically under nested refinement.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .feasibility import MEMBER_TOL, FeasibilityTables, clamp_threshold, feasible_interval
from .mdp import ProblemSpec
from .risk import rowdot

log = logging.getLogger(__name__)

DEFAULT_NODES = 101
FEAS_TOL = 1e-9
NODE_MERGE = 1e-12
MAX_COMBOS = 4_000_000
MAX_CHAIN = 10_000


class OffGridError(KeyError):
    """Threshold is not a node of the requested grid."""


class SolverSizeError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ThresholdGrid:
    """Ascending threshold nodes per stage and state; ``nodes[k][x]``."""

    nodes: tuple[tuple[np.ndarray, ...], ...]
    n_nodes: int

    @property
    def horizon(self) -> int:
        return len(self.nodes) - 1

    def at(self, k: int, x: int) -> np.ndarray:
        return self.nodes[k][x]

    def node_index(self, k: int, x: int, r: float, tol: float = MEMBER_TOL) -> int | None:
        g = self.nodes[k][x]
        i = int(np.searchsorted(g, r))
        for j in (i - 1, i):
            if 0 <= j < len(g) and abs(g[j] - r) <= tol:
                return j
        return None

    def snap_index(self, k: int, x: int, r: float) -> int | None:
        """Largest node ``<= r`` (after capping at the top node); None below the grid."""
        g = self.nodes[k][x]
        if r < g[0] - MEMBER_TOL:
            return None
        r = min(r, g[-1])
        return int(np.searchsorted(g, r + MEMBER_TOL, side="right")) - 1

    def stats(self) -> dict:
        sizes = [len(g) for stage in self.nodes for g in stage]
        return {"nodes_per_interval": self.n_nodes, "total_nodes": sum(sizes),
                "min_nodes": min(sizes), "max_nodes": max(sizes)}


def _uniform(lo: float, hi: float, M: int) -> np.ndarray:
    if M <= 2 or hi <= lo:
        return np.empty(0)
    # i / (M - 1) is the same float for equal ratios, so nested grids share nodes exactly
    return np.array([lo + (hi - lo) * (i / (M - 1)) for i in range(1, M - 1)])


def _merge_nodes(lo: float, hi: float, M: int, exact: Sequence[float]) -> np.ndarray:
    kept = []
    for v in sorted(float(v) for v in exact):
        if v < lo - MEMBER_TOL or v > hi + MEMBER_TOL:
            continue
        v = min(max(v, lo), hi)
        if kept and v - kept[-1] <= NODE_MERGE:
            if v == hi:
                kept[-1] = hi
            continue
        kept.append(v)
    pts = np.array(kept)
    uni = _uniform(lo, hi, M)
    if len(uni):
        pos = np.searchsorted(pts, uni)
        near = np.zeros(len(uni), dtype=bool)
        for off in (-1, 0):
            j = np.clip(pos + off, 0, len(pts) - 1)
            near |= np.abs(pts[j] - uni) <= NODE_MERGE
        pts = np.sort(np.concatenate([pts, uni[~near]]))
    return pts


def breakpoints(spec: ProblemSpec, tables: FeasibilityTables, k: int, x: int) -> list[float]:
    """Thresholds reached by ``d(x, u) + rho(r')`` with ``r'`` at successor interval endpoints."""
    out = []
    for u in spec.admissible[x]:
        succ = spec.successors(x, u)
        ends = []
        for y in succ:
            iv = feasible_interval(tables, k + 1, int(y))
            ends.append(sorted({iv.lo, iv.hi}))
        combos = np.array(list(itertools.product(*ends)), dtype=float)
        risk = spec.risk_measure.evaluate_batch(combos, spec.kernel[x, u, succ])
        out.extend(spec.constraint_cost[x, u] + risk)
    return out


def build_grid(
    spec: ProblemSpec,
    tables: FeasibilityTables,
    M: int = DEFAULT_NODES,
    inject: bool = True,
    extra: Mapping[tuple[int, int], Sequence[float]] | None = None,
) -> ThresholdGrid:
    """Uniform ``M``-node grid on every feasible interval, endpoints exact.

    With ``inject`` the grid also holds every stage's minimum risk-to-go values
    and the one-step breakpoints of :func:`breakpoints`.  Pairs with a single
    successor ``y`` carry ``d(x, u) + t`` for every injected node ``t`` of
    ``(k + 1, y)`` as well, so sums of ``d`` along deterministic paths stay
    exact (up to ``MAX_CHAIN`` values per interval).  ``extra`` forces
    additional nodes, keyed by ``(stage, state)``.
    """
    if M < 1:
        raise ValueError(f"grid needs at least one node per interval, got M={M}")
    extra = extra or {}
    N, S = spec.horizon, spec.n_states
    stages: list[tuple[np.ndarray, ...]] = [()] * (N + 1)
    stages[N] = tuple(np.zeros(1) for _ in range(S))
    chained = [np.zeros(1) for _ in range(S)]
    for k in range(N - 1, -1, -1):
        row, links = [], []
        for x in range(S):
            iv = feasible_interval(tables, k, x)
            exact = [iv.lo, iv.hi, *extra.get((k, x), ())]
            if inject:
                exact.extend(tables.min_risk[k])
                exact.extend(breakpoints(spec, tables, k, x))
                for u in spec.admissible[x]:
                    succ = spec.successors(x, u)
                    if len(succ) == 1:
                        exact.extend(spec.constraint_cost[x, u] + chained[int(succ[0])])
            link = _merge_nodes(iv.lo, iv.hi, 1, exact)
            links.append(link if len(link) <= MAX_CHAIN else np.array([iv.lo, iv.hi]))
            g = _merge_nodes(iv.lo, iv.hi, M, exact)
            g.setflags(write=False)
            row.append(g)
        stages[k] = tuple(row)
        chained = links
    return ThresholdGrid(tuple(stages), M)


@dataclass(frozen=True)
class FeasiblePair:
    """A control with a threshold function over successor states (one node each)."""

    control: int
    r_prime: tuple[float, ...]
    next_index: tuple[int, ...]

    def risk(self, spec: ProblemSpec, x: int) -> float:
        succ = spec.successors(x, self.control)
        rp = np.asarray(self.r_prime)[succ]
        return float(spec.constraint_cost[x, self.control]
                     + spec.risk_measure.evaluate(rp, spec.kernel[x, self.control, succ]))


@dataclass(frozen=True, eq=False)
class ValueTable:
    values: tuple[tuple[np.ndarray, ...], ...]
    grid: ThresholdGrid
    sentinel: float

    def node_value(self, k: int, x: int, i: int) -> float:
        return float(self.values[k][x][i])

    def value(self, k: int, x: int, r: float) -> float:
        """``V_k(x, r)`` for any real ``r``: sentinel below the feasible
        interval, capped above it, otherwise the value at the largest node
        not exceeding ``r``."""
        i = self.grid.snap_index(k, x, r)
        if i is None:
            return self.sentinel
        return float(self.values[k][x][i])

    def is_feasible(self, k: int, x: int, i: int) -> bool:
        return bool(self.values[k][x][i] != self.sentinel)

    def rows(self):
        for k, stage in enumerate(self.values):
            for x, vals in enumerate(stage):
                for r, v in zip(self.grid.at(k, x), vals):
                    yield k, x, float(r), float(v), bool(v != self.sentinel)


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """Minimizers of the Bellman operator at every stage-``k < N`` grid node.

    ``controls[k][x][i]`` is ``-1`` where the node is infeasible;
    ``next_index[k][x][i, y]`` is the stage-``k+1`` node chosen for successor ``y``.
    """

    controls: tuple[tuple[np.ndarray, ...], ...]
    next_index: tuple[tuple[np.ndarray, ...], ...]
    grid: ThresholdGrid
    value_table: ValueTable

    @property
    def horizon(self) -> int:
        return self.grid.horizon

    def entry(self, k: int, x: int, i: int) -> FeasiblePair | None:
        u = int(self.controls[k][x][i])
        if u < 0:
            return None
        nxt = self.next_index[k][x][i]
        rp = tuple(float(self.grid.at(k + 1, y)[j]) for y, j in enumerate(nxt))
        return FeasiblePair(u, rp, tuple(int(j) for j in nxt))

    def rows(self):
        for k, stage in enumerate(self.controls):
            for x, ctrl in enumerate(stage):
                for i, r in enumerate(self.grid.at(k, x)):
                    pair = self.entry(k, x, i)
                    yield k, x, float(r), pair


class Solution(NamedTuple):
    values: ValueTable
    policy: PolicyTable
    headline: float
    threshold: float | None  # grid node used for the headline query, None if infeasible


@dataclass(frozen=True, eq=False)
class _Actions:
    full_index: np.ndarray  # (P, S) successor node index per combo
    risk: np.ndarray        # (P,)
    cost: np.ndarray        # (P,)


def _candidates(grid: ThresholdGrid, v_next: Sequence[np.ndarray], k1: int, sentinel: float,
                prune: bool) -> list[np.ndarray]:
    out = []
    for y, v in enumerate(v_next):
        idx = np.flatnonzero(v != sentinel)
        if prune and len(idx):
            # V is non-increasing in r, so only the first node of each level can be optimal
            vv = v[idx]
            keep = np.ones(len(idx), dtype=bool)
            keep[1:] = vv[1:] < vv[:-1]
            idx = idx[keep]
        out.append(idx)
    return out


def _action_table(spec: ProblemSpec, grid: ThresholdGrid, v_next, cand, k: int, x: int, u: int,
                  max_combos: int) -> _Actions | None:
    succ = spec.successors(x, u)
    q = spec.kernel[x, u, succ]
    lists = [cand[y] for y in succ]
    sizes = [len(c) for c in lists]
    if 0 in sizes:
        return None
    n = int(np.prod(sizes, dtype=np.int64))
    if n > max_combos:
        raise SolverSizeError(
            f"{n} threshold combinations at stage {k}, state {x}, control {u} exceed the cap "
            f"{max_combos}; enable pruning or use a coarser grid")
    mesh = np.meshgrid(*lists, indexing="ij")
    idx = np.stack([m.reshape(-1) for m in mesh], axis=1)
    rvals = np.empty(idx.shape)
    vvals = np.empty(idx.shape)
    for j, y in enumerate(succ):
        rvals[:, j] = grid.at(k + 1, y)[idx[:, j]]
        vvals[:, j] = v_next[y][idx[:, j]]
    risk = spec.constraint_cost[x, u] + spec.risk_measure.evaluate_batch(rvals, q)
    cost = spec.stage_cost[x, u] + rowdot(vvals, q)
    full = np.zeros((n, spec.n_states), dtype=np.int64)
    full[:, succ] = idx
    return _Actions(full, risk, cost)


def _best_per_threshold(act: _Actions, thresholds: np.ndarray) -> np.ndarray:
    """Index of the cheapest feasible combo for every threshold (-1 if none).

    Ties in cost go to the lowest combo index, i.e. the lexicographically
    smallest threshold vector.
    """
    n = len(act.cost)
    by_risk = np.argsort(act.risk, kind="stable")
    by_cost = np.lexsort((np.arange(n), act.cost))
    rank = np.empty(n, dtype=np.int64)
    rank[by_cost] = np.arange(n)
    prefix = np.minimum.accumulate(rank[by_risk])
    count = np.searchsorted(act.risk[by_risk], thresholds + FEAS_TOL, side="right")
    best = np.full(len(thresholds), -1, dtype=np.int64)
    has = count > 0
    best[has] = by_cost[prefix[count[has] - 1]]
    return best


def bellman(spec: ProblemSpec, grid: ThresholdGrid, v_next: Sequence[np.ndarray], k: int, x: int,
            r: float, prune: bool = False, max_combos: int = MAX_COMBOS
            ) -> tuple[float, FeasiblePair | None]:
    """Apply the Bellman operator at one augmented state ``(x, r)`` of stage ``k``.

    ``r`` must be a node of the stage-``k`` grid of ``x`` (no interpolation);
    thresholds below the grid give ``(sentinel, None)``.
    """
    g = grid.at(k, x)
    if r < g[0] - MEMBER_TOL:
        return spec.cbar, None
    i = grid.node_index(k, x, r)
    if i is None:
        raise OffGridError(f"threshold {r!r} is not a grid node at stage {k}, state {x}")
    r = float(g[i])
    cand = _candidates(grid, v_next, k + 1, spec.cbar, prune)
    best = None
    for u in spec.admissible[x]:
        act = _action_table(spec, grid, v_next, cand, k, x, u, max_combos)
        if act is None:
            continue
        mask = act.risk <= r + FEAS_TOL
        if not mask.any():
            continue
        m = act.cost[mask].min()
        j = int(np.flatnonzero(mask & (act.cost == m))[0])
        if best is None or m < best[0]:
            best = (float(m), u, act.full_index[j])
    if best is None:
        return spec.cbar, None
    m, u, nxt = best
    rp = tuple(float(grid.at(k + 1, y)[j]) for y, j in enumerate(nxt))
    return m, FeasiblePair(u, rp, tuple(int(j) for j in nxt))


def solve(spec: ProblemSpec, grid: ThresholdGrid, tables: FeasibilityTables | None = None,
          prune: bool = False, max_combos: int = MAX_COMBOS) -> Solution:
    """Backward value iteration over the augmented grid, from ``V_N = 0``."""
    N, S = spec.horizon, spec.n_states
    cbar = spec.cbar
    values: list[tuple[np.ndarray, ...]] = [()] * (N + 1)
    controls: list[tuple[np.ndarray, ...]] = [()] * N
    nexts: list[tuple[np.ndarray, ...]] = [()] * N
    values[N] = tuple(np.zeros(1) for _ in range(S))
    for k in range(N - 1, -1, -1):
        v_next = values[k + 1]
        cand = _candidates(grid, v_next, k + 1, cbar, prune)
        vrow, crow, nrow = [], [], []
        for x in range(S):
            r_nodes = grid.at(k, x)
            n = len(r_nodes)
            best_val = np.full(n, np.inf)
            best_u = np.full(n, -1, dtype=np.int64)
            best_next = np.zeros((n, S), dtype=np.int64)
            for u in spec.admissible[x]:
                act = _action_table(spec, grid, v_next, cand, k, x, u, max_combos)
                if act is None:
                    continue
                b = _best_per_threshold(act, r_nodes)
                ok = b >= 0
                val = np.where(ok, act.cost[np.maximum(b, 0)], np.inf)
                better = val < best_val
                best_val[better] = val[better]
                best_u[better] = u
                best_next[better] = act.full_index[b[better]]
            v = np.where(best_u >= 0, best_val, cbar)
            assert np.all(np.diff(v) <= 0.0), f"value not monotone at stage {k}, state {x}"
            for a in (v, best_u, best_next):
                a.setflags(write=False)
            vrow.append(v)
            crow.append(best_u)
            nrow.append(best_next)
        values[k], controls[k], nexts[k] = tuple(vrow), tuple(crow), tuple(nrow)
        log.debug("stage %d solved", k)
    vt = ValueTable(tuple(values), grid, cbar)
    pt = PolicyTable(tuple(controls), tuple(nexts), grid, vt)
    r0 = spec.initial_threshold
    if tables is not None:
        r0 = clamp_threshold(tables, 0, r0)
    i = grid.snap_index(0, spec.initial_state, r0)
    if i is None:
        return Solution(vt, pt, cbar, None)
    return Solution(vt, pt, vt.node_value(0, spec.initial_state, i),
                    float(grid.at(0, spec.initial_state)[i]))
