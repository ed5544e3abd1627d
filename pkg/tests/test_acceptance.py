"""Acceptance suite: one pass/fail line per criterion.

Run ``pytest tests/test_acceptance.py -s`` to see the lines inline; they are
also repeated in the terminal summary.
"""

import json
import time

import numpy as np
import pytest

import conftest
from conftest import C1, C2, MeanPlusVariance
from riskdp.cli import main
from riskdp.feasibility import build_tables
from riskdp.instances import maintenance_problem, random_problem, semideviation_factor
from riskdp.mdp import expected_cost
from riskdp.oracle import (brute_force_expectation, brute_force_solve, brute_force_sweep,
                           check_coherence, enumerate_policies, evaluate_policies, tail_risks)
from riskdp.policy import verify_policy
from riskdp.problem_file import ProblemFile, dump_problem
from riskdp.risk import RiskMeasureSpec, policy_risk
from riskdp.solver import build_grid, solve

pytestmark = pytest.mark.acceptance

TOL = 1e-9
GRIDS = (11, 51, 201)
N_RANDOM = 250
SEED = 20240


def record(n, ok, text):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {text}"
    print(line)
    conftest.ACCEPTANCE.append((n, bool(ok), text))
    assert ok, line


def plateaus_and_breaks(r, v):
    jumps = np.flatnonzero(np.diff(v) != 0)
    return [float(v[0])] + [float(v[j + 1]) for j in jumps], [float(r[j + 1]) for j in jumps]


# -- 1 -----------------------------------------------------------------------

def test_maintenance_reproduction():
    lam, p, q, h = 0.5, 2.0, 0.8, 0.3
    K = {x: semideviation_factor(x, lam, p) * C1 for x in (q, h, 0.0)}
    expected = {1: [C1 + K[q], C1 + K[0.0]], 0: [K[q], K[h]]}

    spec = maintenance_problem(q=q, h=h, c1=C1, c2=C2, lam=lam, p=p)
    cbar = spec.cbar
    start = time.perf_counter()
    tables = build_tables(spec)
    sol = solve(spec, build_grid(spec, tables), tables)
    elapsed = time.perf_counter() - start

    step = 1e-4
    r = np.round(np.arange(0.0, 1.2 + step / 2, step), 12)
    problems = []
    for x in (0, 1):
        oracle = brute_force_sweep(spec, r, x0=x)
        dp = np.array([sol.values.value(0, x, float(t)) for t in r])
        o_lv, o_br = plateaus_and_breaks(r, oracle)
        d_lv, d_br = plateaus_and_breaks(r, dp)
        for levels in (o_lv, d_lv):
            if not np.allclose(levels, [cbar, C2, 0.0], atol=1e-12, rtol=0):
                problems.append(f"V_0({x},.) plateaus {levels}")
        if len(o_br) != 2 or len(d_br) != 2:
            problems.append(f"V_0({x},.) breakpoints oracle {o_br} dp {d_br}")
            continue
        for ob, db, cf in zip(o_br, d_br, expected[x]):
            if abs(ob - db) > step + 1e-12 or not (ob - step <= cf <= ob + 1e-12):
                problems.append(f"V_0({x},.) breakpoint oracle {ob} dp {db} closed form {cf}")
    for t in (0.0, C1 - 1e-6, C1, C1 + 0.3):
        want = 0.0 if t >= C1 else cbar
        if sol.values.value(1, 1, t) != want:
            problems.append(f"V_1(1,{t}) = {sol.values.value(1, 1, t)}")
    if elapsed >= 1.0:
        problems.append(f"runtime {elapsed:.3f}s")
    record(1, not problems,
           f"maintenance V_1/V_0 plateaus and breakpoints {expected[1]} {expected[0]} "
           f"within {step:g}, solve {elapsed * 1e3:.1f} ms" + ("; " + "; ".join(problems) if problems else ""))


# -- 2 -----------------------------------------------------------------------

def test_bellman_minimizers():
    spec = maintenance_problem()
    tables = build_tables(spec)
    grid = build_grid(spec, tables)
    sol = solve(spec, grid, tables)
    kq = semideviation_factor(0.8, 0.5, 2.0) * C1
    kh = semideviation_factor(0.3, 0.5, 2.0) * C1
    got = []
    for x, r, want in ((1, C1 + kq, (1, (0.0, C1))), (0, kh, (0, (0.0, C1)))):
        i = grid.node_index(0, x, r)
        pair = None if i is None else sol.policy.entry(0, x, i)
        got.append((x, r, None if pair is None else (pair.control, pair.r_prime), want))
    ok = all(g == w for _, _, g, w in got)
    record(2, ok, "; ".join(f"(0,{x},{r:.6f}) -> {g}" for x, r, g, _ in got))


# -- 3, 6, 7 share the solved random instances --------------------------------

def tail_on_grid(spec, grid, witness):
    return all(grid.node_index(k, y, r) is not None for k, y, r in tail_risks(spec, witness).values())


@pytest.fixture(scope="module")
def random_solves():
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    cases = []
    for _ in range(N_RANDOM):
        spec = random_problem(rng)
        tables = build_tables(spec)
        x0 = spec.initial_state
        r0 = float(rng.uniform(tables.min_risk[0, x0] - 0.1, tables.upper_bound[0] + 0.1))
        spec = spec.replace(initial_threshold=r0)
        oracle_value, witness = brute_force_solve(spec)
        runs = {}
        for M in GRIDS:
            grid = build_grid(spec, tables, M)
            sol = solve(spec, grid, tables, prune=True)
            on_grid = witness is not None and tail_on_grid(spec, grid, witness)
            runs[M] = (grid, sol, on_grid)
        cases.append((spec, oracle_value, witness, runs))
    return cases, time.perf_counter() - start


def test_oracle_equivalence(random_solves):
    cases, elapsed = random_solves
    below, off_exact, on_checked, on_mismatch, nonmono, positive = 0, 0, 0, 0, 0, 0
    for spec, ov, _, runs in cases:
        gaps = []
        for M in GRIDS:
            _, sol, on_grid = runs[M]
            gap = sol.headline - ov
            gaps.append(gap)
            below += gap < -TOL
            positive += gap > TOL
            if on_grid:
                on_checked += 1
                on_mismatch += abs(gap) > TOL
            elif ov == spec.cbar:
                off_exact += gap != 0.0
        nonmono += not (gaps[0] >= gaps[1] - TOL and gaps[1] >= gaps[2] - TOL)
    ok = len(cases) >= 200 and below == 0 and on_mismatch == 0 and off_exact == 0 and nonmono == 0 \
        and on_checked > 0 and elapsed < 120
    record(3, ok,
           f"{len(cases)} instances x M={GRIDS}: {below} below oracle, {positive} positive gaps, "
           f"{on_checked} on-grid solves with {on_mismatch} nonzero gaps, {nonmono} non-monotone "
           f"refinements, {elapsed:.1f}s")


def test_closed_loop(random_solves):
    cases, _ = random_solves
    checked, failures = 0, []
    start = time.perf_counter()
    for c, (spec, _, _, runs) in enumerate(cases):
        for M in GRIDS:
            grid, sol, _ = runs[M]
            for x in range(spec.n_states):
                for i, r in enumerate(grid.at(0, x)):
                    if not sol.values.is_feasible(0, x, i):
                        continue
                    rep = verify_policy(spec, sol.policy, x, float(r))
                    checked += 1
                    if not (rep.feasible and rep.matches_value):
                        failures.append((c, M, x, float(r)))
    record(6, not failures and checked > 0,
           f"verify_policy at {checked} feasible stage-0 nodes, {len(failures)} failures "
           f"{failures[:3]}, {time.perf_counter() - start:.1f}s")


def test_monotonicity(random_solves, tmp_path):
    cases, _ = random_solves
    tables_checked, bad = 0, 0
    for spec, _, _, runs in cases:
        for M in GRIDS:
            values = runs[M][1].values.values
            for k in range(spec.horizon + 1):
                for x in range(spec.n_states):
                    tables_checked += 1
                    bad += bool(np.any(np.diff(values[k][x]) > 0))
    sweeps, bad_sweeps = 0, 0
    specs = [maintenance_problem()] + [c[0] for c in cases[:10]]
    for i, spec in enumerate(specs):
        path = tmp_path / f"p{i}.json"
        path.write_text(dump_problem(ProblemFile(spec, grid_nodes=51)))
        out = tmp_path / f"out{i}"
        code = main(["sweep", str(path), "--steps", "201", "--out", str(out)])
        rows = np.loadtxt(out / "sweep.csv", delimiter=",", skiprows=1)
        sweeps += 1
        bad_sweeps += code != 0 or not (np.all(np.diff(rows[:, 0]) > 0) and np.all(np.diff(rows[:, 1]) <= 0)
                                         and np.all(np.diff(rows[:, 2]) >= 0))
    record(7, bad == 0 and bad_sweeps == 0,
           f"{tables_checked} value rows non-increasing ({bad} violations), "
           f"{sweeps} CLI sweeps monotone ({bad_sweeps} violations)")


# -- 4 -----------------------------------------------------------------------

def test_coherence():
    measures = [RiskMeasureSpec.expectation()]
    measures += [RiskMeasureSpec.mean_semideviation(lam, p) for lam in (0.0, 0.5, 1.0) for p in (1, 2, 3)]
    measures += [RiskMeasureSpec.cvar(a) for a in (0.1, 0.5, 1.0)]
    worst, failed = 0.0, []
    for m in measures:
        rep = check_coherence(m, trials=10_000, seed=0)
        worst = max(worst, max(rep.violations.values()))
        if not rep.passed:
            failed.append(str(m))
    broken = check_coherence(MeanPlusVariance(), trials=10_000, seed=0)
    caught = not broken.passed and "homogeneity" in broken.failed_axioms() and broken.translation <= TOL
    record(4, not failed and worst <= TOL and caught,
           f"{len(measures)} measures x 10000 distributions, max violation {worst:.2e}, "
           f"failed {failed}; planted measure fails {broken.failed_axioms()}")


# -- 5 -----------------------------------------------------------------------

def tail_expectations(spec, witness):
    """(stage, state, tail expected d) at each decision node, via trajectory sums only."""
    out = []
    for path in witness.decisions:
        prefix = path[:-1]
        sub = lambda q, prefix=prefix: witness.decisions[prefix + tuple(q)]
        out.append((len(path) // 2, path[-1],
                    expected_cost(spec, sub, len(path) // 2, path[-1], cost=spec.constraint_cost)))
    return out


def test_risk_neutral_reduction():
    rng = np.random.default_rng(SEED + 1)
    measure = RiskMeasureSpec.expectation()
    worst, n_pol = 0.0, 0
    below, top_mismatch, on_checked, on_mismatch, total, equal = 0, 0, 0, 0, 0, 0
    for _ in range(100):
        spec = random_problem(rng, measure=measure)
        x0 = spec.initial_state
        for pol in enumerate_policies(spec):
            n_pol += 1
            worst = max(worst, abs(policy_risk(spec, pol, 0, x0)
                                   - expected_cost(spec, pol, 0, x0, cost=spec.constraint_cost)))
        tables = build_tables(spec)
        grid = build_grid(spec, tables, 51)
        sol = solve(spec, grid, tables, prune=True)
        nodes = grid.at(0, x0)
        for i, r in enumerate(nodes):
            bf, witness = brute_force_expectation(spec, r0=float(r))
            dp = sol.values.node_value(0, x0, i)
            below += dp < bf - TOL
            total += 1
            equal += abs(dp - bf) <= TOL
            if i == len(nodes) - 1:
                top_mismatch += abs(dp - bf) > TOL
            if witness is not None and all(grid.node_index(k, y, t) is not None
                                           for k, y, t in tail_expectations(spec, witness)):
                on_checked += 1
                on_mismatch += abs(dp - bf) > TOL
    ok = worst <= TOL and below == 0 and top_mismatch == 0 and on_mismatch == 0 and on_checked > 0
    record(5, ok,
           f"policy_risk vs expected d over {n_pol} policies, max diff {worst:.2e}; solved values vs "
           f"expectation brute force: {below} below, {top_mismatch} unconstrained mismatches, "
           f"{on_checked} on-grid nodes with {on_mismatch} mismatches, {equal}/{total} nodes equal")
