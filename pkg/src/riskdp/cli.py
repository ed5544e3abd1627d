"""Command line front end: ``riskdp solve|sweep|verify|rollout <file>``.

Exit codes: 0 success, 1 a verification check failed, 2 infeasible,
3 parse or validation error, 4 size cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .feasibility import build_tables
from .oracle import DEFAULT_CAP, PolicyCountError, brute_force_solve, count_policies
from .policy import InfeasibleStateError, rollout, verify_policy
from .problem_file import ProblemFileError, ProblemValidationError, load_problem
from .solver import SolverSizeError, build_grid, solve

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_SIZE = 0, 1, 2, 3, 4
GAP_TOL = 1e-9

log = logging.getLogger("riskdp")


def _f(v: float) -> str:
    return repr(float(v))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


class _Run:
    """Problem file loaded, thresholds tabulated and solved per the flags."""

    def __init__(self, args):
        pf = load_problem(args.file)
        spec = pf.spec
        if args.r0 is not None:
            spec = spec.replace(initial_threshold=args.r0)
        self.spec = spec
        self.M = args.grid if args.grid is not None else pf.grid_nodes
        self.prune = args.prune or pf.prune
        self.tables = build_tables(spec)
        self.grid = build_grid(spec, self.tables, self.M)
        self.solution = solve(spec, self.grid, self.tables, prune=self.prune)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)

    @property
    def feasible(self) -> bool:
        return bool(self.solution.headline != self.spec.cbar)

    def summary(self) -> dict:
        spec, sol = self.spec, self.solution
        x0 = spec.initial_state
        return {
            "value": sol.headline,
            "feasible": bool(self.feasible),
            "initial_state": x0,
            "initial_threshold": spec.initial_threshold,
            "threshold_node": sol.threshold,
            "sentinel": spec.cbar,
            "risk_measure": str(spec.risk_measure),
            "min_risk_to_go": float(self.tables.min_risk[0, x0]),
            "upper_bound": float(self.tables.upper_bound[0]),
            "rho_max": self.tables.rho_max,
            "prune": self.prune,
            "grid": self.grid.stats(),
        }


def cmd_solve(args) -> int:
    run = _Run(args)
    spec, sol = run.spec, run.solution
    _write_csv(run.out / "values.csv", ["stage", "state", "threshold", "value", "is_feasible"],
               ([k, x, _f(r), _f(v), int(ok)] for k, x, r, v, ok in sol.values.rows()))
    rows = []
    for k, x, r, pair in sol.policy.rows():
        if pair is not None:
            rows.append([k, x, _f(r), pair.control, *(_f(t) for t in pair.r_prime)])
    _write_csv(run.out / "policy.csv",
               ["stage", "state", "threshold", "control", *(f"r_prime_{y}" for y in range(spec.n_states))],
               rows)
    _write_csv(run.out / "feasibility.csv", ["stage", "state", "min_risk", "upper_bound"],
               ([k, x, _f(run.tables.min_risk[k, x]), _f(run.tables.upper_bound[k])]
                for k in range(spec.horizon + 1) for x in range(spec.n_states)))
    summary = run.summary()
    (run.out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    verdict = "feasible" if run.feasible else "infeasible"
    print(f"value {_f(sol.headline)} ({verdict}) at state {spec.initial_state}, "
          f"threshold {_f(spec.initial_threshold)}")
    print(f"grid: {summary['grid']['total_nodes']} nodes, M={run.M}; outputs in {run.out}")
    return EXIT_OK if run.feasible else EXIT_INFEASIBLE


def cmd_sweep(args) -> int:
    run = _Run(args)
    spec = run.spec
    x0 = spec.initial_state
    if args.range is not None:
        lo, hi = args.range
    else:
        lo = float(run.tables.min_risk[0, x0]) - 0.1
        hi = float(run.tables.upper_bound[0]) + 0.1
    thresholds = np.linspace(lo, hi, args.steps)
    vals = [run.solution.values.value(0, x0, float(r)) for r in thresholds]
    _write_csv(run.out / "sweep.csv", ["r0", "value", "is_feasible"],
               ([_f(r), _f(v), int(v != spec.cbar)] for r, v in zip(thresholds, vals)))
    print(f"{len(vals)} thresholds in [{lo:.6g}, {hi:.6g}] written to {run.out / 'sweep.csv'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    run = _Run(args)
    spec, sol = run.spec, run.solution
    report = verify_policy(spec, sol.policy)
    result = report.to_dict()
    ok = report.feasible and report.matches_value
    n = count_policies(spec)
    if n <= args.cap:
        oracle_value, _ = brute_force_solve(spec, cap=args.cap)
        result["oracle_value"] = oracle_value
        result["oracle_policies"] = n
        if oracle_value == spec.cbar or sol.headline == spec.cbar:
            gap = 0.0 if oracle_value == sol.headline else float("inf")
        else:
            gap = sol.headline - oracle_value
        result["gap"] = gap
        if gap < -GAP_TOL:
            ok = False
    else:
        result["oracle_skipped"] = f"{n} policies exceed cap {args.cap}"
    (run.out / "verify.json").write_text(json.dumps(result, indent=2) + "\n")
    for key in ("value", "expected_cost", "nested_risk", "feasible", "matches_value",
                "max_node_violation", "oracle_value", "gap", "oracle_skipped"):
        if key in result:
            print(f"{key}: {result[key]}")
    if not run.feasible:
        return EXIT_INFEASIBLE
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_rollout(args) -> int:
    run = _Run(args)
    spec = run.spec
    rows = []
    try:
        for e in range(args.episodes):
            rec = rollout(spec, run.solution.policy, args.seed + e)
            for t, s in enumerate(rec.steps):
                rows.append([e, rec.seed, rec.generator, t, s.state, _f(s.threshold), s.control,
                             _f(s.stage_cost), _f(s.constraint_cost)])
    except InfeasibleStateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    _write_csv(run.out / "rollout.csv",
               ["episode", "seed", "generator", "step", "state", "threshold", "control", "c", "d"], rows)
    print(f"{args.episodes} episode(s) written to {run.out / 'rollout.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskdp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("file", help="problem file (JSON)")
    common.add_argument("--grid", type=int, default=None, metavar="M", help="nodes per threshold interval")
    common.add_argument("--prune", action="store_true", help="enumerate only value-improving thresholds")
    common.add_argument("--r0", type=float, default=None, help="override the initial threshold")
    common.add_argument("--out", default=".", help="output directory")
    sub.add_parser("solve", parents=[common], help="solve and write value/policy tables")
    p = sub.add_parser("sweep", parents=[common], help="optimal value across initial thresholds")
    p.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--steps", type=int, default=101)
    p = sub.add_parser("verify", parents=[common], help="check the policy and compare with brute force")
    p.add_argument("--cap", type=int, default=DEFAULT_CAP, help="oracle enumeration cap")
    p = sub.add_parser("rollout", parents=[common], help="simulate episodes of the optimal policy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=1)
    return parser


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "verify": cmd_verify, "rollout": cmd_rollout}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("RISKDP_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ProblemFileError, ProblemValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SolverSizeError, PolicyCountError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIZE


if __name__ == "__main__":
    sys.exit(main())
