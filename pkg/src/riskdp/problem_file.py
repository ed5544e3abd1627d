"""JSON problem files.

Example::

    {
      "states": ["normal", "failed"],
      "controls": ["wait", "repair"],
      "admissible": [["wait", "repair"], ["wait", "repair"]],
      "kernel": [[[0.3, 0.7], [0.8, 0.2]], [[0.0, 1.0], [0.8, 0.2]]],
      "stage_cost": [[0.0, 1.0], [0.0, 1.0]],
      "constraint_cost": [[0.0, 0.0], [0.5, 0.5]],
      "horizon": 2,
      "initial_state": "failed",
      "initial_threshold": 0.7,
      "risk_measure": {"kind": "mean_semideviation", "lambda": 0.5, "p": 2},
      "solver": {"grid_nodes": 101, "prune": false, "sentinel": null}
    }

``kernel[x][u]`` is the successor row of ``(x, u)`` (``null`` for an
inadmissible pair).  Controls and states may be named by label or index.
An optional ``terminal_cost`` list must be all zeros.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp import ProblemSpec, validate
from .risk import RiskMeasureSpec, RiskParameterError
from .solver import DEFAULT_NODES

TOP_KEYS = {"states", "controls", "admissible", "kernel", "stage_cost", "constraint_cost",
            "terminal_cost", "horizon", "initial_state", "initial_threshold", "risk_measure", "solver"}
REQUIRED = TOP_KEYS - {"terminal_cost", "solver"}
MEASURE_KEYS = {"expectation": {"kind"}, "mean_semideviation": {"kind", "lambda", "p"},
                "cvar": {"kind", "alpha"}}
SOLVER_KEYS = {"grid_nodes", "prune", "sentinel"}


class ProblemFileError(ValueError):
    """Malformed problem file; the message carries a location."""


class ProblemValidationError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("invalid problem: " + "; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class ProblemFile:
    spec: ProblemSpec
    grid_nodes: int = DEFAULT_NODES
    prune: bool = False


def _fail(where: str, msg: str):
    raise ProblemFileError(f"{where}: {msg}")


def _number(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(where, f"expected a number, got {v!r}")
    if not math.isfinite(v):
        _fail(where, "number is not finite")
    return float(v)


def _labels(v, where: str) -> tuple[str, ...]:
    if not isinstance(v, list) or not v or not all(isinstance(s, str) for s in v):
        _fail(where, "expected a non-empty list of label strings")
    return tuple(v)


def _ref(v, labels: tuple[str, ...], where: str) -> int:
    if isinstance(v, str):
        if v not in labels:
            _fail(where, f"unknown label {v!r}")
        return labels.index(v)
    if isinstance(v, int) and not isinstance(v, bool) and 0 <= v < len(labels):
        return v
    _fail(where, f"expected a label or index, got {v!r}")


def _check_keys(obj, allowed: set[str], where: str, required: set[str] = frozenset()):
    if not isinstance(obj, dict):
        _fail(where, "expected an object")
    for key in obj:
        if key not in allowed:
            _fail(f"{where}.{key}", "unknown key")
    for key in sorted(required - obj.keys()):
        _fail(f"{where}.{key}", "missing required key")


def _table(v, S: int, U: int, where: str) -> np.ndarray:
    if not isinstance(v, list) or len(v) != S:
        _fail(where, f"expected {S} rows")
    out = np.zeros((S, U))
    for x, row in enumerate(v):
        if not isinstance(row, list) or len(row) != U:
            _fail(f"{where}[{x}]", f"expected {U} entries")
        for u, c in enumerate(row):
            if c is not None:
                out[x, u] = _number(c, f"{where}[{x}][{u}]")
    return out


def _measure(obj, where: str) -> RiskMeasureSpec:
    if not isinstance(obj, dict) or "kind" not in obj:
        _fail(where, "expected an object with a 'kind'")
    kind = obj["kind"]
    if kind not in MEASURE_KEYS:
        _fail(f"{where}.kind", f"unknown risk measure {kind!r}")
    _check_keys(obj, MEASURE_KEYS[kind], where, MEASURE_KEYS[kind])
    try:
        if kind == "mean_semideviation":
            return RiskMeasureSpec.mean_semideviation(_number(obj["lambda"], f"{where}.lambda"),
                                                      _number(obj["p"], f"{where}.p"))
        if kind == "cvar":
            return RiskMeasureSpec.cvar(_number(obj["alpha"], f"{where}.alpha"))
    except RiskParameterError as exc:
        _fail(where, str(exc))
    return RiskMeasureSpec.expectation()


def parse_problem(text: str, source: str = "<string>") -> ProblemFile:
    """Parse, validate and row-normalize a problem document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    _check_keys(doc, TOP_KEYS, "$", REQUIRED)
    states = _labels(doc["states"], "$.states")
    controls = _labels(doc["controls"], "$.controls")
    S, U = len(states), len(controls)

    adm = doc["admissible"]
    if not isinstance(adm, list) or len(adm) != S:
        _fail("$.admissible", f"expected {S} lists")
    admissible = []
    for x, us in enumerate(adm):
        if not isinstance(us, list):
            _fail(f"$.admissible[{x}]", "expected a list")
        admissible.append(tuple(_ref(u, controls, f"$.admissible[{x}][{i}]") for i, u in enumerate(us)))

    kern = doc["kernel"]
    if not isinstance(kern, list) or len(kern) != S:
        _fail("$.kernel", f"expected {S} entries")
    kernel = np.zeros((S, U, S))
    for x, per_u in enumerate(kern):
        if not isinstance(per_u, list) or len(per_u) != U:
            _fail(f"$.kernel[{x}]", f"expected {U} rows")
        for u, row in enumerate(per_u):
            if row is None:
                continue
            if not isinstance(row, list) or len(row) != S:
                _fail(f"$.kernel[{x}][{u}]", f"expected {S} probabilities")
            kernel[x, u] = [_number(p, f"$.kernel[{x}][{u}][{y}]") for y, p in enumerate(row)]

    stage_cost = _table(doc["stage_cost"], S, U, "$.stage_cost")
    constraint_cost = _table(doc["constraint_cost"], S, U, "$.constraint_cost")
    if "terminal_cost" in doc:
        term = doc["terminal_cost"]
        if not isinstance(term, list) or len(term) != S:
            _fail("$.terminal_cost", f"expected {S} entries")
        for x, t in enumerate(term):
            if _number(t, f"$.terminal_cost[{x}]") != 0.0:
                _fail(f"$.terminal_cost[{x}]", "terminal costs must be zero")

    horizon = doc["horizon"]
    if isinstance(horizon, bool) or not isinstance(horizon, int):
        _fail("$.horizon", "expected an integer")
    x0 = _ref(doc["initial_state"], states, "$.initial_state")
    r0 = _number(doc["initial_threshold"], "$.initial_threshold")
    measure = _measure(doc["risk_measure"], "$.risk_measure")

    solver = doc.get("solver", {})
    _check_keys(solver, SOLVER_KEYS, "$.solver")
    nodes = solver.get("grid_nodes", DEFAULT_NODES)
    if isinstance(nodes, bool) or not isinstance(nodes, int) or nodes < 1:
        _fail("$.solver.grid_nodes", "expected a positive integer")
    prune = solver.get("prune", False)
    if not isinstance(prune, bool):
        _fail("$.solver.prune", "expected true or false")
    sentinel = solver.get("sentinel")
    if sentinel is not None:
        sentinel = _number(sentinel, "$.solver.sentinel")

    spec = ProblemSpec(
        kernel=kernel, admissible=tuple(admissible), stage_cost=stage_cost,
        constraint_cost=constraint_cost, horizon=horizon, initial_state=x0,
        initial_threshold=r0, risk_measure=measure, sentinel=sentinel,
        state_labels=states, control_labels=controls,
    )
    problems = validate(spec)
    if problems:
        raise ProblemValidationError(problems)
    return ProblemFile(spec.normalized(), nodes, prune)


def load_problem(path) -> ProblemFile:
    path = Path(path)
    return parse_problem(path.read_text(), str(path))


def problem_to_dict(pf: ProblemFile) -> dict:
    spec = pf.spec
    states = spec.state_labels or tuple(f"s{x}" for x in range(spec.n_states))
    controls = spec.control_labels or tuple(f"u{u}" for u in range(spec.n_controls))
    return {
        "states": list(states),
        "controls": list(controls),
        "admissible": [[controls[u] for u in us] for us in spec.admissible],
        "kernel": [[[float(p) for p in spec.kernel[x, u]] for u in range(spec.n_controls)]
                   for x in range(spec.n_states)],
        "stage_cost": spec.stage_cost.tolist(),
        "constraint_cost": spec.constraint_cost.tolist(),
        "horizon": spec.horizon,
        "initial_state": states[spec.initial_state],
        "initial_threshold": float(spec.initial_threshold),
        "risk_measure": spec.risk_measure.to_dict(),
        "solver": {"grid_nodes": pf.grid_nodes, "prune": pf.prune, "sentinel": spec.sentinel},
    }


def dump_problem(pf: ProblemFile) -> str:
    # json writes floats with repr, which round-trips bit-exactly
    return json.dumps(problem_to_dict(pf), indent=2) + "\n"
