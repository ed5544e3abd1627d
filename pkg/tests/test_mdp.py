import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskdp.instances import maintenance_problem, random_problem
from riskdp.mdp import History, HistoryPolicy, PolicyError, ProblemSpec, expected_cost, validate
from riskdp.oracle import enumerate_policies


def stationary(spec, choice):
    """History policy that plays ``choice[x]`` on every reachable history."""
    dec = {}
    stack = [((spec.initial_state,), 0)]
    while stack:
        path, j = stack.pop()
        if j >= spec.horizon:
            continue
        u = choice[path[-1]]
        dec[path] = u
        for y in spec.successors(path[-1], u):
            stack.append((path + (u, int(y)), j + 1))
    return HistoryPolicy(0, dec)


def recursive_cost(spec, policy, path, j):
    if j >= spec.horizon:
        return 0.0
    x = path[-1]
    u = policy(path)
    return spec.stage_cost[x, u] + sum(
        spec.kernel[x, u, y] * recursive_cost(spec, policy, path + (u, int(y)), j + 1)
        for y in spec.successors(x, u))


@settings(max_examples=40, deadline=None)
@given(q=st.floats(0.0, 1.0), frac=st.floats(0.0, 1.0, exclude_max=True))
def test_validate_accepts_maintenance_family(q, frac):
    h = q * frac
    if not q > h:
        return
    assert validate(maintenance_problem(q=q, h=h)) == []


def test_validate_reports_row_sum(maint):
    kernel = np.array(maint.kernel)
    kernel[0, 0] = [0.5, 0.4]
    assert validate(maint.replace(kernel=kernel)) == ["row (x=0,u=0) sums to 0.9"]


def test_validate_reports_empty_admissible(maint):
    assert validate(maint.replace(admissible=((0, 1), ()))) == ["state 1 has no admissible controls"]


def test_validate_sentinel_and_negative(maint):
    assert any("sentinel" in v for v in validate(maint.replace(sentinel=2.0)))
    assert validate(maint.replace(sentinel=2.5)) == []
    kernel = np.array(maint.kernel)
    kernel[1, 1] = [1.2, -0.2]
    assert validate(maint.replace(kernel=kernel)) == ["row (x=1,u=1) has negative entries"]


def test_default_sentinel(maint):
    assert maint.cbar == 2 * 1.0 + 1.0


def test_spec_is_immutable(maint):
    with pytest.raises(ValueError):
        maint.kernel[0, 0, 0] = 0.1


def test_renormalization_is_idempotent(rng):
    spec = random_problem(rng)
    kernel = np.array(spec.kernel) * (1 + 1e-13)
    once = spec.replace(kernel=kernel).normalized()
    assert once.normalized() == once
    for x in range(once.n_states):
        for u in once.admissible[x]:
            assert abs(once.kernel[x, u].sum() - 1.0) < 1e-15


def test_expected_cost_always_repair(maint):
    spec = maint.replace(initial_state=0)
    assert expected_cost(spec, stationary(spec, [1, 1]), 0, 0) == pytest.approx(2.0, abs=1e-15)


def test_expected_cost_zero_cost_and_empty_horizon(maint):
    spec = maint.replace(stage_cost=np.zeros((2, 2)))
    assert expected_cost(spec, stationary(spec, [1, 0]), 0, 1) == 0.0
    assert expected_cost(maint, HistoryPolicy(2, {}), 2, 0) == 0.0


def test_expected_cost_names_missing_history(maint):
    pol = HistoryPolicy(0, {(1,): 1})
    with pytest.raises(PolicyError, match=r"\(1, 1, [01]\)"):
        expected_cost(maint, pol, 0, 1)


def test_inadmissible_decision_rejected(maint):
    spec = maint.replace(admissible=((0,), (0, 1)))
    with pytest.raises(PolicyError, match="inadmissible"):
        expected_cost(spec, HistoryPolicy(0, {(0,): 1}), 0, 0)


def test_history_helpers(maint):
    h = History(0, (1,)).extend(1, 0)
    assert (h.stage, h.state) == (1, 0)
    assert h.violations(maint) == []
    bad = History(0, (1, 3, 0))
    assert bad.violations(maint)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(-3.0, 3.0))
def test_expected_cost_linear_and_recursive(seed, alpha):
    rng = np.random.default_rng(seed)
    spec = random_problem(rng, max_states=3, max_controls=2, max_horizon=3)
    pols = list(enumerate_policies(spec))
    pol = pols[int(rng.integers(len(pols)))]
    x0 = spec.initial_state
    base = expected_cost(spec, pol, 0, x0)
    scaled = expected_cost(spec.replace(stage_cost=alpha * spec.stage_cost), pol, 0, x0)
    assert scaled == pytest.approx(alpha * base, abs=1e-12)
    assert base == pytest.approx(recursive_cost(spec, pol, (x0,), 0), abs=1e-12)
