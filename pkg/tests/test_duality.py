import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otrisk.duality import (
    InnerProblem,
    PhiEvaluator,
    check_slackness,
    closed_form,
    dual_objective,
    minimize_dual,
    phi_lambda,
    register_closed_form,
    saturating_cost,
    saturating_objective,
)
from otrisk.errors import InfeasibleCoupling, InvalidInput, UnboundedDual, Unsupported
from otrisk.finite import make_coupling, random_instance
from otrisk.measures import EmpiricalMeasure


def indicator_problem():
    return InnerProblem.finite(lambda y: float(y == 1), lambda x, y: abs(x - y), [0, 1])


def saturating_problem():
    return InnerProblem.closed("saturating", saturating_objective, saturating_cost)


def brute_dual(lams, J):
    vals = np.array([J(l) for l in lams])
    k = int(np.argmin(vals))
    return lams[k], vals[k]


def test_phi_two_state_hand_value():
    assert phi_lambda(0, 2.0, indicator_problem()) == 0.0
    assert phi_lambda(0, 0.5, indicator_problem()) == 0.5


def test_phi_large_lambda_is_identity():
    f = {0: 0.0, 1: 3.0, 2: 1.0}
    prob = InnerProblem.finite(f.get, lambda x, y: abs(x - y), f.keys())
    lam = max(f[y] - f[x] for x in f for y in f) / 1.0 + 1.0
    for x in f:
        assert phi_lambda(x, lam, prob) == f[x]


def test_phi_never_below_objective():
    prob = InnerProblem.finite(lambda y: -y * y, lambda x, y: (x - y) ** 2, [])
    assert phi_lambda(2.0, 1.0, prob) == -4.0


def test_dual_objective_hand_value():
    mu = EmpiricalMeasure([0])
    assert dual_objective(1.0, mu, indicator_problem(), 0.5) == pytest.approx(0.5)


def test_saturating_dual_at_zero_is_one():
    mu = EmpiricalMeasure([0.0])
    assert dual_objective(0.0, mu, saturating_problem(), 2.0) == 1.0


def test_saturating_phi_against_grid():
    # dense y grid oracle for the closed form at a few multipliers
    ys = np.concatenate([np.linspace(0, 50, 200_001), [1e3, 1e6]])
    f = -np.expm1(-ys)
    c = ys / (1 + ys)
    for lam in (0.1, 0.5, 1.0, 2.0, 5.0):
        grid = float(np.max(f - lam * c))
        assert phi_lambda(0.0, lam, saturating_problem()) == pytest.approx(grid, abs=1e-7)
        assert phi_lambda(0.0, lam, saturating_problem()) >= grid - 1e-12


def test_two_point_minimize_matches_brute_grid():
    mu = EmpiricalMeasure([0])
    sol = minimize_dual(mu, indicator_problem(), 0.5)
    lams = np.arange(0, 10 + 1e-12, 1e-4)
    lam_b, val_b = brute_dual(lams, lambda l: 0.5 * l + max(0.0, 1 - l))
    assert lam_b == pytest.approx(1.0)
    assert val_b == pytest.approx(0.5)
    assert sol.lambda_star == pytest.approx(1.0, abs=1e-6)
    assert sol.value == pytest.approx(0.5, abs=1e-8)
    assert not sol.attained_at_zero


def test_zero_budget_gives_baseline():
    mu = EmpiricalMeasure([0, 1], [0.7, 0.3])
    sol = minimize_dual(mu, indicator_problem(), 0.0)
    assert sol.value == pytest.approx(0.3, abs=1e-8)
    assert sol.baseline == pytest.approx(0.3)


def test_saturating_attained_at_zero():
    sol = minimize_dual(EmpiricalMeasure([0.0]), saturating_problem(), 2.0)
    assert sol.value == 1.0
    assert sol.lambda_star == 0.0
    assert sol.attained_at_zero


def test_unknown_closed_form():
    with pytest.raises(Unsupported):
        closed_form("no-such-model")
    with pytest.raises(Unsupported):
        InnerProblem.closed("no-such-model", lambda y: 0.0)


def test_unbounded_dual():
    @register_closed_form("test-always-infinite")
    def _inf(atoms, fvals, lam, params):
        return np.full(len(atoms), np.inf)

    prob = InnerProblem.closed("test-always-infinite", lambda y: 0.0)
    with pytest.raises(UnboundedDual):
        minimize_dual(EmpiricalMeasure([0.0]), prob, 1.0)


def test_infinite_candidate_value_propagates():
    prob = InnerProblem.finite(lambda y: math.inf if y == 1 else 0.0, lambda x, y: abs(x - y), [0, 1])
    assert dual_objective(3.0, EmpiricalMeasure([0]), prob, 1.0) == math.inf


def test_infinite_cost_is_never_chosen():
    prob = InnerProblem.finite(lambda y: 5.0 * y, lambda x, y: 0.0 if x == y else math.inf, [0, 1])
    assert phi_lambda(0, 0.0, prob) == 5.0  # 0 * inf counts as 0
    assert phi_lambda(0, 1.0, prob) == 0.0


def test_negative_lambda_rejected():
    with pytest.raises(InvalidInput):
        phi_lambda(0, -1.0, indicator_problem())


def test_diagonal_cost_checked():
    prob = InnerProblem.finite(lambda y: 0.0, lambda x, y: 1.0, [0])
    with pytest.raises(InvalidInput):
        PhiEvaluator(EmpiricalMeasure([0]), prob)


# ----------------------------------------------------------------- slackness


def test_slackness_two_point_optimal(two_point):
    pi = make_coupling(two_point, [[0.5, 0.5], [0.0, 0.0]])
    rep = check_slackness(pi, 1.0, two_point.inner_problem(), 0.5)
    assert rep.slack1_violation == 0.0
    assert rep.slack2_violation == 0.0
    assert rep.ok(1e-12)


def test_slackness_identity_leaves_budget(two_point):
    pi = make_coupling(two_point, [[1.0, 0.0], [0.0, 0.0]])
    rep = check_slackness(pi, 1.0, two_point.inner_problem(), 0.5)
    assert rep.slack2_violation == pytest.approx(0.5)


def test_slackness_rejects_infeasible(two_point):
    with pytest.raises(InfeasibleCoupling):
        check_slackness(make_coupling(two_point, [[0.0, 1.0], [0.0, 0.0]]), 1.0, two_point.inner_problem(), 0.5)
    with pytest.raises(InfeasibleCoupling):
        check_slackness(make_coupling(two_point, [[0.5, 0.4], [0.0, 0.0]]), 1.0, two_point.inner_problem(), 0.5)


# ----------------------------------------------------------------- properties

seeds = st.integers(0, 2**32 - 1)


def _dual(inst, delta, tol=1e-10):
    mu, prob = inst.measure(), inst.inner_problem()
    return minimize_dual(mu, prob, delta, tol=tol)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_value_monotone_in_delta(seed):
    inst = random_instance(np.random.default_rng(seed), n_max=8)
    sat = inst.saturation_budget()
    vals = [_dual(inst, d).value for d in np.linspace(0, 1.2 * sat, 7)]
    assert all(a <= b + 2e-8 for a, b in zip(vals, vals[1:]))


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_zero_budget_anchor_and_saturation(seed):
    inst = random_instance(np.random.default_rng(seed), n_max=8)
    assert _dual(inst, 0.0).value == pytest.approx(float(inst.mu @ inst.f), abs=1e-8)
    assert _dual(inst, inst.saturation_budget()).value == pytest.approx(float(inst.f.max()), abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(0, 5), st.floats(0, 5), st.floats(0.01, 0.99))
def test_convexity_witness(seed, l1, l2, t):
    inst = random_instance(np.random.default_rng(seed), n_max=8)
    ev = PhiEvaluator(inst.measure(), inst.inner_problem())
    J = lambda l: ev.objective(l, inst.delta)
    assert J(t * l1 + (1 - t) * l2) <= t * J(l1) + (1 - t) * J(l2) + 1e-9


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(0, 20))
def test_lower_envelope(seed, lam):
    inst = random_instance(np.random.default_rng(seed), n_max=8)
    ev = PhiEvaluator(inst.measure(), inst.inner_problem())
    assert ev.objective(lam, inst.delta) >= lam * inst.delta + float(inst.mu @ inst.f) - 1e-12


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_minimizer_beats_brute_grid(seed):
    inst = random_instance(np.random.default_rng(seed), n_max=6)
    ev = PhiEvaluator(inst.measure(), inst.inner_problem())
    sol = minimize_dual(inst.measure(), inst.inner_problem(), inst.delta)
    lams = np.linspace(0, 2 * max(sol.lambda_star, 1.0), 4001)
    _, best = brute_dual(lams, lambda l: ev.objective(l, inst.delta))
    assert sol.value <= best + 1e-9
    assert sol.value >= sol.baseline - 1e-12
