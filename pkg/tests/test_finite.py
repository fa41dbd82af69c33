import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from otrisk.duality import PhiEvaluator, epsilon_optimality_check
from otrisk.errors import InfeasibleCoupling, InvalidInput
from otrisk.finite import FiniteInstance, duality_gap, make_coupling, random_instance, solve_primal_lp

seeds = st.integers(0, 2**32 - 1)


def highs_value(inst):
    """Same LP solved by scipy's HiGHS, used only as an external oracle."""
    n = inst.n
    A_eq = np.zeros((n, n * n))
    for i in range(n):
        A_eq[i, i * n : (i + 1) * n] = 1.0
    res = linprog(
        -np.tile(inst.f, n),
        A_ub=inst.cost.reshape(1, -1),
        b_ub=[inst.delta],
        A_eq=A_eq,
        b_eq=inst.mu,
        bounds=(0, None),
        method="highs",
    )
    assert res.status == 0
    return -res.fun


def test_two_point_hand_lp(two_point):
    value, cpl = solve_primal_lp(two_point)
    assert value == pytest.approx(0.5, abs=1e-12)
    assert np.allclose(cpl.pi, [[0.5, 0.5], [0.0, 0.0]], atol=1e-12)
    assert cpl.budget_multiplier == pytest.approx(1.0)


def test_zero_budget_identity():
    inst = random_instance(np.random.default_rng(3), n_min=6, n_max=6).with_delta(0.0)
    value, cpl = solve_primal_lp(inst)
    assert value == pytest.approx(float(inst.mu @ inst.f), abs=1e-12)
    assert np.allclose(cpl.pi, np.diag(inst.mu))
    assert duality_gap(inst) <= 1e-9


def test_saturated_budget_moves_everything():
    inst = random_instance(np.random.default_rng(4), n_min=7, n_max=7)
    inst = inst.with_delta(inst.saturation_budget())
    value, cpl = solve_primal_lp(inst)
    assert value == pytest.approx(float(inst.f.max()), abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_matches_highs_oracle(seed):
    inst = random_instance(np.random.default_rng(seed))
    value, cpl = solve_primal_lp(inst)
    assert value == pytest.approx(highs_value(inst), abs=1e-9 * (1 + abs(value)))
    assert cpl.row_marginal_residual <= 1e-9
    assert cpl.cost_used <= inst.delta + 1e-9
    assert np.all(cpl.pi >= 0)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_budget_price_is_dual_optimal(seed):
    inst = random_instance(np.random.default_rng(seed))
    value, cpl = solve_primal_lp(inst)
    ev = PhiEvaluator(inst.measure(), inst.inner_problem())
    assert ev.objective(cpl.budget_multiplier, inst.delta) == pytest.approx(value, abs=1e-9 * (1 + abs(value)))


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_gap_on_indicator_instances(seed):
    inst = random_instance(np.random.default_rng(seed), indicator=True)
    assert duality_gap(inst, tol=1e-10) <= 1e-8


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_lp_value_nondecreasing_and_concave_in_delta(seed):
    inst = random_instance(np.random.default_rng(seed), n_max=8)
    ds = np.linspace(0, 1.1 * inst.saturation_budget(), 9)
    v = np.array([solve_primal_lp(inst.with_delta(d))[0] for d in ds])
    assert np.all(np.diff(v) >= -1e-10)
    assert np.all(v[1:-1] >= 0.5 * (v[:-2] + v[2:]) - 1e-10)


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(0, 1))
def test_epsilon_summands_nonnegative(seed, t):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, n_max=8)
    # a feasible plan: blend the identity with a random plan inside the budget
    Q = rng.dirichlet(np.ones(inst.n), size=inst.n) * inst.mu[:, None]
    qc = float(np.sum(Q * inst.cost))
    s = t * min(1.0, inst.delta / qc) if qc > 0 else 0.0
    pi = (1 - s) * np.diag(inst.mu) + s * Q
    _, cpl = solve_primal_lp(inst)
    rep = epsilon_optimality_check(make_coupling(inst, pi), cpl.budget_multiplier, 0.0, prob=inst.inner_problem(), delta=inst.delta)
    assert rep.transport_gap >= -1e-12
    assert rep.budget_gap >= -1e-12


def test_epsilon_identity_two_point(two_point):
    pi = make_coupling(two_point, [[1.0, 0.0], [0.0, 0.0]])
    prob = two_point.inner_problem()
    rep = epsilon_optimality_check(pi, 1.0, 0.1, prob=prob, delta=0.5)
    assert rep.transport_gap == pytest.approx(0.0)
    assert rep.budget_gap == pytest.approx(0.5)
    assert not rep
    assert epsilon_optimality_check(pi, 1.0, 0.6, prob=prob, delta=0.5)


def test_epsilon_twice_gap_definition(two_point):
    # J(1) - I(identity) = 0.5 - 0 so eps = 1.0 must succeed
    pi = make_coupling(two_point, [[1.0, 0.0], [0.0, 0.0]])
    assert epsilon_optimality_check(pi, 1.0, 2 * (0.5 - 0.0), prob=two_point.inner_problem(), delta=0.5)


def test_epsilon_infeasible(two_point):
    with pytest.raises(InfeasibleCoupling):
        epsilon_optimality_check(make_coupling(two_point, [[0.0, 1.0], [0, 0]]), 1.0, 1.0, prob=two_point.inner_problem(), delta=0.5)


@pytest.mark.parametrize(
    "kw",
    [
        {"cost": [[0.0, 0.0], [1.0, 0.0]]},
        {"cost": [[1.0, 1.0], [1.0, 0.0]]},
        {"mu": [0.6, 0.6]},
        {"delta": -0.1},
        {"f": [0.0, np.inf]},
    ],
)
def test_instance_validation(kw):
    base = {"support": [0, 1], "mu": [1.0, 0.0], "f": [0.0, 1.0], "cost": [[0.0, 1.0], [1.0, 0.0]], "delta": 0.5}
    base.update(kw)
    with pytest.raises(InvalidInput):
        FiniteInstance(**base)


def test_instance_json_roundtrip(two_point):
    back = FiniteInstance.from_dict(json.loads(two_point.to_json()))
    assert back.support == two_point.support
    assert np.array_equal(back.cost, two_point.cost)
    with pytest.raises(InvalidInput):
        FiniteInstance.from_dict({"mu": [1.0]})


def test_size_limit():
    inst = random_instance(np.random.default_rng(0), n_min=5, n_max=5)
    with pytest.raises(InvalidInput):
        solve_primal_lp(inst, max_n=4)


def test_degenerate_instance_terminates():
    # many ties in f and cost exercise the anti-cycling rule
    n = 10
    C = np.ones((n, n)) - np.eye(n)
    f = np.array([0.0, 1.0] * (n // 2))
    inst = FiniteInstance(range(n), np.full(n, 1 / n), f, C, 0.25)
    value, _ = solve_primal_lp(inst)
    assert value == pytest.approx(highs_value(inst), abs=1e-12)
