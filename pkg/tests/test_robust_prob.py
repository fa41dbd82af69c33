import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otrisk.duality import InnerProblem, minimize_dual
from otrisk.errors import InvalidInput, InvalidProjection
from otrisk.measures import EmpiricalMeasure
from otrisk.robust_prob import (
    DistanceProfile,
    build_profile,
    calibrate_threshold,
    cbar_bounds,
    h_of_u,
    piecewise_dual,
    randomized_coupling_value,
    sample_worst_case_coupling,
    worst_case_probability,
)

profiles = st.lists(
    st.tuples(st.sampled_from([0.0, 0.5, 1.0, 2.0, 3.0]) | st.floats(1e-6, 10), st.floats(0.01, 1.0)),
    min_size=1,
    max_size=12,
)


def prof(entries):
    d, w = zip(*entries)
    return DistanceProfile(d, w)


def test_build_profile_sorts():
    mu = EmpiricalMeasure(["a", "b"])
    p = build_profile(mu, {"a": 2.0, "b": 0.0}.get)
    assert p.entries() == [(0.0, 0.5), (2.0, 0.5)]


def test_build_profile_all_inside():
    p = build_profile(EmpiricalMeasure([1, 2, 3]), lambda x: 0.0)
    assert p.entries() == [(0.0, 1.0)]
    assert p.baseline_probability == 1.0


def test_build_profile_negative_distance():
    with pytest.raises(InvalidInput):
        build_profile(EmpiricalMeasure([1]), lambda x: -1.0)


def test_h_examples():
    p = prof([(0, 0.5), (2, 0.5)])
    assert h_of_u(p, 1.0) == 0.0
    assert h_of_u(p, 2.0) == 1.0
    assert h_of_u(p, 0.0) == 0.0


def test_threshold_examples():
    p = prof([(0, 0.5), (2, 0.5)])
    assert calibrate_threshold(p, 0.3) == (2.0, 0.5)
    assert calibrate_threshold(p, 0.0) == (0.0, math.inf)
    assert calibrate_threshold(p, 1.0) == (math.inf, 0.0)
    assert calibrate_threshold(p, 5.0) == (math.inf, 0.0)


def test_two_atom_worst_case():
    p = prof([(0, 0.5), (2, 0.5)])
    wc = worst_case_probability(p, 0.3)
    # move 0.15 of the far atom's mass at cost 2: 0.5 + 0.15
    assert wc.value == pytest.approx(0.65)
    assert wc.c_lower == 0.0 and wc.c_upper == 1.0
    assert wc.randomization == pytest.approx(0.3)
    assert wc.inflated_probability == 1.0
    assert randomized_coupling_value(p, 0.3) == pytest.approx(0.65)


def test_three_atom_threshold_hand_arithmetic():
    p = prof([(1, 0.2), (2, 0.3), (4, 0.5)])
    # h: 0.2 at u=1, 0.8 at u=2, 2.8 at u=4
    u, lam = calibrate_threshold(p, 0.5)
    assert (u, lam) == (2.0, 0.5)
    assert cbar_bounds(p, lam) == (pytest.approx(0.2), pytest.approx(0.8))
    wc = worst_case_probability(p, 0.5)
    assert wc.value == pytest.approx(0.2 + 0.3 * 0.5)


def test_delta_zero_and_saturation():
    p = prof([(0, 0.25), (1, 0.75)])
    assert worst_case_probability(p, 0.0).value == 0.25
    wc = worst_case_probability(p, 0.75)
    assert wc.value == 1.0 and wc.lambda_star == 0.0


@settings(max_examples=100, deadline=None)
@given(profiles, st.floats(0, 1))
def test_value_is_min_of_piecewise_dual(entries, frac):
    p = prof(entries)
    delta = frac * 1.1 * p.full_cost
    wc = worst_case_probability(p, delta)
    lams = [0.0] + [1.0 / d for d in p.distances if d > 0]
    direct = min(piecewise_dual(p, delta, l) for l in lams)
    assert wc.value == pytest.approx(min(direct, 1.0), abs=1e-12)
    dense = min(piecewise_dual(p, delta, l) for l in np.linspace(0, 2 * max(lams) + 1, 2001))
    assert wc.value <= dense + 1e-12
    if 0 < wc.lambda_star < math.inf:
        assert piecewise_dual(p, delta, wc.lambda_star) == pytest.approx(wc.value, abs=1e-12)
        assert randomized_coupling_value(p, delta) == pytest.approx(wc.value, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(profiles)
def test_monotone_in_delta(entries):
    p = prof(entries)
    vals = [worst_case_probability(p, d).value for d in np.linspace(0, 1.2 * p.full_cost + 1e-9, 15)]
    assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))
    assert vals[0] == pytest.approx(p.baseline_probability)


@settings(max_examples=60, deadline=None)
@given(profiles, st.floats(0, 1))
def test_h_inverse_is_generalized_inverse(entries, frac):
    p = prof(entries)
    delta = frac * p.full_cost
    u, lam = calibrate_threshold(p, delta)
    if delta == 0:
        assert u == 0.0
        return
    if math.isinf(u):
        assert delta >= p.full_cost
        return
    assert h_of_u(p, u) >= delta - 1e-12
    smaller = p.distances[p.distances < u]
    if smaller.size:
        assert h_of_u(p, float(smaller.max())) < delta


def test_agrees_with_indicator_closed_form_dual():
    rng = np.random.default_rng(5)
    d = rng.exponential(size=30) * (rng.random(30) < 0.8)
    mu = EmpiricalMeasure(list(range(30)), rng.random(30) + 0.1)
    prob = InnerProblem.closed("indicator", lambda i: float(d[i] == 0), set_distance=lambda i: d[i])
    for delta in (0.0, 0.05, 0.2, 0.6):
        wc = worst_case_probability(build_profile(mu, lambda i: d[i]), delta)
        sol = minimize_dual(mu, prob, delta, tol=1e-12)
        assert sol.value == pytest.approx(wc.value, abs=1e-8)


def test_coupling_sampler_moments():
    rng = np.random.default_rng(1)
    x = rng.normal(size=40)
    mu = EmpiricalMeasure(list(x))
    dist = lambda v: max(0.0, 1.0 - v) ** 2  # set A = [1, inf), c = squared distance
    proj = lambda v: max(v, 1.0)
    delta = 0.2
    idx, moved, d = sample_worst_case_coupling(mu, dist, proj, delta, 7, 200_000, cost=lambda a, b: (a - b) ** 2)
    wc = worst_case_probability(build_profile(mu, dist), delta)
    cost = np.where(moved, d, 0.0)
    inside = moved | (d == 0)
    assert abs(cost.mean() - delta) <= 4 * cost.std() / math.sqrt(cost.size)
    assert abs(inside.mean() - wc.value) <= 4 * math.sqrt(wc.value * (1 - wc.value) / inside.size)


def test_coupling_sampler_projection_contract():
    mu = EmpiricalMeasure([0.0, 0.5])
    dist = lambda v: (1.0 - v) ** 2
    with pytest.raises(InvalidProjection):
        sample_worst_case_coupling(mu, dist, lambda v: 2.0, 0.1, 0, 10, cost=lambda a, b: (a - b) ** 2)


def test_profile_csv(tmp_path):
    p = prof([(2, 1), (0, 1)])
    p.to_csv(tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines() == ["distance,weight", "0.0,0.5", "2.0,0.5"]
