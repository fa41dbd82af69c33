"""Worst-case probabilities of closed sets over transport balls.

With f = 1_A the dual objective becomes piecewise linear,

    J(lam) = lam * delta + sum_i w_i (1 - lam d_i)^+,   d_i = c(x_i, A),

so its minimum sits at lam = 0 or at one of the kinks 1 / d_i. The
distance profile (sorted d_i with weights) gives everything needed:
the partial cost h(u), the threshold 1 / lam*, the boundary costs and a
randomized worst-case coupling.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, InvalidProjection
from .measures import EmpiricalMeasure


@dataclass(frozen=True)
class DistanceProfile:
    """Sorted distances to the target set with their baseline weights.

    Equal distances are grouped, so ``distances`` is strictly increasing.

    Attributes:
        distances: Distinct d values, ascending.
        weights: Total baseline mass at each distance.
    """

    distances: np.ndarray
    weights: np.ndarray

    def __init__(self, distances, weights):
        d = np.asarray(distances, dtype=float).ravel()
        w = np.asarray(weights, dtype=float).ravel()
        if d.size == 0 or d.size != w.size:
            raise InvalidInput("profile needs matching nonempty distances and weights")
        if np.any(~np.isfinite(d)) or np.any(d < 0):
            raise InvalidInput("distances must be finite and >= 0")
        if np.any(w < 0):
            raise InvalidInput("weights must be >= 0")
        w = w / w.sum()
        order = np.argsort(d, kind="stable")
        d, w = d[order], w[order]
        uniq, start = np.unique(d, return_index=True)
        grouped = np.add.reduceat(w, start)
        keep = grouped > 0
        uniq, grouped = uniq[keep], grouped[keep]
        for name, arr in (("distances", uniq), ("weights", grouped)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def full_cost(self) -> float:
        """Cost of moving every atom into the set."""
        return float(np.sum(self.weights * self.distances))

    @property
    def baseline_probability(self) -> float:
        """Baseline mass already in the set."""
        return float(self.weights[self.distances == 0].sum())

    def entries(self):
        return list(zip(self.distances.tolist(), self.weights.tolist()))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["distance", "weight"])
            for d, p in self.entries():
                w.writerow([repr(d), repr(p)])


def build_profile(mu: EmpiricalMeasure, set_distance) -> DistanceProfile:
    """Profile of c(x, A) over the atoms of ``mu``."""
    d = np.array([set_distance(x) for x in mu.atoms], dtype=float)
    if np.any(np.isnan(d)) or np.any(d < 0):
        raise InvalidInput("set distance must be >= 0")
    return DistanceProfile(d, mu.weights)


def h_of_u(profile: DistanceProfile, u: float) -> float:
    """h(u) = sum of w_i d_i over atoms with d_i <= u."""
    if u < 0:
        raise InvalidInput("u must be >= 0")
    k = np.searchsorted(profile.distances, u, side="right")
    return float(np.sum(profile.weights[:k] * profile.distances[:k]))


def calibrate_threshold(profile: DistanceProfile, delta: float):
    """Generalized inverse u* = inf{u >= 0 : h(u) >= delta} and lam* = 1/u*.

    Returns:
        (u_star, lam_star). When delta covers the full transport cost,
        u_star = inf and lam_star = 0. When u_star = 0, lam_star = inf.
    """
    if delta < 0:
        raise InvalidInput("delta must be >= 0")
    if delta == 0:
        return 0.0, math.inf
    if delta >= profile.full_cost:
        return math.inf, 0.0
    cum = np.cumsum(profile.weights * profile.distances)
    k = int(np.searchsorted(cum, delta, side="left"))
    # guard against rounding in the cumulative sum
    while k > 0 and cum[k - 1] >= delta:
        k -= 1
    u_star = float(profile.distances[k])
    return u_star, (1.0 / u_star if u_star > 0 else math.inf)


def cbar_bounds(profile: DistanceProfile, lam_star: float):
    """Left and right transport cost at the threshold 1 / lam*.

    Returns:
        (c_lower, c_upper) = (sum over d < 1/lam*, sum over d <= 1/lam*)
        of w_i d_i.
    """
    if not lam_star > 0:
        raise InvalidInput("lam_star must be > 0")
    return _cbar_at(profile, 1.0 / lam_star)


def _cbar_at(profile, u):
    d, w = profile.distances, profile.weights
    # 1/(1/d) can miss d by an ulp; snap to the nearest distance
    near = np.isclose(d, u, rtol=1e-12, atol=0.0)
    if near.any():
        u = float(d[near][0])
    return float(np.sum((w * d)[d < u])), float(np.sum((w * d)[d <= u]))


def piecewise_dual(profile: DistanceProfile, delta: float, lam: float) -> float:
    """lam * delta + sum_i w_i (1 - lam d_i)^+."""
    return lam * delta + float(np.sum(profile.weights * np.maximum(0.0, 1.0 - lam * profile.distances)))


@dataclass(frozen=True)
class WorstCase:
    """Worst-case probability and its certificates.

    Attributes:
        value: Exact dual value.
        lambda_star: Optimal multiplier (inf when delta = 0).
        u_star: Threshold 1 / lam*.
        c_lower: Transport cost strictly inside the threshold.
        c_upper: Transport cost up to and including the threshold.
        inflated_probability: Baseline mass with d <= u_star.
        randomization: Probability of moving a boundary atom.
    """

    value: float
    lambda_star: float
    u_star: float
    c_lower: float
    c_upper: float
    inflated_probability: float
    randomization: float


def worst_case_probability(profile: DistanceProfile, delta: float) -> WorstCase:
    """Exact sup of P(A) over the budget-delta ball.

    The value is the minimum of the piecewise-linear dual over lam = 0
    and the kinks 1 / d_i.
    """
    if delta < 0:
        raise InvalidInput("delta must be >= 0")
    d, w = profile.distances, profile.weights
    u_star, lam_star = calibrate_threshold(profile, delta)
    p_in = profile.baseline_probability
    if lam_star == 0.0:
        return WorstCase(1.0, 0.0, math.inf, profile.full_cost, profile.full_cost, 1.0, 1.0)
    if math.isinf(lam_star):
        return WorstCase(p_in, math.inf, 0.0, 0.0, 0.0, p_in, 0.0)

    vals = _kink_values(d, w, delta, d[d > 0])
    value = float(min(vals.min(), 1.0))
    c_lo, c_hi = _cbar_at(profile, u_star)
    p = (delta - c_lo) / (c_hi - c_lo) if c_hi > c_lo else 1.0
    inflated = float(w[d <= u_star].sum())
    return WorstCase(value, lam_star, u_star, c_lo, c_hi, inflated, float(np.clip(p, 0.0, 1.0)))


def _kink_values(d, w, delta, thresholds):
    # dual at lam = 1/u for each threshold u, plus lam = 0 (value 1);
    # only atoms with d_i < u contribute: sum w_i (1 - d_i/u) + delta/u
    cw = np.concatenate([[0.0], np.cumsum(w)])
    cwd = np.concatenate([[0.0], np.cumsum(w * d)])
    k = np.searchsorted(d, thresholds, side="left")
    with np.errstate(over="ignore"):
        kinks = cw[k] + (delta - cwd[k]) / thresholds
    return np.concatenate([[1.0], kinks])


def randomized_coupling_value(profile: DistanceProfile, delta: float) -> float:
    """mu{d < u*} + p mu{d = u*}, the randomized-coupling probability."""
    wc = worst_case_probability(profile, delta)
    if wc.lambda_star == 0.0:
        return 1.0
    d, w = profile.distances, profile.weights
    return float(w[d < wc.u_star].sum() + wc.randomization * w[d == wc.u_star].sum())


def sample_worst_case_coupling(mu: EmpiricalMeasure, set_distance, projection, delta, rng_seed, n_draws, cost=None):
    """Draw pairs (X, Y*) from a worst-case coupling.

    X ~ mu. Atoms closer than u* are projected into the set, atoms at
    exactly u* are projected with probability p, the rest stay put.

    Args:
        mu: Baseline measure.
        set_distance: x -> c(x, A).
        projection: x -> a point of A achieving c(x, A).
        delta: Budget.
        rng_seed: Seed for numpy's default generator.
        n_draws: Number of pairs.
        cost: Optional c(x, y) used to verify the projection contract.

    Returns:
        (atom_index, moved, distance) arrays: the drawn atom index, whether
        it was projected, and its distance to the set. Y* is
        ``projection(atoms[i])`` where ``moved`` and ``atoms[i]`` otherwise.

    Raises:
        InvalidProjection: If a projection misses the set distance.
    """
    dist = np.array([set_distance(x) for x in mu.atoms], dtype=float)
    if cost is not None:
        for x, dx in zip(mu.atoms, dist):
            y = projection(x)
            if set_distance(y) != 0 or not math.isclose(cost(x, y), dx, rel_tol=1e-9, abs_tol=1e-12):
                raise InvalidProjection(f"projection of {x!r} does not realize c(x, A) = {dx!r}")
    profile = DistanceProfile(dist, mu.weights)
    wc = worst_case_probability(profile, delta)
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(len(mu.atoms), size=n_draws, p=mu.weights)
    d = dist[idx]
    if wc.lambda_star == 0.0:
        moved = np.ones(n_draws, dtype=bool)
    elif math.isinf(wc.lambda_star):
        moved = d == 0
    else:
        coin = rng.random(n_draws) < wc.randomization
        moved = (d < wc.u_star) | ((d == wc.u_star) & coin)
    return idx, moved, d
