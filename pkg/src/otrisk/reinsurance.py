"""Robust proportional reinsurance under a Brownian loss surrogate.

An insurer keeping a fraction b of every claim faces the loss process
L_b(t) = a2(b) B(t) - a1(b) t with

    a1(b) = (b theta - (theta - eta)) nu m1,   a2(b) = b sqrt(nu m2).

The baseline objective is E sup_{t <= T} L_b(t). Over a transport ball of
squared sup-norm radius delta around Brownian motion the worst case adds
exactly a2(b) sqrt(delta), since the best perturbation is a vertical
shift of size a2 / (2 lam).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from .duality import InnerProblem, PhiEvaluator, minimize_dual
from .errors import InvalidInput
from .measures import ClaimModel, EmpiricalMeasure
from .paths import PathGrid, brownian_crossing_prob, drifted_sup, j1_upper_bound, simulate_brownian

METHODS = ("tail_integration", "monte_carlo")


def _theta(model: ClaimModel) -> float:
    if model.reinsurer_loading is None:
        raise InvalidInput("model needs a reinsurer loading theta")
    return model.reinsurer_loading


def loss_drift(b, model: ClaimModel) -> float:
    """a1(b) = (b theta - (theta - eta)) nu m1."""
    th = _theta(model)
    return (b * th - (th - model.safety_loading)) * model.claim_rate * model.m1


def loss_volatility(b, model: ClaimModel) -> float:
    """a2(b) = b sqrt(nu m2)."""
    return b * model.volatility


def _check_b(b):
    if not 0.0 <= b <= 1.0:
        raise InvalidInput("b must lie in [0, 1]")


def expected_sup_tail(a1, a2, T) -> float:
    """E sup_{t <= T}(a2 B(t) - a1 t) as the integral of its tail.

    The sup is nonnegative (t = 0 is included), so E sup equals the
    integral over u > 0 of P(sup >= u), computed from the reflection
    formula. Valid for either sign of a1.
    """
    if a2 == 0:
        return max(0.0, -a1 * T)
    scale = a2 * math.sqrt(T)
    upper = max(0.0, -a1 * T) + 40.0 * scale
    g = lambda u: brownian_crossing_prob(u, a1, a2, T)
    mid = max(0.0, -a1 * T)
    if mid > 0:
        v1, _ = quad(g, 0.0, mid, limit=200, epsabs=1e-11, epsrel=1e-11)
        v2, _ = quad(g, mid, upper, limit=200, epsabs=1e-11, epsrel=1e-11)
        return v1 + v2
    v, _ = quad(g, 0.0, upper, limit=200, epsabs=1e-11, epsrel=1e-11)
    return v


class BridgeSampler:
    """Common random numbers for exact Brownian-sup sampling.

    On each grid step the maximum of a Brownian bridge with endpoints
    x0, x1 and variance rate s**2 dt is (x0 + x1 + sqrt((x1 - x0)**2 -
    2 s**2 dt log U)) / 2, so the per-path sup is exact in law for any
    grid. The same normals and uniforms serve every (a1, a2).
    """

    def __init__(self, T, n_paths, n_steps=16, seed=0, chunk=1 << 15):
        self.T = float(T)
        self.n_paths = int(n_paths)
        self.n_steps = int(n_steps)
        self.seed = seed
        self.chunk = int(chunk)

    def _blocks(self):
        ss = np.random.SeedSequence(self.seed)
        n_chunks = -(-self.n_paths // self.chunk)
        done = 0
        for child in ss.spawn(n_chunks):
            k = min(self.chunk, self.n_paths - done)
            rng = np.random.default_rng(child)
            Z = rng.standard_normal((k, self.n_steps))
            logU = np.log(rng.random((k, self.n_steps)))
            done += k
            yield Z, logU

    def sups(self, a1, a2):
        """Per-path sup of a2 B(t) - a1 t over [0, T]."""
        dt = self.T / self.n_steps
        t = np.arange(1, self.n_steps + 1) * dt
        out = []
        for Z, logU in self._blocks():
            X1 = a2 * np.cumsum(Z, axis=1) * math.sqrt(dt) - a1 * t
            X0 = np.concatenate([np.zeros((X1.shape[0], 1)), X1[:, :-1]], axis=1)
            d = X1 - X0
            M = 0.5 * (X0 + X1 + np.sqrt(d * d - 2.0 * a2 * a2 * dt * logU))
            out.append(M.max(axis=1))
        return np.maximum(np.concatenate(out), 0.0)


def expected_max_loss(b, model: ClaimModel, method="tail_integration", seed=0, n_paths=10**5, n_steps=16, sampler=None):
    """E sup_{t <= T} L_b(t) for retention b.

    Args:
        b: Retained fraction in [0, 1].
        model: Claim model with reinsurer loading.
        method: ``tail_integration`` or ``monte_carlo``.
        seed, n_paths, n_steps: Monte Carlo settings.
        sampler: Optional shared :class:`BridgeSampler` (common random
            numbers across b).
    """
    _check_b(b)
    a1, a2 = loss_drift(b, model), loss_volatility(b, model)
    if method == "tail_integration":
        return expected_sup_tail(a1, a2, model.horizon)
    if method == "monte_carlo":
        sampler = sampler or BridgeSampler(model.horizon, n_paths, n_steps, seed)
        return float(np.mean(sampler.sups(a1, a2)))
    raise InvalidInput(f"unknown method {method!r}")


def robust_loss(b, model: ClaimModel, delta, method="tail_integration", **kw) -> float:
    """expected_max_loss(b) + a2(b) sqrt(delta), delta in Brownian units."""
    if delta < 0:
        raise InvalidInput("delta must be >= 0")
    return expected_max_loss(b, model, method, **kw) + loss_volatility(b, model) * math.sqrt(delta)


@dataclass(frozen=True)
class ReinsuranceProblem:
    """Outer minimization over the retained fraction.

    Attributes:
        model: Claim model with reinsurer loading theta > eta.
        delta: Budget in standard-Brownian units.
        b_step: Grid step for the coarse search.
        method: ``tail_integration`` or ``monte_carlo``.
        seed, n_paths, n_steps: Monte Carlo settings.
    """

    model: ClaimModel
    delta: float = 0.0
    b_step: float = 1e-3
    method: str = "tail_integration"
    seed: int = 0
    n_paths: int = 10**5
    n_steps: int = 16

    def __post_init__(self):
        _theta(self.model)
        if self.delta < 0:
            raise InvalidInput("delta must be >= 0")
        if not 0 < self.b_step <= 0.5:
            raise InvalidInput("b_step must be in (0, 0.5]")
        if self.method not in METHODS:
            raise InvalidInput(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class ReinsuranceResult:
    b_star: float
    value: float
    delta: float
    method: str
    seed: int
    grid_min: float
    interior: bool


def optimize_b(problem: ReinsuranceProblem) -> ReinsuranceResult:
    """Grid search over b in [0, 1] followed by golden-section refinement."""
    m = problem.model
    sampler = None
    if problem.method == "monte_carlo":
        sampler = BridgeSampler(m.horizon, problem.n_paths, problem.n_steps, problem.seed)
    obj = lambda b: robust_loss(b, m, problem.delta, problem.method, sampler=sampler)
    n = int(round(1.0 / problem.b_step))
    grid = np.linspace(0.0, 1.0, n + 1)
    vals = np.array([obj(b) for b in grid])
    k = int(np.argmin(vals))
    interior = 0 < k < n and vals[k - 1] >= vals[k] <= vals[k + 1]
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, n)]
    res = minimize_scalar(obj, bounds=(lo, hi), method="bounded", options={"xatol": 1e-7})
    b_star, value = (float(res.x), float(res.fun)) if res.fun <= vals[k] else (float(grid[k]), float(vals[k]))
    return ReinsuranceResult(b_star, value, problem.delta, problem.method, problem.seed, float(grid[k]), bool(interior))


def verify_shift_closed_form(b, lam, model: ClaimModel, n_candidates=101, step=1e-4, n_paths=100, n_steps=512, seed=0):
    """Closed-form inner sup against enumeration over vertical shifts.

    For each simulated Brownian grid x the closed form f(x) + a2**2/(4 lam)
    is compared with max over shifts s of f(x + s) - lam * sup|s|**2,
    where f and the cost are evaluated on the shifted grids themselves.
    The shift grid is centred on a2 / (2 lam).

    Returns:
        Maximum absolute deviation over paths.
    """
    if lam <= 0:
        raise InvalidInput("lam must be > 0")
    a1, a2 = loss_drift(b, model), loss_volatility(b, model)
    half = n_candidates // 2
    shifts = a2 / (2.0 * lam) + step * np.arange(-half, half + 1)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_paths):
        x = simulate_brownian(model.horizon, n_steps, rng=rng)
        fx = drifted_sup(x, a2, a1)
        closed = fx + a2 * a2 / (4.0 * lam)
        best = -math.inf
        for s in shifts:
            y = PathGrid(x.times, x.values + s, x.kind)
            best = max(best, drifted_sup(y, a2, a1) - lam * j1_upper_bound(x, y, 2))
        worst = max(worst, abs(closed - best))
    return worst


def robust_loss_via_dual(b, model: ClaimModel, delta, n_paths=10**5, n_steps=16, seed=0, tol=1e-10):
    """Worst-case expected max loss from the univariate dual.

    The baseline is the empirical law of exact Brownian loss sups and the
    inner sup uses the vertical-shift closed form.

    Returns:
        The :class:`otrisk.duality.DualSolution`.
    """
    a1, a2 = loss_drift(b, model), loss_volatility(b, model)
    sups = BridgeSampler(model.horizon, n_paths, n_steps, seed).sups(a1, a2)
    mu = EmpiricalMeasure(sups.tolist())
    prob = InnerProblem.closed("shifted_sup", lambda s: s, a2=a2)
    return minimize_dual(mu, prob, delta, tol=tol, evaluator=PhiEvaluator(mu, prob))
