"""Univariate dual reformulation of worst-case expectations.

For a baseline measure mu, objective f and transport cost c, the
worst-case expectation over the budget-delta transport ball equals

    inf_{lam >= 0}  lam * delta + E_mu[phi_lam(X)],
    phi_lam(x) = sup_y { f(y) - lam * c(x, y) }.

This module evaluates phi_lam, minimizes the convex dual objective by
golden-section search and checks complementary slackness of couplings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import InfeasibleCoupling, InvalidInput, UnboundedDual, Unsupported
from .measures import EmpiricalMeasure, weighted_sum

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
LAMBDA_CAP = 1e15


@dataclass(frozen=True)
class InnerProblem:
    """Objective, cost and the strategy used for the inner supremum.

    Attributes:
        objective: f(state) -> extended real.
        cost: c(x, y) -> nonnegative real (may be +inf).
        strategy: ``"finite_enumeration"`` or ``"closed_form"``.
        candidates: Extra candidate points for finite enumeration. The
            atom itself is always added.
        model_tag: Registered closed-form name for ``closed_form``.
        params: Parameters handed to the closed form.
    """

    objective: Callable[[Any], float]
    cost: Callable[[Any, Any], float]
    strategy: str = "finite_enumeration"
    candidates: tuple = ()
    model_tag: str | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.strategy not in ("finite_enumeration", "closed_form"):
            raise InvalidInput(f"unknown strategy {self.strategy!r}")
        if self.strategy == "closed_form":
            closed_form(self.model_tag)  # raises Unsupported early

    @classmethod
    def finite(cls, objective, cost, candidates=()):
        return cls(objective, cost, "finite_enumeration", tuple(candidates))

    @classmethod
    def closed(cls, model_tag, objective, cost=None, **params):
        if cost is None:
            cost = _no_cost
        return cls(objective, cost, "closed_form", (), model_tag, dict(params))


def _no_cost(x, y):
    raise Unsupported("this closed-form problem carries no pointwise cost")


@dataclass(frozen=True)
class DualSolution:
    """Result of :func:`minimize_dual`.

    Attributes:
        lambda_star: Minimizing multiplier.
        value: Optimal dual value.
        attained_at_zero: True when lam = 0 is the minimizer.
        iterations: Golden-section iterations used.
        bracket: Final (lam_lo, lam_hi) bracket.
        tolerance: Spread of J over the final bracket points.
        baseline: E_mu[f], the delta = 0 value.
    """

    lambda_star: float
    value: float
    attained_at_zero: bool
    iterations: int
    bracket: tuple
    tolerance: float
    baseline: float


# ----------------------------------------------------------------- closed forms

_CLOSED_FORMS: dict[str, Callable] = {}


def register_closed_form(tag: str):
    """Register a vectorized closed form ``fn(atoms, fvals, lam, params)``.

    The function returns phi_lam for every atom as a float array.
    """

    def deco(fn):
        _CLOSED_FORMS[tag] = fn
        return fn

    return deco


def closed_form(tag):
    try:
        return _CLOSED_FORMS[tag]
    except KeyError:
        raise Unsupported(f"no closed form registered under {tag!r}") from None


@register_closed_form("indicator")
def _indicator_phi(atoms, fvals, lam, params):
    # f = 1_A with A closed: phi = max(1_A(x), 1 - lam * c(x, A))
    dist = np.array([params["set_distance"](x) for x in atoms], dtype=float)
    if lam == 0:
        return np.ones_like(dist)
    return np.where(dist <= 0, 1.0, np.maximum(0.0, 1.0 - lam * dist))


@register_closed_form("shifted_sup")
def _shifted_sup_phi(atoms, fvals, lam, params):
    # f(x) = sup_t(a2 x(t) - a1 t), c = squared sup-norm: best move is a
    # vertical shift by a2 / (2 lam), worth a2**2 / (4 lam)
    a2 = float(params["a2"])
    if a2 == 0:
        return np.asarray(fvals, dtype=float)
    if lam == 0:
        return np.full(len(fvals), np.inf)
    return np.asarray(fvals, dtype=float) + a2 * a2 / (4.0 * lam)


def saturating_objective(y):
    """f(y) = (1 - exp(-y))^+ , bounded by 1 and never reaching it."""
    return max(0.0, -math.expm1(-y))


def saturating_cost(x, y):
    """c(x, y) = |x - y| / (1 + |x - y|), always below 1."""
    d = abs(x - y)
    return d / (1.0 + d)


def _saturating_phi_scalar(x, lam):
    if lam == 0:
        return 1.0  # supremum of f, approached as y -> inf
    best = max(saturating_objective(x), 1.0 - lam)
    # moving left never helps (f nondecreasing); search y = x0 + s, s > 0
    x0 = max(x, 0.0)

    def neg(t):
        s = t / (1.0 - t)
        return -(saturating_objective(x0 + s) - lam * saturating_cost(x, x0 + s))

    grid = np.linspace(1e-9, 1 - 1e-9, 2001)
    vals = np.array([neg(t) for t in grid])
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-14})
    return max(best, -vals[k], -res.fun)


@register_closed_form("saturating")
def _saturating_phi(atoms, fvals, lam, params):
    return np.array([_saturating_phi_scalar(float(x), lam) for x in atoms])


# ------------------------------------------------------------------- evaluation


def _inner_values(fy, cxy, lam):
    """f(y) - lam * c(x, y) with 0 * inf = 0 and inf - inf = -inf."""
    fy = np.asarray(fy, dtype=float)
    cxy = np.asarray(cxy, dtype=float)
    if lam == 0:
        pen = np.zeros_like(cxy)
    else:
        pen = lam * cxy
    with np.errstate(invalid="ignore"):
        out = fy - pen
    return np.where(np.isnan(out), -np.inf, out)


class PhiEvaluator:
    """Caches whatever does not depend on lam for a (measure, problem) pair."""

    def __init__(self, mu: EmpiricalMeasure, prob: InnerProblem):
        self.mu = mu
        self.prob = prob
        self.fvals = np.array([prob.objective(x) for x in mu.atoms], dtype=float)
        if prob.strategy == "finite_enumeration":
            cands = list(prob.candidates)
            self.cand_f = np.array([prob.objective(y) for y in cands], dtype=float)
            self.cost = np.array(
                [[prob.cost(x, y) for y in cands] for x in mu.atoms], dtype=float
            ).reshape(len(mu.atoms), len(cands))
            self_cost = np.array([prob.cost(x, x) for x in mu.atoms], dtype=float)
            if np.any(self_cost != 0):
                raise InvalidInput("cost must vanish on the diagonal, c(x, x) = 0")
            if np.any(self.cost < 0):
                raise InvalidInput("cost must be nonnegative")
        else:
            self.fn = closed_form(prob.model_tag)

    def phi(self, lam: float) -> np.ndarray:
        if lam < 0:
            raise InvalidInput("lambda must be >= 0")
        if self.prob.strategy == "finite_enumeration":
            if self.cost.shape[1] == 0:
                return self.fvals.copy()
            vals = _inner_values(self.cand_f[None, :], self.cost, lam)
            return np.maximum(self.fvals, vals.max(axis=1))
        out = np.asarray(self.fn(self.mu.atoms, self.fvals, lam, self.prob.params), dtype=float)
        return np.maximum(out, self.fvals)

    def objective(self, lam: float, delta: float) -> float:
        tail = weighted_sum(self.mu.weights, self.phi(lam))
        return lam * delta + tail if lam > 0 else tail

    @property
    def baseline(self) -> float:
        return weighted_sum(self.mu.weights, self.fvals)


def phi_lambda(x, lam: float, prob: InnerProblem) -> float:
    """phi_lam(x) = sup_y f(y) - lam * c(x, y).

    The finite strategy enumerates ``prob.candidates`` plus ``x`` itself;
    the closed-form strategy calls the registered formula.
    """
    return float(PhiEvaluator(EmpiricalMeasure([x]), prob).phi(lam)[0])


def dual_objective(lam: float, mu: EmpiricalMeasure, prob: InnerProblem, delta: float) -> float:
    """J(lam) = lam * delta + sum_i w_i phi_lam(x_i)."""
    if delta < 0:
        raise InvalidInput("delta must be >= 0")
    return PhiEvaluator(mu, prob).objective(lam, delta)


def minimize_dual(mu, prob, delta, tol=1e-8, lam_max_hint=None, evaluator=None) -> DualSolution:
    """Minimize the convex dual objective over lam >= 0.

    Golden-section search on [0, lam_max]. Without a hint, lam_max is
    (J(0) - E f) / delta, beyond which J exceeds J(0). The bracket is
    doubled while J keeps decreasing at its right end.

    Args:
        mu: Baseline measure.
        prob: Inner problem.
        delta: Transport budget, >= 0.
        tol: Relative tolerance on the bracket width.
        lam_max_hint: Optional right end of the initial bracket.
        evaluator: Optional prebuilt :class:`PhiEvaluator`.

    Raises:
        UnboundedDual: If J is +inf everywhere on the search range.
    """
    if delta < 0:
        raise InvalidInput("delta must be >= 0")
    ev = evaluator or PhiEvaluator(mu, prob)
    cache = {}

    def J(lam):
        if lam not in cache:
            cache[lam] = ev.objective(lam, delta)
        return cache[lam]

    base = ev.baseline
    j0 = J(0.0)
    if lam_max_hint is not None:
        hi = float(lam_max_hint)
    elif delta > 0 and math.isfinite(j0):
        hi = (j0 - base) / delta
    else:
        hi = 1.0
    hi = max(hi, 1e-12)

    # find a finite point, then push the right end out while J decreases
    while not math.isfinite(J(hi)):
        hi *= 2.0
        if hi > LAMBDA_CAP:
            raise UnboundedDual("dual objective is +inf on the whole search range")
    while hi < LAMBDA_CAP and J(2.0 * hi) < J(hi):
        hi *= 2.0
    lo, hi = 0.0, min(2.0 * hi, LAMBDA_CAP)

    xtol = tol * 1e-4 * (1.0 + hi)
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    it = 0
    while b - a > xtol and it < 400:
        if J(c) <= J(d):
            b, d = d, c
            c = b - INV_PHI * (b - a)
        else:
            a, c = c, d
            d = a + INV_PHI * (b - a)
        it += 1

    pts = [a, c, d, b, 0.0]
    vals = [J(p) for p in pts]
    k = int(np.argmin(vals))
    lam_star, value = pts[k], vals[k]
    at_zero = J(0.0) <= value
    if at_zero:
        lam_star, value = 0.0, J(0.0)
    spread = max(vals[:4]) - min(vals[:4]) if all(map(math.isfinite, vals[:4])) else math.inf
    return DualSolution(
        lambda_star=float(lam_star),
        value=float(value),
        attained_at_zero=bool(at_zero),
        iterations=it,
        bracket=(float(a), float(b)),
        tolerance=float(spread),
        baseline=float(base),
    )


# ----------------------------------------------------------------- slackness


@dataclass(frozen=True)
class SlacknessReport:
    """Violations of the two complementary-slackness conditions."""

    slack1_violation: float
    slack2_violation: float

    def ok(self, tol: float) -> bool:
        return self.slack1_violation <= tol and self.slack2_violation <= tol


@dataclass(frozen=True)
class EpsilonReport:
    """Both summands of the epsilon-optimality criterion.

    Attributes:
        transport_gap: Integral of phi(x) - (f(y) - lam c(x, y)) under pi.
        budget_gap: lam * (delta - integral of c under pi).
        epsilon: Threshold tested.
    """

    transport_gap: float
    budget_gap: float
    epsilon: float

    @property
    def total(self) -> float:
        return self.transport_gap + self.budget_gap

    def __bool__(self):
        return self.total <= self.epsilon


def _coupling_terms(pi, lam, prob, delta, feas_tol):
    """Per-cell slack terms of a finite coupling."""
    P = np.asarray(pi.pi, dtype=float)
    support = pi.support
    mu_w = np.asarray(pi.mu, dtype=float)
    if np.any(P < -feas_tol):
        raise InfeasibleCoupling("negative transport mass")
    resid = float(np.max(np.abs(P.sum(axis=1) - mu_w)))
    if resid > max(feas_tol, 1e-9):
        raise InfeasibleCoupling(f"row marginal residual {resid:.3g}")
    C = np.array([[prob.cost(x, y) for y in support] for x in support], dtype=float)
    used = float(np.sum(P * C))
    if used > delta + feas_tol:
        raise InfeasibleCoupling(f"coupling cost {used:.12g} exceeds budget {delta:.12g}")
    F = np.array([prob.objective(y) for y in support], dtype=float)
    phi = PhiEvaluator(EmpiricalMeasure(support), prob).phi(lam)
    gap = phi[:, None] - _inner_values(F[None, :], C, lam)
    return P, gap, used


def check_slackness(pi, lam_star, prob, delta, tol=1e-8) -> SlacknessReport:
    """Complementary-slackness violations of a finite coupling.

    Args:
        pi: A :class:`otrisk.finite.CouplingMatrix`.
        lam_star: Dual multiplier.
        prob: Inner problem whose candidates cover the support.
        delta: Budget.
        tol: Feasibility tolerance for the budget check.

    Raises:
        InfeasibleCoupling: If pi breaks its marginal or budget.
    """
    P, gap, used = _coupling_terms(pi, lam_star, prob, delta, tol)
    live = P > 1e-14
    s1 = float(gap[live].max()) if np.any(live) else 0.0
    s2 = abs(lam_star * (used - delta))
    return SlacknessReport(max(s1, 0.0), s2)


def epsilon_optimality_check(pi, lam_star, eps, *, prob, delta, feas_tol=1e-9) -> EpsilonReport:
    """Epsilon-optimality of a feasible coupling against a multiplier.

    The coupling is eps-optimal iff the transport gap plus the unused
    budget times lam is at most eps; both summands are nonnegative.
    """
    P, gap, used = _coupling_terms(pi, lam_star, prob, delta, feas_tol)
    live = P > 0
    t1 = float(np.sum(P[live] * gap[live]))
    t2 = float(lam_star * (delta - used))
    return EpsilonReport(t1, t2, float(eps))
