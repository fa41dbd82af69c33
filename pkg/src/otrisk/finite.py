"""Exact primal solver for worst-case expectations on finite spaces.

On a support of n points the primal problem is a linear program over
transport plans pi (n x n):

    maximize    sum_ij pi_ij f_j
    subject to  sum_j pi_ij = mu_i,   sum_ij pi_ij c_ij <= delta,   pi >= 0.

The identity coupling plus the budget slack is a feasible basis with
basis matrix I, so the revised simplex below needs no phase one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .duality import InnerProblem, PhiEvaluator, minimize_dual
from .errors import InvalidInput, SolverError
from .measures import EmpiricalMeasure

DEFAULT_MAX_N = 512


@dataclass(frozen=True)
class FiniteInstance:
    """Worst-case expectation problem on a finite support.

    Attributes:
        support: n state labels (anything JSON-serializable).
        mu: Baseline probabilities.
        f: Objective values at the support points.
        cost: n x n transport costs, zero diagonal, positive elsewhere.
        delta: Budget.
    """

    support: tuple
    mu: np.ndarray
    f: np.ndarray
    cost: np.ndarray
    delta: float

    def __init__(self, support, mu, f, cost, delta):
        mu = np.asarray(mu, dtype=float).ravel()
        f = np.asarray(f, dtype=float).ravel()
        cost = np.asarray(cost, dtype=float)
        n = mu.size
        if n == 0:
            raise InvalidInput("empty support")
        if support is None:
            support = range(n)
        support = tuple(support)
        if len(support) != n or f.size != n or cost.shape != (n, n):
            raise InvalidInput("support, mu, f and cost sizes disagree")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-9:
            raise InvalidInput("mu must be a probability vector")
        if not np.all(np.isfinite(f)):
            raise InvalidInput("f must be finite on a finite instance")
        if np.any(np.diag(cost) != 0):
            raise InvalidInput("cost diagonal must be zero")
        off = ~np.eye(n, dtype=bool)
        if np.any(cost[off] <= 0) or not np.all(np.isfinite(cost)):
            raise InvalidInput("off-diagonal costs must be finite and > 0")
        if not delta >= 0:
            raise InvalidInput("delta must be >= 0")
        for name, arr in (("mu", mu), ("f", f), ("cost", cost)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "delta", float(delta))

    @property
    def n(self) -> int:
        return self.mu.size

    def inner_problem(self) -> InnerProblem:
        """Finite-enumeration problem over support indices."""
        f, C = self.f, self.cost
        return InnerProblem.finite(lambda i: f[i], lambda i, j: C[i, j], range(self.n))

    def measure(self) -> EmpiricalMeasure:
        """Baseline as a measure on support indices with positive mass."""
        idx = np.flatnonzero(self.mu > 0)
        return EmpiricalMeasure(idx.tolist(), self.mu[idx])

    def with_delta(self, delta) -> "FiniteInstance":
        return FiniteInstance(self.support, self.mu, self.f, self.cost, delta)

    def saturation_budget(self) -> float:
        """Budget beyond which all mass can sit at argmax f."""
        return float(np.max(self.cost[:, int(np.argmax(self.f))]))

    def to_json(self) -> str:
        return json.dumps(
            {
                "support": list(self.support),
                "mu": self.mu.tolist(),
                "f": self.f.tolist(),
                "cost": self.cost.tolist(),
                "delta": self.delta,
            }
        )

    @classmethod
    def from_dict(cls, d) -> "FiniteInstance":
        try:
            return cls(d.get("support"), d["mu"], d["f"], d["cost"], d["delta"])
        except KeyError as exc:
            raise InvalidInput(f"instance is missing {exc.args[0]!r}") from None


@dataclass(frozen=True)
class CouplingMatrix:
    """Transport plan on a finite support with feasibility certificates.

    Attributes:
        pi: n x n plan, rows indexed by source.
        support: Support labels (indices for instances built here).
        mu: Source marginal.
        row_marginal_residual: max_i |sum_j pi_ij - mu_i|.
        cost_used: sum_ij pi_ij c_ij.
        budget_multiplier: LP dual price of the budget row, if known.
    """

    pi: np.ndarray
    support: tuple
    mu: np.ndarray
    row_marginal_residual: float
    cost_used: float
    budget_multiplier: float | None = None


def make_coupling(inst: FiniteInstance, pi, budget_multiplier=None) -> CouplingMatrix:
    pi = np.asarray(pi, dtype=float)
    return CouplingMatrix(
        pi=pi,
        support=tuple(range(inst.n)),
        mu=inst.mu,
        row_marginal_residual=float(np.max(np.abs(pi.sum(axis=1) - inst.mu))),
        cost_used=float(np.sum(pi * inst.cost)),
        budget_multiplier=budget_multiplier,
    )


def _revised_simplex(f, C, mu, delta, max_iter=None, refactor_every=64):
    """Revised simplex for the transport-budget LP.

    Columns 0 .. n*n-1 are pi_ij (index i*n + j), column n*n is the budget
    slack. Rows 0 .. n-1 are the marginals, row n is the budget.
    Dantzig pricing, switching to Bland's rule after a run of degenerate
    pivots.

    Returns:
        (x, y): primal column values and the row duals.
    """
    n = mu.size
    m = n + 1
    ncol = n * n + 1
    rhs = np.append(mu, delta)
    obj = np.append(np.tile(f, n), 0.0)
    basis = np.append(np.arange(n) * (n + 1), n * n)  # pi_ii and the slack
    Binv = np.eye(m)
    xB = rhs.copy()
    scale = 1.0 + np.max(np.abs(f))
    rtol = 1e-11 * scale
    ptol = 1e-11
    max_iter = max_iter or 50 * (m + ncol)
    bland = False
    degenerate_run = 0

    def column(q):
        a = np.zeros(m)
        if q == n * n:
            a[n] = 1.0
        else:
            i, j = divmod(q, n)
            a[i] = 1.0
            a[n] = C[i, j]
        return a

    for it in range(max_iter):
        if it and it % refactor_every == 0:
            B = np.column_stack([column(q) for q in basis])
            try:
                Binv = np.linalg.inv(B)
            except np.linalg.LinAlgError as exc:
                raise SolverError(f"singular basis at iteration {it}: {exc}") from None
            xB = Binv @ rhs
            if np.min(xB) < -1e-8:
                raise SolverError(
                    f"basis lost feasibility (min x_B = {np.min(xB):.3g}), "
                    f"cond = {np.linalg.cond(B):.3g}"
                )
            xB = np.maximum(xB, 0.0)

        y = obj[basis] @ Binv
        red = (f[None, :] - y[:n, None] - y[n] * C).ravel()
        red = np.append(red, -y[n])
        red[basis] = 0.0
        cand = np.flatnonzero(red > rtol)
        if cand.size == 0:
            x = np.zeros(ncol)
            x[basis] = xB
            return x, y
        q = int(cand[0]) if bland else int(cand[np.argmax(red[cand])])

        if q == n * n:
            d = Binv[:, n].copy()
        else:
            i, j = divmod(q, n)
            d = Binv[:, i] + C[i, j] * Binv[:, n]
        rows = np.flatnonzero(d > ptol)
        if rows.size == 0:
            raise SolverError("LP reported unbounded; the budget LP is bounded, so this is numerical")
        ratios = xB[rows] / d[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-14 * (1.0 + best)]
        r = int(ties[np.argmin(basis[ties])]) if bland else int(ties[np.argmax(d[ties])])

        step = xB[r] / d[r]
        if step <= 1e-15:
            degenerate_run += 1
            if degenerate_run > 2 * m:
                bland = True
        else:
            degenerate_run = 0
            bland = False
        xB = xB - step * d
        xB[r] = step
        xB = np.maximum(xB, 0.0)
        piv = Binv[r] / d[r]
        Binv = Binv - np.outer(d, piv)
        Binv[r] = piv
        basis[r] = q
    raise SolverError(f"simplex did not converge in {max_iter} iterations")


def solve_primal_lp(inst: FiniteInstance, max_n: int = DEFAULT_MAX_N):
    """Solve the finite primal LP exactly.

    Returns:
        (value, CouplingMatrix). The coupling carries the LP dual price of
        the budget constraint, which is an optimal dual multiplier.

    Raises:
        InvalidInput: If the instance exceeds ``max_n`` points.
        SolverError: On numerical breakdown.
    """
    n = inst.n
    if n > max_n:
        raise InvalidInput(f"instance has {n} points, limit is {max_n}")
    x, y = _revised_simplex(inst.f, inst.cost, inst.mu, inst.delta)
    pi = x[: n * n].reshape(n, n)
    pi[pi < 1e-15] = 0.0
    cpl = make_coupling(inst, pi, budget_multiplier=float(max(y[n], 0.0)))
    if cpl.row_marginal_residual > 1e-9 or cpl.cost_used > inst.delta + 1e-9:
        raise SolverError(
            f"certificate check failed: residual {cpl.row_marginal_residual:.3g}, "
            f"cost {cpl.cost_used:.12g} vs budget {inst.delta:.12g}"
        )
    value = float(np.sum(pi * inst.f[None, :]))
    return value, cpl


@dataclass(frozen=True)
class DualityCertificate:
    """Primal and dual solutions of one finite instance."""

    lp_value: float
    dual_value: float
    gap: float
    lambda_star: float
    coupling: CouplingMatrix


def duality_certificate(inst: FiniteInstance, tol: float = 1e-8) -> DualityCertificate:
    """Solve both sides independently and report the gap."""
    value, cpl = solve_primal_lp(inst)
    mu = inst.measure()
    prob = inst.inner_problem()
    sol = minimize_dual(mu, prob, inst.delta, tol=tol, evaluator=PhiEvaluator(mu, prob))
    return DualityCertificate(value, sol.value, abs(value - sol.value), sol.lambda_star, cpl)


def duality_gap(inst: FiniteInstance, tol: float = 1e-8) -> float:
    """|LP primal value - univariate dual value|."""
    return duality_certificate(inst, tol).gap


def random_instance(rng, n_max=15, n_min=2, zero_delta_prob=0.1, indicator=False):
    """Random instance with positive off-diagonal costs.

    The budget is 0 with probability ``zero_delta_prob`` and otherwise
    uniform on [0, 1.2 * saturation budget].
    """
    n = int(rng.integers(n_min, n_max + 1))
    mu = rng.dirichlet(np.ones(n))
    if indicator:
        f = (rng.random(n) < 0.3).astype(float)
        if not f.any():
            f[rng.integers(n)] = 1.0
    else:
        f = rng.normal(size=n)
    cost = rng.uniform(0.05, 2.0, size=(n, n))
    np.fill_diagonal(cost, 0.0)
    inst = FiniteInstance(range(n), mu, f, cost, 0.0)
    if rng.random() < zero_delta_prob:
        return inst
    return inst.with_delta(float(rng.uniform(0, 1.2 * inst.saturation_budget())))
