"""Baseline measures, transport costs and claim data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import InvalidInput, ParseError

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Finite weighted collection of atoms.

    Atoms are opaque: scalars, vectors, paths or anything the cost and
    objective functions understand. Weights are renormalized once at
    construction.

    Attributes:
        atoms: Tuple of state-space elements.
        weights: Probability masses, strictly positive, summing to one.
    """

    atoms: tuple
    weights: np.ndarray

    def __init__(self, atoms: Sequence[Any], weights=None):
        atoms = tuple(atoms)
        if len(atoms) == 0:
            raise InvalidInput("a measure needs at least one atom")
        if weights is None:
            w = np.full(len(atoms), 1.0 / len(atoms))
        else:
            w = np.asarray(weights, dtype=float).ravel()
            if w.shape[0] != len(atoms):
                raise InvalidInput("weights and atoms differ in length")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise InvalidInput("weights must be finite and > 0")
            w = w / w.sum()
        w.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.atoms)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def expectation(self, func) -> float:
        """Weighted mean of ``func`` over the atoms."""
        vals = np.array([func(a) for a in self.atoms], dtype=float)
        return weighted_sum(self.weights, vals)


def weighted_sum(weights, values) -> float:
    """Weighted sum with extended-real conventions.

    Zero weight never contributes; +inf with positive weight wins over
    everything; otherwise numpy's pairwise summation is used.
    """
    w = np.asarray(weights, dtype=float)
    v = np.asarray(values, dtype=float)
    live = w > 0
    v = v[live]
    w = w[live]
    if np.any(np.isnan(v)):
        raise InvalidInput("NaN in weighted sum")
    if np.any(v == np.inf):
        return math.inf
    if np.any(v == -np.inf):
        return -math.inf
    return float(np.sum(w * v))


def from_samples(points: Sequence[Any]) -> EmpiricalMeasure:
    """Uniform empirical measure on ``points`` (order preserved)."""
    if points is None or len(points) == 0:
        raise InvalidInput("from_samples needs a nonempty list")
    return EmpiricalMeasure(points)


_METRICS = ("euclidean", "weighted_euclidean", "sup_norm_path", "j1_upper_bound_path")


@dataclass(frozen=True)
class CostSpec:
    """Transport cost c(x, y) = d(x, y) ** p with a budget.

    Attributes:
        base_metric: One of ``euclidean``, ``weighted_euclidean``,
            ``sup_norm_path`` or ``j1_upper_bound_path``.
        p: Exponent, at least 1.
        delta: Transport budget, nonnegative.
        weights: Coordinate weights for ``weighted_euclidean``.
    """

    base_metric: str = "euclidean"
    p: float = 1.0
    delta: float = 0.0
    weights: tuple | None = field(default=None)

    def __post_init__(self):
        if self.base_metric not in _METRICS:
            raise InvalidInput(f"unknown base metric {self.base_metric!r}")
        if not self.p >= 1:
            raise InvalidInput("exponent p must be >= 1")
        if not self.delta >= 0:
            raise InvalidInput("budget delta must be >= 0")
        if self.base_metric == "weighted_euclidean":
            if self.weights is None or any(w <= 0 for w in self.weights):
                raise InvalidInput("weighted_euclidean needs positive weights")

    def distance(self, x, y) -> float:
        if self.base_metric in ("sup_norm_path", "j1_upper_bound_path"):
            from .paths import sup_distance

            return sup_distance(x, y)
        diff = np.atleast_1d(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
        if self.base_metric == "weighted_euclidean":
            return float(np.sqrt(np.sum(np.asarray(self.weights) * diff**2)))
        return float(np.sqrt(np.sum(diff**2)))

    def __call__(self, x, y) -> float:
        return self.distance(x, y) ** self.p


@dataclass(frozen=True)
class ClaimModel:
    """Cramer-Lundberg claim model parameters.

    Attributes:
        claim_rate: Poisson intensity nu.
        safety_loading: Insurer's loading eta.
        m1: First claim moment.
        m2: Second raw claim moment.
        horizon: Time horizon T.
        p: Transport-cost exponent.
        reinsurer_loading: Reinsurer's loading theta, optional.
    """

    claim_rate: float = 1.0
    safety_loading: float = 0.1
    m1: float = 11.0 / 6.0
    m2: float = 11.0
    horizon: float = 100.0
    p: float = 2.0
    reinsurer_loading: float | None = None

    def __post_init__(self):
        if not self.claim_rate > 0:
            raise InvalidInput("claim rate must be > 0")
        if not self.m1 > 0:
            raise InvalidInput("m1 must be > 0")
        if not self.m2 >= self.m1**2 * (1 - 1e-12):
            raise InvalidInput("m2 must be >= m1**2")
        if not self.horizon > 0:
            raise InvalidInput("horizon must be > 0")
        if not self.safety_loading > 0:
            raise InvalidInput("safety loading must be > 0")
        if not self.p >= 1:
            raise InvalidInput("p must be >= 1")
        if self.reinsurer_loading is not None and not self.reinsurer_loading > self.safety_loading:
            raise InvalidInput("reinsurer loading must exceed safety loading")

    @property
    def volatility(self) -> float:
        """Diffusion scale sqrt(nu * m2) of the Brownian surrogate."""
        return math.sqrt(self.claim_rate * self.m2)

    @property
    def drift(self) -> float:
        """Net premium drift eta * nu * m1."""
        return self.safety_loading * self.claim_rate * self.m1


def estimate_moments(claims) -> tuple[float, float]:
    """Sample mean and sample second raw moment of positive claims."""
    x = np.asarray(claims, dtype=float).ravel()
    if x.size < 2:
        raise InvalidInput("need at least two claims")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise InvalidInput("claims must be finite and > 0")
    m1 = float(np.mean(x))
    m2 = float(np.mean(x * x))
    # guard against rounding below the Cauchy-Schwarz bound
    return m1, max(m2, m1 * m1)


def read_claims_csv(path) -> list[float]:
    """Read one positive claim per row; a single header line is allowed."""
    values = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh)]
    for i, row in enumerate(rows, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        cell = row[0].strip()
        try:
            val = float(cell)
        except ValueError:
            if i == 1 and not values and len(rows) > 1:
                continue  # header
            raise ParseError(f"cannot parse {cell!r} as a number", row=i) from None
        if not math.isfinite(val) or val <= 0:
            raise ParseError(f"claim must be positive, got {cell!r}", row=i)
        values.append(val)
    if not values:
        raise InvalidInput(f"no claims in {path}")
    return values


def pareto_claims(rng, n, alpha=2.2):
    """Draw Pareto claims with tail 1 - F(x) = min(1, x**-alpha)."""
    return rng.pareto(alpha, size=n) + 1.0


def pareto_moments(alpha=2.2):
    """Analytic first two moments of :func:`pareto_claims` (alpha > 2)."""
    return alpha / (alpha - 1.0), alpha / (alpha - 2.0)
