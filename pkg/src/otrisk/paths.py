"""Path grids, simulators and path-space ruin quantities.

Paths live on finite time grids and are read either as right-continuous
step functions or as piecewise-linear interpolants. Transport costs
between paths use the sup-norm distance under the identity time change,
which bounds the Skorokhod J1 distance from above.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .errors import InvalidInput
from .measures import ClaimModel
from .robust_prob import DistanceProfile, worst_case_probability

RCLL = "piecewise_constant_rcll"
LINEAR = "piecewise_linear"

DEFAULT_STEPS_PER_100 = 2**12


def default_steps(T):
    """Default grid size: 2**12 steps per 100 time units, at least 16."""
    return max(16, int(round(DEFAULT_STEPS_PER_100 * T / 100.0)))


@dataclass(frozen=True)
class PathGrid:
    """A path sampled on a grid of times in [0, T].

    Attributes:
        times: Strictly increasing, starting at 0.
        values: Shape (n,) for real paths or (n, 2) for planar ones.
        kind: ``piecewise_constant_rcll`` or ``piecewise_linear``.
    """

    times: np.ndarray
    values: np.ndarray
    kind: str = LINEAR

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise InvalidInput("times must be a nonempty 1-D array")
        if t[0] != 0.0:
            raise InvalidInput("times must start at 0")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise InvalidInput("times must be strictly increasing")
        if v.shape[0] != t.size or v.ndim not in (1, 2):
            raise InvalidInput("values must match times in length")
        if self.kind not in (RCLL, LINEAR):
            raise InvalidInput(f"unknown path kind {self.kind!r}")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def dim(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def at(self, s, left=False):
        """Path values at times ``s``; ``left=True`` gives left limits."""
        s = np.asarray(s, dtype=float)
        t, v = self.times, self.values
        if self.kind == LINEAR:
            if v.ndim == 1:
                return np.interp(s, t, v)
            return np.column_stack([np.interp(s, t, v[:, k]) for k in range(v.shape[1])])
        side = "left" if left else "right"
        idx = np.clip(np.searchsorted(t, s, side=side) - 1, 0, t.size - 1)
        return v[idx]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            if self.dim == 1:
                w.writerow(["t", "value"])
                for ti, vi in zip(self.times, self.values):
                    w.writerow([repr(float(ti)), repr(float(vi))])
            else:
                w.writerow(["t", "v1", "v2"])
                for ti, vi in zip(self.times, self.values):
                    w.writerow([repr(float(ti)), repr(float(vi[0])), repr(float(vi[1]))])


def sup_distance(x: PathGrid, y: PathGrid) -> float:
    """sup_t ||x(t) - y(t)|| over [0, T], exact for both path kinds.

    On each cell of the merged grid the difference is affine (or
    constant), so the sup is attained at cell ends; step paths also
    contribute their left limits.
    """
    if not math.isclose(x.T, y.T, rel_tol=1e-12, abs_tol=1e-12):
        raise InvalidInput(f"horizons differ: {x.T} vs {y.T}")
    grid = np.union1d(x.times, y.times)
    grid = grid[grid <= min(x.T, y.T)]
    diffs = [x.at(grid) - y.at(grid)]
    if RCLL in (x.kind, y.kind):
        diffs.append(x.at(grid, left=True) - y.at(grid, left=True))
    best = 0.0
    for d in diffs:
        norms = np.abs(d) if d.ndim == 1 else np.sqrt(np.sum(d * d, axis=1))
        best = max(best, float(np.max(norms)))
    return best


def j1_upper_bound(x: PathGrid, y: PathGrid, p: float = 1.0) -> float:
    """(sup_t ||x(t) - y(t)||) ** p, an upper bound on d_J1(x, y) ** p."""
    if p < 1:
        raise InvalidInput("p must be >= 1")
    return sup_distance(x, y) ** p


# ---------------------------------------------------------------- simulation


def simulate_brownian(T, n_steps, drift=0.0, vol=1.0, seed=None, dim=1, rng=None) -> PathGrid:
    """vol * B(t) - drift * t on a uniform grid, linearly interpolated.

    For ``dim=2`` the drift may be a 2-vector and ``vol`` a 2x2 matrix
    applied to independent standard Brownian motions.
    """
    if n_steps < 1 or T <= 0:
        raise InvalidInput("need n_steps >= 1 and T > 0")
    rng = rng if rng is not None else np.random.default_rng(seed)
    t = np.linspace(0.0, T, n_steps + 1)
    dt = T / n_steps
    if dim == 1:
        if vol < 0:
            raise InvalidInput("vol must be >= 0")
        inc = rng.standard_normal(n_steps) * math.sqrt(dt)
        B = np.concatenate([[0.0], np.cumsum(inc)])
        return PathGrid(t, vol * B - drift * t, LINEAR)
    vol = np.asarray(vol, dtype=float)
    inc = rng.standard_normal((n_steps, dim)) * math.sqrt(dt)
    B = np.vstack([np.zeros(dim), np.cumsum(inc, axis=0)])
    return PathGrid(t, B @ vol.T - np.outer(t, np.asarray(drift, dtype=float)), LINEAR)


def _chunks(n_paths, chunk):
    done = 0
    while done < n_paths:
        k = min(chunk, n_paths - done)
        yield done, k
        done += k


def simulate_loss_sups(n_paths, T, n_steps, scale, drift, seed, chunk=2048):
    """Per-path sup_t(scale * B(t) - drift * t) over a uniform grid.

    Chunks draw from independent child streams of one master seed so the
    result does not depend on memory layout beyond ``chunk``.
    """
    ss = np.random.SeedSequence(seed)
    t = np.linspace(0.0, T, n_steps + 1)[1:]
    sq = math.sqrt(T / n_steps)
    out = np.empty(n_paths)
    n_chunks = -(-n_paths // chunk)
    for child, (start, k) in zip(ss.spawn(n_chunks), _chunks(n_paths, chunk)):
        rng = np.random.default_rng(child)
        B = np.cumsum(rng.standard_normal((k, n_steps)) * sq, axis=1)
        L = scale * B - drift * t
        out[start : start + k] = np.maximum(L.max(axis=1), 0.0)
    return out


def simulate_compound_poisson_risk(model: ClaimModel, claims, u, seed=None, n_grid=None, rng=None) -> PathGrid:
    """Reserve u + (1 + eta) nu m1 t - sum of claims up to t.

    The path is returned as a right-continuous step function on a grid
    holding the jump times plus ``n_grid`` uniform points, so premium
    drift is resolved at the grid spacing.

    Args:
        model: Claim model (rate, loading, m1, horizon).
        claims: Either an array to resample from or a callable
            ``(rng, n) -> claims``.
        u: Initial reserve.
        seed: Seed for numpy's default generator.
        n_grid: Uniform points besides the jump times.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    T = model.horizon
    n_grid = n_grid or default_steps(T)
    n_jumps = rng.poisson(model.claim_rate * T)
    jt = np.sort(rng.uniform(0.0, T, n_jumps))
    sizes = draw_claims(claims, rng, n_jumps)
    grid = np.union1d(np.linspace(0.0, T, n_grid + 1), jt)
    cum = np.concatenate([[0.0], np.cumsum(sizes)])
    paid = cum[np.searchsorted(jt, grid, side="right")]
    premium = (1.0 + model.safety_loading) * model.claim_rate * model.m1
    return PathGrid(grid, u + premium * grid - paid, RCLL)


def draw_claims(claims, rng, n):
    if callable(claims):
        return np.asarray(claims(rng, n), dtype=float)
    arr = np.asarray(claims, dtype=float)
    return arr[rng.integers(arr.size, size=n)]


# --------------------------------------------------------------- 1-D ruin


@dataclass(frozen=True)
class RuinSet1D:
    """Paths whose loss sup_t(scale x(t) - drift t) reaches ``level``."""

    level: float
    scale: float
    drift: float
    p: float = 2.0

    def __post_init__(self):
        if self.p < 1:
            raise InvalidInput("p must be >= 1")

    @classmethod
    def from_model(cls, model: ClaimModel, u):
        return cls(float(u), model.volatility, model.drift, model.p)


def drifted_sup(x: PathGrid, scale, drift) -> float:
    """sup_t(scale x(t) - drift t); the sup sits at grid nodes."""
    return float(np.max(scale * x.values - drift * x.times))


def ruin_set_distance_1d(x: PathGrid, rset: RuinSet1D) -> float:
    """(u - sup_t(scale x(t) - drift t))^p, or 0 once the path is in the set."""
    gap = rset.level - drifted_sup(x, rset.scale, rset.drift)
    return 0.0 if gap <= 0 else gap**rset.p


def ruin_distances_from_sups(sups, level, p):
    gap = level - np.asarray(sups, dtype=float)
    return np.where(gap <= 0, 0.0, np.abs(gap) ** p)


def brownian_crossing_prob(u, drift, vol, T):
    """P(sup_{t <= T}(vol B(t) - drift t) >= u) by the reflection principle.

    Valid for any real drift. Vectorized over ``u``; u <= 0 gives 1.
    """
    u = np.asarray(u, dtype=float)
    if vol < 0 or T <= 0:
        raise InvalidInput("need vol >= 0 and T > 0")
    if vol == 0:
        out = np.where(u <= np.maximum(0.0, -drift * T), 1.0, 0.0)
        return out if out.ndim else float(out)
    s = vol * math.sqrt(T)
    up = np.maximum(u, 0.0)
    first = ndtr(-(up + drift * T) / s)
    with np.errstate(over="ignore"):
        second = np.exp(-2.0 * drift * up / vol**2 + log_ndtr(-(up - drift * T) / s))
    out = np.where(u <= 0, 1.0, np.minimum(1.0, first + second))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class RobustRuin:
    """Worst-case ruin summary at one level.

    Attributes:
        u: Initial reserve.
        psi_b: Baseline crossing probability at u.
        u_tilde: Reduced level u - (1/lam*)^(1/p).
        psi_rob: Crossing probability at the reduced level.
        lambda_star: Optimal multiplier.
        dual_value: Exact worst-case probability over the sample measure.
    """

    u: float
    psi_b: float
    u_tilde: float
    psi_rob: float
    lambda_star: float
    dual_value: float


def psi_rob_1d(u, model: ClaimModel, delta, mu_samples) -> RobustRuin:
    """Worst-case ruin probability over the transport ball.

    Args:
        u: Initial reserve.
        model: Claim model giving scale, drift, horizon and p.
        delta: Budget in reserve units raised to p.
        mu_samples: Baseline paths: a list of standard-Brownian
            :class:`PathGrid` objects, or an array of precomputed loss
            sups sup_t(sqrt(nu m2) B(t) - eta nu m1 t).
    """
    if delta < 0:
        raise InvalidInput("delta must be >= 0")
    if isinstance(mu_samples, np.ndarray):
        sups = mu_samples
    else:
        sups = np.array([drifted_sup(x, model.volatility, model.drift) for x in mu_samples])
    prof = DistanceProfile(ruin_distances_from_sups(sups, u, model.p), np.ones(sups.size))
    wc = worst_case_probability(prof, delta)
    psi_b = brownian_crossing_prob(u, model.drift, model.volatility, model.horizon)
    lam = wc.lambda_star
    if lam == 0.0:
        u_tilde, psi_rob = -math.inf, 1.0
    else:
        u_tilde = u - (1.0 / lam) ** (1.0 / model.p) if math.isfinite(lam) else float(u)
        psi_rob = brownian_crossing_prob(u_tilde, model.drift, model.volatility, model.horizon)
    return RobustRuin(float(u), float(psi_b), float(u_tilde), float(psi_rob), float(lam), wc.value)


# --------------------------------------------------------------- 2-D ruin


@dataclass(frozen=True)
class RuinSet2D:
    """Paths that bring beta x1 + x2 or x1 + beta x2 down to ``level``."""

    beta: float
    level: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidInput("beta must lie in [0, 1]")


def transfer_infima(x: PathGrid, beta):
    """(inf_t(beta x1 + x2), inf_t(x1 + beta x2)) over the grid nodes."""
    v = x.values
    if v.ndim != 2 or v.shape[1] != 2:
        raise InvalidInput("need a planar path")
    return float(np.min(beta * v[:, 0] + v[:, 1])), float(np.min(v[:, 0] + beta * v[:, 1]))


def distance_from_infima(i1, i2, beta):
    i1 = np.asarray(i1, dtype=float)
    i2 = np.asarray(i2, dtype=float)
    m = np.minimum(i1, i2)
    out = np.where(m <= 0, 0.0, m * m / (1.0 + beta * beta))
    return out if out.ndim else float(out)


def ruin_set_distance_2d(x: PathGrid, beta) -> float:
    """Squared sup-norm distance from a planar path to the transfer ruin set."""
    RuinSet2D(beta)
    return distance_from_infima(*transfer_infima(x, beta), beta)


def inflated_level_2d(lam_star, beta) -> float:
    """Inflated level sqrt((1 + beta**2) / lam*); inf signals saturation."""
    if lam_star <= 0:
        return math.inf
    return math.sqrt((1.0 + beta * beta) / lam_star)


@dataclass(frozen=True)
class PlanarReserve:
    """dR = m dt + Sigma dB started at u * b.

    Attributes:
        drift: 2-vector m.
        cov_factor: 2x2 matrix Sigma applied to standard Brownian motion.
        split: 2-vector b of initial capital shares.
        horizon: T.
    """

    drift: tuple = (-0.1, -0.1)
    cov_factor: tuple = ((1.0, 0.0), (0.0, 1.0))
    split: tuple = (0.5, 0.5)
    horizon: float = 100.0

    def __post_init__(self):
        S = np.asarray(self.cov_factor, dtype=float)
        if S.shape != (2, 2):
            raise InvalidInput("cov_factor must be 2x2")
        try:
            np.linalg.cholesky(S @ S.T)
        except np.linalg.LinAlgError:
            raise InvalidInput("covariance is not positive definite") from None
        if np.linalg.matrix_rank(S) < 2:
            raise InvalidInput("covariance is not positive definite")


def simulate_transfer_infima(model: PlanarReserve, beta, n_paths, n_steps, seed, chunk=1024):
    """Infima of both transfer combinations for the zero-capital reserve.

    For initial capital u the infima are u * (beta b1 + b2) + I1 and
    u * (b1 + beta b2) + I2, so one simulation serves every u.
    """
    S = np.asarray(model.cov_factor, dtype=float)
    m = np.asarray(model.drift, dtype=float)
    T = model.horizon
    t = np.linspace(0.0, T, n_steps + 1)[1:]
    sq = math.sqrt(T / n_steps)
    I1 = np.empty(n_paths)
    I2 = np.empty(n_paths)
    ss = np.random.SeedSequence(seed)
    n_chunks = -(-n_paths // chunk)
    for child, (start, k) in zip(ss.spawn(n_chunks), _chunks(n_paths, chunk)):
        rng = np.random.default_rng(child)
        B = np.cumsum(rng.standard_normal((k, n_steps, 2)) * sq, axis=1)
        Y = B @ S.T + t[None, :, None] * m[None, None, :]
        I1[start : start + k] = np.minimum(0.0, np.min(beta * Y[..., 0] + Y[..., 1], axis=1))
        I2[start : start + k] = np.minimum(0.0, np.min(Y[..., 0] + beta * Y[..., 1], axis=1))
    return I1, I2


def first_passage_prob_2d(model: PlanarReserve, u, beta, level, n_paths, n_steps, seed):
    """Monte Carlo mu(A_(c)) with a 95% binomial half-width.

    Returns:
        (probability, half_width).
    """
    RuinSet2D(beta, level)
    I1, I2 = simulate_transfer_infima(model, beta, n_paths, n_steps, seed)
    b = np.asarray(model.split, dtype=float)
    hit = (u * (beta * b[0] + b[1]) + I1 <= level) | (u * (b[0] + beta * b[1]) + I2 <= level)
    p = float(hit.mean())
    return p, 1.96 * math.sqrt(max(p * (1 - p), 1e-300) / n_paths)


def worst_case_ruin_2d(I1, I2, model: PlanarReserve, u, beta, delta):
    """Exact worst-case probability of the transfer ruin set at capital u."""
    b = np.asarray(model.split, dtype=float)
    d = distance_from_infima(u * (beta * b[0] + b[1]) + I1, u * (b[0] + beta * b[1]) + I2, beta)
    return worst_case_probability(DistanceProfile(d, np.ones(d.size)), delta)


def capital_requirement_2d(I1, I2, model: PlanarReserve, beta, delta, target=0.01, u_hi=None, xtol=1e-6):
    """Smallest capital u whose worst-case ruin probability is <= target.

    Bisection on u; the worst-case probability is nonincreasing in u.

    Returns:
        The required capital, or inf if even ``u_hi`` does not reach the
        target.
    """
    f = lambda u: worst_case_ruin_2d(I1, I2, model, u, beta, delta).value
    lo = 0.0
    if f(lo) <= target:
        return 0.0
    hi = u_hi if u_hi is not None else 1.0
    while f(hi) > target:
        hi *= 2.0
        if hi > 1e9 or (u_hi is not None and hi > u_hi):
            return math.inf
    while hi - lo > xtol * (1.0 + hi):
        mid = 0.5 * (lo + hi)
        if f(mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi
