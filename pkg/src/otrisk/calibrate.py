"""Drawdown embedding of a compound Poisson process in Brownian motion.

Given a Brownian path B and claims X_1, X_2, ..., the stopping times

    tau_{j+1} = inf{ s >= tau_j : max_{[tau_j, s]} B - B(s) = X_{j+1} }

cut B into excursions. With S~ the running max inside the current
excursion, Psi_j the claim total and A = Psi_N + S~ (continuous and
nondecreasing), the time change sigma(t) = inf{s : A(s) = m1 t} turns
S~ into Z(t) = m1 t - Psi_{N(t)}. Flipping signs gives the compensated
compound Poisson process coupled with -B. The sup distance between the
two reserve paths built from this coupling estimates the transport
budget delta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import InvalidInput, NeedMorePath, ResolutionError
from .measures import ClaimModel
from .paths import LINEAR, PathGrid, j1_upper_bound

EPS_FRACTION = 1e-9
CLOCKS = ("brownian", "identity")


class BrownianSource:
    """Standard Brownian motion on a uniform grid, simulated lazily.

    Args:
        dt: Grid step.
        rng: numpy Generator used for extensions. ``None`` makes the
            source fixed: running past ``values`` raises NeedMorePath.
        values: Optional initial grid values starting with B(0) = 0.
        block: Steps added per extension.
    """

    def __init__(self, dt, rng=None, values=None, block=4096):
        if dt <= 0:
            raise InvalidInput("dt must be > 0")
        self.dt = float(dt)
        self.rng = rng
        self.block = int(block)
        self.values = np.zeros(1) if values is None else np.asarray(values, dtype=float).copy()
        if self.values[0] != 0.0:
            raise InvalidInput("Brownian grid must start at 0")

    def __len__(self):
        return self.values.size

    def ensure(self, n):
        """Make at least ``n`` grid values available."""
        while self.values.size < n:
            if self.rng is None:
                raise NeedMorePath(f"fixed Brownian grid has {self.values.size} points, need {n}")
            k = max(self.block, n - self.values.size)
            inc = self.rng.standard_normal(k) * math.sqrt(self.dt)
            self.values = np.concatenate([self.values, self.values[-1] + np.cumsum(inc)])


@dataclass
class EmbeddingState:
    """Everything produced by one run of the embedding.

    Times ``taus`` and ``B`` live on the Brownian clock; ``jump_times``
    live on the clock of the compound process. Index j refers to the
    j-th embedded claim.

    Attributes:
        dt: Brownian grid step.
        m1: Claim mean used by the time change.
        horizon: Horizon covered on the compound-process clock.
        claims: Embedded claims X_1..X_k.
        taus: Stopping times tau_1..tau_k.
        excursion_max: Running max of B just before each tau_j.
        jump_times: A(tau_j) / m1, the jump epochs of Z.
        sigma_end: sigma(horizon), Brownian time covering the horizon.
        B: Brownian grid values up to the end of the run.
        final_max: Running max of the unfinished last excursion.
        final_start: Start level of the unfinished last excursion.
    """

    dt: float
    m1: float
    horizon: float
    claims: np.ndarray
    taus: np.ndarray
    excursion_max: np.ndarray
    jump_times: np.ndarray
    sigma_end: float
    B: np.ndarray
    final_start: float = 0.0
    final_max: float = 0.0

    @property
    def psi(self):
        """Cumulative claims Psi_1..Psi_k."""
        return np.cumsum(self.claims)

    @property
    def n_jumps(self):
        """Jumps of Z inside [0, horizon]."""
        return int(np.searchsorted(self.jump_times, self.horizon, side="right"))

    def brownian_times(self):
        return np.arange(self.B.size) * self.dt

    def B_at(self, s):
        return np.interp(s, self.brownian_times(), self.B)

    def reconstructed_jumps(self):
        """Claims read back off the Brownian grid: max before tau_j minus B(tau_j)."""
        if self.taus.size == 0:
            return np.zeros(0)
        t = self.brownian_times()
        out = np.empty(self.taus.size)
        start_t, start_v = 0.0, 0.0
        for j, tau in enumerate(self.taus):
            inside = (t > start_t) & (t < tau)
            m = max(start_v, float(self.B[inside].max()) if inside.any() else -np.inf)
            b_tau = float(self.B_at(tau))
            out[j] = m - b_tau
            start_t, start_v = tau, b_tau
        return out

    def running_max_path(self, s_end):
        """Grid times, B and the excursion running max S~ on [0, s_end]."""
        t = self.brownian_times()
        keep = t <= s_end + 1e-12
        t = t[keep]
        B = self.B[keep]
        S = np.empty_like(B)
        bounds = np.concatenate([[0.0], self.taus[self.taus <= s_end]])
        levels = np.concatenate([[0.0], self.B_at(self.taus[self.taus <= s_end])])
        seg = np.searchsorted(bounds, t, side="right") - 1
        for k in range(bounds.size):
            sel = seg == k
            if sel.any():
                S[sel] = np.maximum.accumulate(np.maximum(B[sel], levels[k]))
        return t, B, S

    def max_drawdown(self, s_end):
        """sup over [0, s_end] of S~ - B, exact for the interpolated path."""
        t, B, S = self.running_max_path(s_end)
        nodes = float(np.max(S - B)) if S.size else 0.0
        inside = self.claims[self.taus <= s_end]
        return max(nodes, float(inside.max()) if inside.size else 0.0)

    def z_path(self, horizon=None):
        """Z(t) = Psi_{N(t)} - m1 t on [0, horizon], after the sign flip.

        Linear between jumps; each jump is a ramp of width
        1e-9 * dt, which leaves sup distances exact to that order.
        """
        H = self.horizon if horizon is None else horizon
        grid = np.arange(0.0, H, self.dt)
        jt = self.jump_times[self.jump_times <= H]
        eps = EPS_FRACTION * self.dt
        pre = jt - eps
        times = np.unique(np.concatenate([grid, pre[pre > 0], jt, [H]]))
        n = np.searchsorted(jt, times, side="right")
        cum = np.concatenate([[0.0], np.cumsum(self.claims)])
        return PathGrid(times, cum[n] - self.m1 * times, LINEAR)

    def b_path(self, horizon):
        """-B on the Brownian clock over [0, horizon]."""
        t = self.brownian_times()
        keep = t < horizon
        times = np.concatenate([t[keep], [horizon]])
        return PathGrid(times, -self.B_at(times), LINEAR)

    def s_tilde_path(self, horizon):
        """-S~ on the Brownian clock over [0, horizon], jumps as steep ramps."""
        t, B, S = self.running_max_path(horizon)
        sel = self.taus <= horizon
        taus = self.taus[sel]
        eps = EPS_FRACTION * self.dt
        start = float(self.B_at(taus[-1])) if taus.size else 0.0
        seg = t >= (taus[-1] if taus.size else 0.0)
        end = max(start, float(self.B_at(horizon)), float(B[seg].max()) if seg.any() else -np.inf)
        pts_t = np.concatenate([t, taus - eps, taus, [horizon]])
        pts_v = np.concatenate([S, self.excursion_max[sel], self.B_at(taus), [end]])
        order = np.argsort(pts_t, kind="stable")
        uniq, idx = np.unique(pts_t[order], return_index=True)
        vals = pts_v[order][idx]
        keep = uniq <= horizon
        return PathGrid(uniq[keep], -vals[keep], LINEAR)

    def coupled_paths(self, clock="brownian", horizon=None):
        """The two coupled unit-variance paths on a common horizon.

        ``brownian``: -S~(s) against -B(s); the compound process is read
        through the embedding's own time change.
        ``identity``: Z(t) against -B(t); identity time change.
        """
        H = self.horizon if horizon is None else horizon
        if clock == "brownian":
            return self.s_tilde_path(H), self.b_path(H)
        if clock == "identity":
            return self.z_path(H), self.b_path(H)
        raise InvalidInput(f"unknown clock {clock!r}; choose from {CLOCKS}")


def _claim_iter(claims, rng):
    if callable(claims):
        while True:
            yield float(claims(rng))
    else:
        for x in claims:
            yield float(x)


def skorokhod_embed(brownian: BrownianSource, claims, m1, horizon=None, grid_tol=1e-6, min_resolution=1.0, min_brownian=0.0):
    """Run the drawdown embedding until the horizon is covered.

    Args:
        brownian: Extendable Brownian source (unit variance per time).
        claims: Finite sequence of claims, or a callable ``rng -> claim``
            drawing from ``brownian.rng``.
        m1: Claim mean for the time change.
        horizon: Horizon on the compound-process clock. ``None`` embeds
            every claim of a finite sequence.
        grid_tol: Allowed mismatch between a claim and the drawdown read
            off the interpolated grid at its stopping time.
        min_resolution: A claim below ``min_resolution * sqrt(dt)`` raises
            ResolutionError.
        min_brownian: Also cover this much Brownian time.

    Returns:
        EmbeddingState.

    Raises:
        NeedMorePath: A fixed Brownian grid ran out.
        ResolutionError: A claim is too small for the grid.
    """
    if m1 <= 0:
        raise InvalidInput("m1 must be > 0")
    if horizon is None and callable(claims):
        raise InvalidInput("a horizon is required with a claim sampler")
    dt = brownian.dt
    target = math.inf if horizon is None else m1 * horizon
    it = _claim_iter(claims, brownian.rng)

    taus, xs, maxes, jumps = [], [], [], []
    A = 0.0  # A at the start of the current excursion
    start_level = 0.0
    pos = 0  # excursion starts in cell (pos, pos + 1]
    start_t = 0.0
    sigma_end = None
    final_max = 0.0
    window = 256
    for X in it:
        if not X > 0:
            raise InvalidInput("claims must be > 0")
        if X < min_resolution * math.sqrt(dt):
            raise ResolutionError(f"claim {X:.3g} is below the grid resolution {math.sqrt(dt):.3g}")
        lo = pos + 1
        w = max(window, int(4 * X * X / dt) + 64)
        while True:
            if brownian.rng is None:
                if lo >= len(brownian):
                    raise NeedMorePath("fixed Brownian grid ended before the next stopping time")
                w = min(w, len(brownian) - lo)
            else:
                brownian.ensure(lo + w)
            seg = brownian.values[lo : lo + w]
            rm = np.maximum.accumulate(np.maximum(seg, start_level))
            dd = rm - seg
            hit = np.flatnonzero(dd >= X)
            gain = rm - start_level
            cover = np.flatnonzero(A + gain >= target) if math.isfinite(target) else np.zeros(0, int)
            if cover.size and (not hit.size or cover[0] <= hit[0]):
                k = int(cover[0])
                prev_v = start_level if k == 0 else seg[k - 1]
                prev_t = start_t if k == 0 else (lo + k - 1) * dt
                need = target - A + start_level  # level where A hits the target
                frac = 0.0 if seg[k] == prev_v else (need - prev_v) / (seg[k] - prev_v)
                sigma_end = prev_t + np.clip(frac, 0.0, 1.0) * ((lo + k) * dt - prev_t)
                final_max = float(rm[k])
                break
            if hit.size:
                break
            if brownian.rng is None and lo + w >= len(brownian):
                raise NeedMorePath("fixed Brownian grid ended before the next stopping time")
            w *= 2
        if sigma_end is not None:
            break
        k = int(hit[0])
        M = float(rm[k])
        prev_v = start_level if k == 0 else float(seg[k - 1])
        prev_t = start_t if k == 0 else (lo + k - 1) * dt
        cur_t = (lo + k) * dt
        level = M - X
        # B is decreasing across the crossing cell; interpolate B = M - X
        frac = 1.0 if seg[k] == prev_v else (level - prev_v) / (seg[k] - prev_v)
        frac = float(np.clip(frac, 0.0, 1.0))
        tau = prev_t + frac * (cur_t - prev_t)
        if abs(M - (prev_v + frac * (seg[k] - prev_v)) - X) > grid_tol:
            raise ResolutionError(f"drawdown at tau misses claim {X:.6g} by more than {grid_tol}")
        A += M - start_level
        taus.append(tau)
        xs.append(X)
        maxes.append(M)
        jumps.append(A / m1)
        start_level = level
        start_t = tau
        # the next excursion starts inside cell (lo+k-1, lo+k] unless tau is the node
        pos = lo + k if tau >= cur_t else lo + k - 1
    else:
        if horizon is not None:
            raise InvalidInput("claim sequence ran out before covering the horizon")
        sigma_end = start_t

    need_steps = int(math.ceil(max(sigma_end, min_brownian) / dt)) + 2
    brownian.ensure(need_steps)
    H = horizon if horizon is not None else (jumps[-1] if jumps else 0.0)
    return EmbeddingState(
        dt=dt,
        m1=float(m1),
        horizon=float(H),
        claims=np.asarray(xs, dtype=float),
        taus=np.asarray(taus, dtype=float),
        excursion_max=np.asarray(maxes, dtype=float),
        jump_times=np.asarray(jumps, dtype=float),
        sigma_end=float(sigma_end),
        B=brownian.values[:need_steps].copy(),
        final_start=float(start_level),
        final_max=float(final_max),
    )


def coupling_cost(z: PathGrid, b: PathGrid, model: ClaimModel) -> float:
    """Reserve-scale cost of a coupled pair of unit-variance paths.

    With unit-rate normalized paths on [0, nu T], the reserves are
    R(t) = eta nu m1 t - sqrt(m2) z(nu t) and the same with b, so the
    cost is j1_upper_bound(R, R_B, p) on [0, T].
    """
    nu = model.claim_rate
    scale = math.sqrt(model.m2)

    def reserve(x):
        t = x.times / nu
        v = model.drift * t - scale * x.values
        return PathGrid(t, v, x.kind)

    return j1_upper_bound(reserve(z), reserve(b), model.p)


@dataclass(frozen=True)
class DeltaEstimate:
    """Transport budget estimated from simulated couplings.

    Attributes:
        delta_hat: Upper end of the confidence interval on the mean cost
            (reserve units, raised to p).
        ci: (lower, upper) confidence interval.
        ci_halfwidth: Half-width of that interval.
        n: Replications.
        mean_cost: Sample mean of the costs.
        sd: Sample standard deviation.
        seed: Master seed.
        confidence: Two-sided confidence level.
        clock: Coupling clock used.
        costs: Per-replication costs.
    """

    delta_hat: float
    ci: tuple
    ci_halfwidth: float
    n: int
    mean_cost: float
    sd: float
    seed: int | None
    confidence: float
    clock: str = "brownian"
    costs: tuple = ()

    def to_dict(self):
        return {
            "delta_hat": self.delta_hat,
            "ci": [self.ci[0], self.ci[1]],
            "n": self.n,
            "mean_cost": self.mean_cost,
            "sd": self.sd,
            "seed": self.seed,
        }


def delta_from_costs(costs, confidence=0.95, seed=None, clock="brownian") -> DeltaEstimate:
    """CLT interval on the mean cost; delta_hat is its upper end."""
    c = np.asarray(costs, dtype=float)
    if c.size < 2:
        raise InvalidInput("need at least two costs")
    if not 0 < confidence < 1:
        raise InvalidInput("confidence must be in (0, 1)")
    mean = float(np.mean(c))
    sd = float(np.std(c, ddof=1)) if np.ptp(c) > 0 else 0.0
    z = float(norm.ppf(0.5 + confidence / 2.0))
    half = z * sd / math.sqrt(c.size)
    return DeltaEstimate(mean + half, (mean - half, mean + half), half, int(c.size), mean, sd, seed, confidence, clock, tuple(c.tolist()))


def embed_replication(rng, model: ClaimModel, claims, dt):
    """One embedding on the unit-rate normalized clock covering nu T."""
    root = math.sqrt(model.m2)
    H = model.claim_rate * model.horizon
    if callable(claims):
        draw = lambda g: claims(g, 1)[0] / root
    else:
        arr = np.asarray(claims, dtype=float) / root
        draw = lambda g: arr[g.integers(arr.size)]
    src = BrownianSource(dt, rng, block=max(4096, int(H / dt) + 1))
    return skorokhod_embed(src, draw, model.m1 / root, horizon=H, min_brownian=H)


def estimate_delta(n_replications, model: ClaimModel, claims, confidence=0.95, seed=0, dt=0.01, clock="brownian") -> DeltaEstimate:
    """Estimate the transport budget from simulated embeddings.

    Claims are normalized by sqrt(m2) from ``model`` and embedded on the
    unit-rate clock over [0, nu T]; each replication's reserve-scale cost
    enters a CLT interval whose upper end is returned as delta_hat.

    Args:
        n_replications: At least 30.
        model: Claim model; m1 and m2 should be the sample moments.
        claims: Array to resample from, or ``(rng, n) -> claims``.
        confidence: Two-sided level of the interval.
        seed: Master seed; replication i uses child stream i.
        dt: Brownian grid step on the normalized clock.
        clock: ``brownian`` or ``identity`` (see
            :meth:`EmbeddingState.coupled_paths`).
    """
    if n_replications < 30:
        raise InvalidInput("need at least 30 replications")
    if clock not in CLOCKS:
        raise InvalidInput(f"unknown clock {clock!r}")
    H = model.claim_rate * model.horizon
    costs = np.empty(n_replications)
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_replications)):
        st = embed_replication(np.random.default_rng(child), model, claims, dt)
        if clock == "brownian":
            costs[i] = (math.sqrt(model.m2) * st.max_drawdown(H)) ** model.p
        else:
            z, b = st.coupled_paths(clock, H)
            costs[i] = coupling_cost(z, b, model)
    return delta_from_costs(costs, confidence, seed, clock)


def brownian_units(delta_reserve, model: ClaimModel) -> float:
    """Convert a squared reserve-scale budget to standard-Brownian units."""
    return delta_reserve / (model.claim_rate * model.m2)
