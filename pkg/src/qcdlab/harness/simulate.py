"""Monte Carlo estimators of CUSUM delay/eagerness.

Replications are simulated in fixed-size blocks.  Block ``b`` draws from
``SeedSequence(entropy=seed, spawn_key=(b,))`` and block statistics are
folded in block order, so results do not depend on the worker count.  All
thresholds share the same sample paths (common random numbers).
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..asymptotics import TwistedGaussian, _Tilt, solve_theta0
from ..errors import InvalidModelError
from ..model import law_expectation

BLOCK = 10_000
CENSOR_WARN = 0.01
# change time of a POMDP path that has not been absorbed yet
NOT_YET = 2**62


def block_seed(seed, b):
    return np.random.SeedSequence(entropy=seed, spawn_key=(b,))


def block_sizes(reps, block=BLOCK):
    full, rest = divmod(reps, block)
    return [block] * full + ([rest] if rest else [])


def seed_manifest(seed, reps, block=BLOCK):
    return [
        {"block": b, "entropy": int(seed), "spawn_key": [b], "size": n}
        for b, n in enumerate(block_sizes(reps, block))
    ]


@dataclass(frozen=True)
class CostEstimate:
    H: float
    kappa: float
    MDD: float
    MDD_stderr: float
    MDE: float
    MDE_stderr: float
    J: float
    J_stderr: float
    reps: int
    censored: int

    @property
    def censor_warning(self):
        return self.censored > CENSOR_WARN * self.reps


def _model_m1(model, F):
    return law_expectation(model, F, 1)


def _simulate_block(model, F, law, H, horizon_mult, m1, seed, b, size):
    """Crossing times of every threshold in ``H`` (sorted) for one block of paths."""
    rng = np.random.default_rng(block_seed(seed, b))
    pomdp = model.variant == "pomdp"
    if pomdp:
        tau = np.full(size, NOT_YET)
    else:
        tau = law.sample(rng, size).astype(np.int64)
    state = model.init_batch(rng, size)
    extra = np.ceil(horizon_mult * H / m1).astype(np.int64)
    cross = np.full((H.size, size), -1, dtype=np.int64)
    xi = np.zeros(size)
    # Y_0 never enters the statistic, so the loop starts at n = 1
    n = 0
    while True:
        n += 1
        state, y, absorbed = model.step_batch(rng, state, None if pomdp else n < tau)
        if pomdp:
            tau = np.where((tau == NOT_YET) & absorbed, n, tau)
        f = F(y) if model.variant != "finite_markov" else F.table(model)[y]
        xi = np.maximum(0.0, xi + f)
        newly = (cross < 0) & (xi[None, :] >= H[:, None])
        cross[newly] = n
        # finished once the top threshold is crossed (and, for POMDP paths, the
        # change has happened so eagerness is known) or the horizon has passed
        known = tau != NOT_YET
        done = known & ((cross[-1] >= 0) | (n >= tau + extra[-1]))
        if done.all():
            break
    return tau, cross, extra


def _block_stats(tau, cross, extra, kappa):
    """Per-threshold sufficient statistics (sums) for one block."""
    out = []
    for i in range(cross.shape[0]):
        ts = cross[i]
        censored = (ts < 0) | (ts > tau + extra[i])
        ok = ~censored
        d = np.maximum(ts - tau, 0).astype(float)
        e = np.where(censored, 0.0, np.maximum(tau - ts, 0)).astype(float)
        du = d[ok]
        eu = e[ok]
        out.append(
            np.array(
                [
                    ts.size,
                    ok.sum(),
                    e.sum(),
                    (e**2).sum(),
                    du.sum(),
                    (du**2).sum(),
                    (du * eu).sum(),
                    eu.sum(),
                ]
            )
        )
    return np.array(out)


def _finish(H, kappa, s):
    n, nu, se, se2, sd, sd2, sde, seu = s
    mde = se / n
    var_e = max(se2 / n - mde**2, 0.0) * n / max(n - 1, 1)
    mdd = sd / nu if nu else math.nan
    var_d = max(sd2 / nu - mdd**2, 0.0) * nu / max(nu - 1, 1) if nu else math.nan
    cov = (sde / nu - mdd * seu / nu) if nu else 0.0
    se_mdd = math.sqrt(var_d / nu) if nu else math.nan
    se_mde = math.sqrt(var_e / n)
    var_j = var_d / nu + kappa**2 * var_e / n + 2 * kappa * cov / n if nu else math.nan
    return CostEstimate(
        H=float(H),
        kappa=float(kappa),
        MDD=float(mdd),
        MDD_stderr=float(se_mdd),
        MDE=float(mde),
        MDE_stderr=float(se_mde),
        J=float(mdd + kappa * mde),
        J_stderr=math.sqrt(max(var_j, 0.0)),
        reps=int(n),
        censored=int(n - nu),
    )


def mc_estimate_cost(
    model,
    F,
    H,
    kappa,
    law=None,
    reps=10_000,
    seed=0,
    horizon_mult=10.0,
    block=BLOCK,
    workers=1,
):
    """Plain Monte Carlo estimates of (MDD, MDE, J) for each threshold and kappa.

    Returns a list of CostEstimate ordered by kappa then H.  Runs that have
    not stopped ``ceil(horizon_mult * H / m1)`` steps after the change are
    censored: dropped from MDD and counted.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    H = np.sort(np.atleast_1d(np.asarray(H, dtype=float)))
    if (H <= 0).any():
        raise ValueError("thresholds must be positive")
    kappas = np.atleast_1d(np.asarray(kappa, dtype=float))
    if model.variant == "pomdp":
        law = None
    elif law is None:
        raise ValueError("a change-time law is required")
    m1 = _model_m1(model, F)
    if not m1 > 0:
        raise ValueError("post-change drift must be positive")
    sizes = block_sizes(reps, block)

    def run(b):
        return _simulate_block(model, F, law, H, horizon_mult, m1, seed, b, sizes[b])

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            blocks = list(ex.map(run, range(len(sizes))))
    else:
        blocks = [run(b) for b in range(len(sizes))]
    results = []
    for k in kappas:
        total = None
        for tau, cross, extra in blocks:
            s = _block_stats(tau, cross, extra, k)
            total = s if total is None else total + s
        for i, h in enumerate(H):
            est = _finish(h, k, total[i])
            if est.censor_warning:
                warnings.warn(f"H={h}: {est.censored} of {est.reps} runs censored; MDD is biased low")
            results.append(est)
    return results


# ---------------------------------------------------------------------------
# hitting-time estimator of MDE


@dataclass(frozen=True)
class HittingEstimate:
    MDE: float
    stderr: float
    reps: int
    hits: int
    tilted: bool


class _PreWalk:
    """Pre-change increments F(Y_n), optionally under the theta0-twisted law.

    ``step`` returns (state, increments, log likelihood-ratio increments).
    """

    def __init__(self, model, F, tilt):
        self.model, self.F, self.tilt = model, F, tilt
        v = model.variant
        self.theta0 = 0.0
        if tilt:
            if v == "pomdp":
                raise InvalidModelError("tilting is not available for POMDP models")
            self.theta0 = solve_theta0(model, F)
            self._tl = _Tilt(model, F, self.theta0)
        if v == "iid_discrete":
            pmf = self._tl.weights if tilt else model.pmf0
            self._cdf = np.cumsum(pmf)
            self._vals = F.table(model)
        elif v == "iid_gaussian":
            if tilt:
                if not isinstance(self._tl.law, TwistedGaussian):
                    raise InvalidModelError("tilting needs a statistic of degree <= 2")
                self._mean, self._var = self._tl.law
            else:
                self._mean, self._var = model.pre_mean, model.pre_var
        elif v == "finite_markov":
            N = model.N
            self._vals = F.table(model).reshape(N, N)
            if tilt:
                pf = self._tl.pf
                K = self._tl.kernel
                Pc = K * pf.v[None, :] / (pf.lam * pf.v[:, None])
                self._logv = np.log(pf.v)
                self._loglam = self._tl.logz
            else:
                Pc = model.P0
            self._cdf = np.cumsum(Pc / Pc.sum(axis=1, keepdims=True), axis=1)
            self._mu = np.cumsum(model.mu0)
        elif v == "pomdp":
            rep = model.report
            self._X0 = np.array(model.X0)
            self._cdf = np.cumsum(rep.P_check, axis=1)
            self._qs = np.cumsum(rep.quasi_stationary)
            self._vals = F.table(model)[model.h[self._X0]]
        else:
            raise InvalidModelError(f"unsupported model variant {v!r}")

    def init(self, rng, size):
        v = self.model.variant
        if v == "finite_markov":
            return np.minimum(np.searchsorted(self._mu, rng.random(size), side="right"), self.model.N - 1)
        if v == "pomdp":
            return np.minimum(np.searchsorted(self._qs, rng.random(size), side="right"), self._X0.size - 1)
        return None

    def _next(self, cdf_rows, u):
        return np.minimum((u[:, None] >= cdf_rows).sum(axis=1), cdf_rows.shape[1] - 1)

    def step(self, rng, state, size):
        v = self.model.variant
        if v == "iid_discrete":
            y = np.minimum(np.searchsorted(self._cdf, rng.random(size), side="right"), self._cdf.size - 1)
            f = self._vals[y]
            return state, f, -self.theta0 * f
        if v == "iid_gaussian":
            y = self._mean + math.sqrt(self._var) * rng.standard_normal(size)
            f = self.F(y)
            return state, f, -self.theta0 * f
        if v == "finite_markov":
            z = self._next(self._cdf[state], rng.random(state.size))
            f = self._vals[state, z]
            lw = -self.theta0 * f
            if self.tilt:
                lw = lw + self._loglam + self._logv[state] - self._logv[z]
            return z, f, lw
        z = self._next(self._cdf[state], rng.random(state.size))
        return z, self._vals[z], np.zeros(state.size)


def _max_steps(law, tol=1e-15):
    """Smallest n with tail_sum(n) <= tol; truncation bias is below tol."""
    r = law.rhos.min()
    n = math.ceil(math.log(tol * r) / math.log1p(-r))
    return max(n, 1)


def _cycles(walk, rng, size, H, zs, max_len=10**6):
    """One CUSUM cycle from Xi = 0 per path: ends at Xi >= H (hit) or back at 0.

    Returns (z^T per component, hit flags, log-weights at the end).
    """
    state = walk.init(rng, size)
    xi = np.zeros(size)
    logw = np.zeros(size)
    length = np.zeros(size)
    hit = np.zeros(size, dtype=bool)
    alive = np.ones(size, dtype=bool)
    for n in range(1, max_len + 1):
        state, f, lw = walk.step(rng, state, size)
        xi = np.where(alive, np.maximum(0.0, xi + f), xi)
        logw = np.where(alive, logw + lw, logw)
        up = alive & (xi >= H)
        down = alive & (xi <= 0.0)
        hit |= up
        length[up | down] = n
        alive &= ~(up | down)
        if not alive.any():
            break
    return zs[None, :] ** length[:, None], hit, logw


def _regenerative_mde(model, F, H, law, reps, seed, block):
    """Tilted estimator for iid models built on regeneration at Xi = 0.

    With T the cycle length, E[z^sigma] = A / (1 - B) where A = E[z^T; hit]
    (rare: sampled under the theta0-twisted law, weight exp(-theta0 Xi_T)
    <= exp(-theta0 H)) and B = E[z^T; return to 0] (sampled plainly).
    """
    tilted, plain = _PreWalk(model, F, True), _PreWalk(model, F, False)
    zs = 1.0 - law.rhos
    coef = law.weights * zs / law.rhos
    a_parts, b_parts = [], []
    hits = 0
    for b, size in enumerate(block_sizes(reps, block)):
        rng = np.random.default_rng(block_seed(seed, b))
        zt, hit, logw = _cycles(tilted, rng, size, H, zs)
        a_parts.append(np.where(hit[:, None], zt * np.exp(logw)[:, None], 0.0))
        hits += int(hit.sum())
        zt, hit, _ = _cycles(plain, rng, size, H, zs)
        b_parts.append(np.where(hit[:, None], 0.0, zt))
    a, bb = np.concatenate(a_parts), np.concatenate(b_parts)
    A, B = a.mean(axis=0), bb.mean(axis=0)
    mde = float(coef @ (A / (1.0 - B)))
    # delta method; the two samples are independent
    gA = coef / (1.0 - B)
    gB = coef * A / (1.0 - B) ** 2
    cA = np.atleast_2d(np.cov(a, rowvar=False))
    cB = np.atleast_2d(np.cov(bb, rowvar=False))
    var = gA @ cA @ gA / reps + gB @ cB @ gB / reps
    return HittingEstimate(mde, math.sqrt(max(var, 0.0)), reps, hits, True)


def mde_hitting_estimator(model, F, H, law=None, reps=10_000, seed=0, use_tilting=False, block=BLOCK):
    """MDE = E[g(sigma_H)] with sigma_H the pre-change hitting time of CUSUM.

    g(sigma) = sum_{n >= sigma} P{tau_a > n}, closed form for geometric
    mixtures.  With ``use_tilting`` the rare crossing is sampled under the
    theta0-twisted law and reweighted by the likelihood ratio: iid models use
    regenerative cycles (``reps`` tilted plus ``reps`` plain cycles), Markov
    models reweight whole paths.  For POMDP models the walk starts from the
    quasi-stationary law and evolves under the Doob-transformed kernel; the
    change law defaults to geometric(1 - lambda).
    """
    if model.variant == "pomdp" and law is None:
        law = model.change_law()
    if use_tilting and model.variant in ("iid_discrete", "iid_gaussian"):
        return _regenerative_mde(model, F, H, law, reps, seed, block)
    walk = _PreWalk(model, F, use_tilting)
    n_max = _max_steps(law)
    tot = tot2 = 0.0
    hits = 0
    for b, size in enumerate(block_sizes(reps, block)):
        rng = np.random.default_rng(block_seed(seed, b))
        state = walk.init(rng, size)
        xi = np.zeros(size)
        logw = np.zeros(size)
        sigma = np.full(size, np.inf)
        alive = np.ones(size, dtype=bool)
        for n in range(1, n_max + 1):
            state, f, lw = walk.step(rng, state, size)
            xi = np.maximum(0.0, xi + f)
            logw = np.where(alive, logw + lw, logw)
            hit = alive & (xi >= H)
            sigma[hit] = n
            alive &= ~hit
            if not alive.any():
                break
        g = law.tail_sum(sigma)
        val = np.where(np.isfinite(sigma), g * np.exp(logw), 0.0)
        hits += int(np.isfinite(sigma).sum())
        tot += val.sum()
        tot2 += (val**2).sum()
    mean = tot / reps
    var = max(tot2 / reps - mean**2, 0.0) * reps / max(reps - 1, 1)
    if hits == 0 and not use_tilting:
        warnings.warn("no threshold crossings observed; enable tilting for large H")
    return HittingEstimate(float(mean), math.sqrt(var / reps), reps, hits, use_tilting)
