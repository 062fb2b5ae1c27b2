"""Threshold sweeps: empirical optimal thresholds against the closed forms."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..asymptotics import approx_optimal_threshold, eagerness_curve, solve_exponents
from .exact import exact_cost_dp, lattice_denominator
from .simulate import mc_estimate_cost


@dataclass(frozen=True)
class SweepRow:
    kappa: float
    H: float
    J_hat: float
    J_stderr: float
    MDD: float
    MDE: float
    censored: int


@dataclass(frozen=True)
class KappaSummary:
    kappa: float
    H_hat: float
    J_hat: float
    local_minimizers: tuple
    H_inf: float
    H_one: float
    J_inf: float
    gap_inf: float  # H_hat - H_inf
    gap_one: float  # H_hat - H_one
    cost_gap: float  # J_hat - J_inf
    delay_ratio: float  # J_hat * m1 / H_hat


@dataclass(eq=False)
class SweepReport:
    method: str
    rows: list
    summaries: list
    m1: float
    theta_plus: float
    extra: dict = field(default_factory=dict)

    @property
    def gap_range(self):
        g = [s.gap_inf for s in self.summaries]
        return max(g) - min(g)

    @property
    def H_inf_range(self):
        h = [s.H_inf for s in self.summaries]
        return max(h) - min(h)

    def to_dict(self):
        return {
            "method": self.method,
            "m1": self.m1,
            "theta_plus": self.theta_plus,
            "gap_range": self.gap_range,
            "H_inf_range": self.H_inf_range,
            "per_kappa": [s.__dict__ | {"local_minimizers": list(s.local_minimizers)} for s in self.summaries],
            **self.extra,
        }


def _local_minima(H, J):
    idx = []
    for i in range(len(J)):
        left = J[i - 1] if i > 0 else math.inf
        right = J[i + 1] if i + 1 < len(J) else math.inf
        if J[i] <= left and J[i] <= right:
            idx.append(i)
    return tuple(float(H[i]) for i in idx)


def _lattice_refine(model, F, law, kappa, lo, hi, q, cache):
    """Exhaustive scan of lattice points in [lo, hi].

    For a lattice statistic J(H) only changes at multiples of 1/q, so this
    is the exact minimiser between the two grid neighbours.
    """
    ks = np.arange(math.ceil(lo * q - 1e-9), math.floor(hi * q + 1e-9) + 1)
    best = None
    for k in ks:
        if k <= 0:
            continue
        H = k / q
        if H not in cache:
            cache[H] = exact_cost_dp(model, F, H, 0.0, law, q=q)
        c = cache[H]
        J = c.MDD + kappa * c.MDE
        if best is None or J < best[1]:
            best = (H, J)
    return best


def sweep_threshold(
    model,
    F,
    law,
    kappas,
    thresholds,
    method="exact",
    reps=10_000,
    seed=0,
    horizon_mult=10.0,
    workers=1,
    rho_a=None,
) -> SweepReport:
    """Minimise the cost over a threshold grid for each kappa and report gaps.

    ``method`` is "exact" (lattice DP with exhaustive refinement between grid
    neighbours) or "mc" (plain Monte Carlo on the grid, all local minimisers
    reported).
    """
    kappas = [float(k) for k in kappas]
    if kappas != sorted(kappas):
        raise ValueError("kappa list must be ascending")
    H = np.asarray(thresholds, dtype=float)
    if (H <= 0).any() or (np.diff(H) <= 0).any():
        raise ValueError("thresholds must be positive and strictly increasing")
    rho_a = law.decay_rate() if rho_a is None else rho_a
    prof = solve_exponents(model, F, rho_a)
    curve = eagerness_curve(prof)
    rows, summaries = [], []
    extra = {}
    if method == "exact":
        q = lattice_denominator(F.table(model))
        cache = {}
        for h in H:
            cache[float(h)] = exact_cost_dp(model, F, h, 0.0, law, q=q)
        extra["lattice_q"] = q
    elif method == "mc":
        ests = mc_estimate_cost(model, F, H, kappas, law, reps, seed, horizon_mult, workers=workers)
        by_key = {(e.kappa, e.H): e for e in ests}
    else:
        raise ValueError(f"unknown method {method!r}")
    for k in kappas:
        if method == "exact":
            J = np.array([cache[float(h)].MDD + k * cache[float(h)].MDE for h in H])
            for h, j in zip(H, J):
                c = cache[float(h)]
                rows.append(SweepRow(k, float(h), float(j), 0.0, c.MDD, c.MDE, 0))
            i = int(np.argmin(J))
            lo = H[max(i - 1, 0)]
            hi = H[min(i + 1, H.size - 1)]
            H_hat, J_hat = _lattice_refine(model, F, law, k, lo, hi, q, cache)
        else:
            es = [by_key[(k, float(h))] for h in H]
            J = np.array([e.J for e in es])
            for e in es:
                rows.append(SweepRow(k, e.H, e.J, e.J_stderr, e.MDD, e.MDE, e.censored))
            i = int(np.argmin(J))
            H_hat, J_hat = float(H[i]), float(J[i])
        ta = approx_optimal_threshold(prof, curve, k) if k > 1 else None
        H_inf = ta.H_inf if ta else 0.0
        H_one = ta.H_one if ta else math.nan
        J_inf = ta.J_inf if ta else 0.0
        summaries.append(
            KappaSummary(
                kappa=k,
                H_hat=float(H_hat),
                J_hat=float(J_hat),
                local_minimizers=_local_minima(H, J),
                H_inf=H_inf,
                H_one=H_one,
                J_inf=J_inf,
                gap_inf=float(H_hat - H_inf),
                gap_one=float(H_hat - H_one),
                cost_gap=float(J_hat - J_inf),
                delay_ratio=float(J_hat * prof.m1 / H_hat),
            )
        )
    return SweepReport(method, rows, summaries, prof.m1, prof.theta_plus, extra)
