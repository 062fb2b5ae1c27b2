"""Exact MDD/MDE for lattice-valued statistics on iid discrete models.

The CUSUM statistic lives on {0, 1/q, 2/q, ...}; below the threshold it is a
finite substochastic chain, so hitting-time functionals reduce to sparse
linear solves.  Conditioning on the geometric phase of the change time turns
the eagerness sum into a resolvent (I - (1-rho) Q0)^-1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..errors import InvalidModelError, LatticeError

MAX_LATTICE = 10**6


@dataclass(frozen=True)
class ExactCost:
    H: float
    kappa: float
    MDD: float
    MDE: float
    J: float
    q: int
    states: int


def lattice_denominator(values, max_q=10_000, tol=1e-9):
    """Smallest q with q * values integral (non-finite entries ignored)."""
    vals = np.asarray(values, dtype=float)
    vals = vals[np.isfinite(vals)]
    for q in range(1, max_q + 1):
        scaled = vals * q
        if np.abs(scaled - np.round(scaled)).max(initial=0.0) <= tol * max(1.0, q):
            return q
    raise LatticeError("statistic is not lattice valued")


def _walk_kernel(pmf, steps, K):
    """Substochastic kernel on states 0..K-1 and the absorption vector."""
    rows, cols, data = [], [], []
    absorb = np.zeros(K)
    k = np.arange(K)
    for p, s in zip(pmf, steps):
        if p == 0:
            continue
        # -inf increments (a symbol impossible after the change) reset to zero
        j = np.zeros(K, dtype=np.int64) if s == -np.inf else np.maximum(0, k + int(s))
        hit = j >= K
        absorb[hit] += p
        rows.append(k[~hit])
        cols.append(j[~hit])
        data.append(np.full((~hit).sum(), p))
    Q = sp.csc_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(K, K)
    )
    return Q, absorb


def _component(Q0, r0, Q1, rho):
    K = Q0.shape[0]
    I = sp.identity(K, format="csc")
    z = 1.0 - rho
    lu0 = splu((I - z * Q0).tocsc())
    w = lu0.solve(z * r0)
    mde = z / rho * w[0]
    t1 = splu((I - Q1).tocsc()).solve(np.ones(K))
    e0 = np.zeros(K)
    e0[0] = 1.0
    occ = lu0.solve(e0, trans="T")
    mdd = rho * t1[0] + rho * z * occ @ (t1 - 1.0)
    return mdd, mde


def exact_cost_dp(model, F, H, kappa, law, q=None) -> ExactCost:
    """Exact (MDD, MDE, J) for CUSUM with threshold H on an iid discrete model.

    ``law`` must be a geometric mixture; costs are linear in the law of the
    change time, so components are solved separately and averaged.
    """
    if model.variant != "iid_discrete":
        raise InvalidModelError("exact DP needs an iid_discrete model")
    if not H > 0:
        raise ValueError("H must be positive")
    vals = F.table(model)
    q = lattice_denominator(vals) if q is None else int(q)
    steps = np.where(np.isfinite(vals), np.round(vals * q), vals)
    K = max(1, math.ceil(H * q - 1e-9))
    if K + 1 > MAX_LATTICE:
        raise LatticeError(f"lattice of {K + 1} states exceeds {MAX_LATTICE}")
    if np.isposinf(steps).any():
        raise LatticeError("statistic takes the value +inf")
    Q0, r0 = _walk_kernel(model.pmf0, steps, K)
    Q1, _ = _walk_kernel(model.pmf1, steps, K)
    mdd = mde = 0.0
    for w, rho in zip(law.weights, law.rhos):
        a, b = _component(Q0, r0, Q1, rho)
        mdd += w * a
        mde += w * b
    return ExactCost(float(H), float(kappa), float(mdd), float(mde), float(mdd + kappa * mde), q, K)
