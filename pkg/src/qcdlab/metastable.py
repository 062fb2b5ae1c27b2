"""Metastability of a hidden chain with an absorbing post-change set.

The change time is the entrance time of ``X1``.  Survival in ``X0`` is
governed by the Perron-Frobenius triple of ``M = P`` restricted to
``X0 x X0``; this module exposes that triple, the quasi-stationary laws it
induces, finite-n survival tables and the conditional CGF.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import linregress

from ._linalg import perron_frobenius, reachability, stationary_pmf
from .errors import CgfDomainError, InvalidModelError, MetastabilityError

# points below this magnitude are dominated by rounding and skipped in decay fits
EPS_FLOOR = 1e-11
B0_FIT_POINTS = 20


@dataclass(frozen=True, eq=False)
class MetastableReport:
    P: np.ndarray
    X0: tuple
    M: np.ndarray
    lam: float
    u: np.ndarray  # left eigenvector, a pmf
    v: np.ndarray  # right eigenvector with u @ v == 1
    P_check: np.ndarray  # Doob-transformed kernel on X0
    pi_check: np.ndarray  # invariant pmf of P_check (u * v)
    quasi_stationary: np.ndarray  # Yaglom law, proportional to pi_check / v
    b0: np.ndarray  # lim P{tau_a > n | z} / lam^(n+1), per start state in X0
    method: str

    @property
    def rho_a(self):
        return -math.log(self.lam)

    @property
    def X1(self):
        return tuple(z for z in range(self.P.shape[0]) if z not in self.X0)

    def to_dict(self):
        return {
            "X0": list(self.X0),
            "lambda": self.lam,
            "rho_a": self.rho_a,
            "u": self.u.tolist(),
            "v": self.v.tolist(),
            "P_check": self.P_check.tolist(),
            "pi_check": self.pi_check.tolist(),
            "quasi_stationary": self.quasi_stationary.tolist(),
            "b0": self.b0.tolist(),
            "method": self.method,
        }


def _check_assumptions(P, X0):
    N = P.shape[0]
    X1 = [z for z in range(N) if z not in X0]
    if not X1:
        raise MetastabilityError("absorbing", "X1 is empty")
    if (P[np.ix_(X1, list(X0))] > 0).any():
        raise MetastabilityError("absorbing", "X1 is not absorbing")
    R = reachability(P)
    if not any(R[:, z].all() for z in X1):
        raise MetastabilityError("reachable", "no state of X1 is reachable from every state")
    M = P[np.ix_(X0, X0)]
    A = (M > 0).astype(float)
    Q = np.eye(len(X0))
    for _ in range(len(X0) ** 2):
        Q = ((Q @ A) > 0).astype(float)
        if (Q > 0).all(axis=0).any():
            return M
    raise MetastabilityError("primitive", "restricted kernel has no power with a strictly positive column")


def survival_factorization(P, X0) -> MetastableReport:
    """Perron-Frobenius factorization of the kernel restricted to X0."""
    P = np.array(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidModelError("P must be square")
    if (P < 0).any() or np.abs(P.sum(axis=1) - 1).max() > 1e-12:
        raise InvalidModelError("P is not row stochastic")
    X0 = tuple(int(z) for z in X0)
    M = _check_assumptions(P, X0)
    pf = perron_frobenius(M)
    lam, u, v = pf.lam, pf.u, pf.v
    if not 0 < lam < 1:
        raise MetastabilityError("reachable", f"restricted eigenvalue {lam} is not in (0, 1)")
    P_check = M * v[None, :] / (lam * v[:, None])
    pi_check = u * v / (u @ v)
    qs = pi_check / v
    qs = qs / qs.sum()
    b0 = v * u.sum() / (lam * (u @ v))
    for a in (M, u, v, P_check, pi_check, qs, b0):
        a.setflags(write=False)
    return MetastableReport(P, X0, M, lam, u, v, P_check, pi_check, qs, b0, pf.method)


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    n: np.ndarray
    survival: np.ndarray  # P{tau_a >= n}
    conditional: np.ndarray  # rows: P{Phi_n = . | tau_a > n} on X0
    b0_fit: float
    b0_exact: float
    eps_a: np.ndarray  # lam^-(n+1) P{tau_a > n} - b0
    eps_b: np.ndarray  # max_j |conditional / quasi_stationary - 1|
    slope_a: float
    r2_a: float
    slope_b: float
    r2_b: float


def _decay_fit(n, eps):
    mag = np.abs(eps)
    keep = mag > EPS_FLOOR
    if keep.sum() < 3:
        # already at rounding level: treat as (trivially) geometric decay
        return -math.inf, 1.0
    fit = linregress(n[keep], np.log(mag[keep]))
    return float(fit.slope), float(fit.rvalue**2)


def survival_curve(report: MetastableReport, z_init, n_max) -> SurvivalCurve:
    """Exact survival and conditional laws by matrix powers, plus decay fits."""
    if z_init not in report.X0:
        raise ValueError("z_init must lie in X0")
    k = report.X0.index(z_init)
    M, lam = report.M, report.lam
    row = np.zeros(len(report.X0))
    row[k] = 1.0
    alive = np.empty(n_max + 1)  # P{tau_a > n}
    cond = np.empty((n_max + 1, row.size))
    for n in range(n_max + 1):
        s = row.sum()
        alive[n] = s
        cond[n] = row / s
        row = row @ M
    n = np.arange(n_max + 1)
    survival = np.concatenate([[1.0], alive[:-1]])
    scaled = alive / lam ** (n + 1)
    b0_fit = float(np.mean(scaled[-B0_FIT_POINTS:]))
    b0_exact = float(report.b0[k])
    eps_a = scaled - b0_exact
    eps_b = np.abs(cond / report.quasi_stationary - 1.0).max(axis=1)
    sa, ra = _decay_fit(n, eps_a)
    sb, rb = _decay_fit(n, eps_b)
    return SurvivalCurve(n, survival, cond, b0_fit, b0_exact, eps_a, eps_b, sa, ra, sb, rb)


def induced_marginals(report: MetastableReport, h, m=None):
    """(pi0, pi1) on labels: quasi-stationary law pushed through h, and the invariant pmf on X1."""
    h = np.asarray(h, dtype=int)
    m = int(h.max()) + 1 if m is None else m
    X0 = list(report.X0)
    pi0 = np.bincount(h[X0], weights=report.quasi_stationary, minlength=m)
    inv = stationary_pmf(report.P)
    X1 = list(report.X1)
    pi1 = np.bincount(h[X1], weights=inv[X1], minlength=m)
    return pi0, pi1 / pi1.sum()


def _tilted_log_eigenvalue(M, f, t):
    with np.errstate(over="ignore", divide="ignore"):
        logs = np.log(M) + t * np.asarray(f, dtype=float)[None, :]
    if np.isposinf(logs).any() or np.isnan(logs).any():
        raise CgfDomainError(f"tilt overflows at t={t}")
    shift = logs[np.isfinite(logs)].max()
    pf = perron_frobenius(np.exp(logs - shift))
    return math.log(pf.lam) + shift


def conditional_cgf(P, X0, fh, t, report=None):
    """log lam_F - log lam with M_F(i, j) = M(i, j) exp(t f(j)).

    ``fh`` holds F(h(z)) for every state z (only the X0 entries are used).
    """
    report = survival_factorization(P, X0) if report is None else report
    fh = np.asarray(fh, dtype=float)
    f = fh[list(report.X0)] if fh.size == report.P.shape[0] else fh
    return _tilted_log_eigenvalue(report.M, f, t) - math.log(report.lam)


def conditional_moment_ratio(report: MetastableReport, z_init, fh, t, n):
    """Exact E[exp(t sum_{k<n} F(h(Phi_k))) | tau_a >= n] via matrix powers, in log form."""
    k = report.X0.index(z_init)
    fh = np.asarray(fh, dtype=float)
    f = fh[list(report.X0)] if fh.size == report.P.shape[0] else fh
    d = np.exp(t * f)
    num = np.zeros(f.size)
    num[k] = d[k]
    den = np.zeros(f.size)
    den[k] = 1.0
    lognum = logden = 0.0
    for _ in range(n - 1):
        num = (num @ report.M) * d
        den = den @ report.M
        # renormalise to keep the recursion in range
        a, b = num.sum(), den.sum()
        lognum += math.log(a)
        logden += math.log(b)
        num, den = num / a, den / b
    return lognum + math.log(num.sum()) - logden - math.log(den.sum())


def pomdp_costs(report: MetastableReport, kappa):
    """Running cost 1{z in X1} and stopping cost kappa E[tau_a | z] 1{z in X0}."""
    N = report.P.shape[0]
    running = np.ones(N)
    running[list(report.X0)] = 0.0
    expected_tau = np.linalg.solve(np.eye(len(report.X0)) - report.M, np.ones(len(report.X0)))
    stopping = np.zeros(N)
    stopping[list(report.X0)] = kappa * expected_tau
    return running, stopping


def shiryaev_embedding(pmf0, pmf1, rho):
    """Hidden chain (x0, x1, i) for the conditional iid model with geometric change.

    Returns (P, X0, h).  State index is ``(i * m + x0) * m + x1``; the label
    is x0 before the change (i = 0) and x1 after it.
    """
    pmf0, pmf1 = np.asarray(pmf0, float), np.asarray(pmf1, float)
    m = pmf0.size
    pair = np.outer(pmf0, pmf1).ravel()
    K = m * m
    P = np.zeros((2 * K, 2 * K))
    P[:K, :K] = (1 - rho) * pair
    P[:K, K:] = rho * pair
    P[K:, K:] = pair
    x0, x1 = np.divmod(np.arange(K), m)
    h = np.concatenate([x0, x1])
    return P, tuple(range(K)), h
