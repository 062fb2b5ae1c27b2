"""Choosing the CUSUM statistic within a linear function class.

For F_theta = theta^T psi with v^T psi == 1, the approximate optimal cost
log(kappa) / (m1 * theta_plus) is minimised by solving the convex program

    Gamma(theta) = Lambda_0(F_theta) - pi1(F_theta) + (v^T theta)^2 / 2

and shifting the minimiser along v until Lambda_0(F) = rho_a.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .asymptotics import _Tilt, solve_exponents
from .errors import AssumptionError, CgfDomainError, DegenerateClassError, InvalidModelError
from .model import (
    AffineStatistic,
    FunctionStatistic,
    PolynomialStatistic,
    Statistic,
    check_normalization,
    law_expectation,
    stationary_means,
)

GRAD_TOL = 1e-8
MAX_ITER = 10_000
ARMIJO_C = 1e-4
SHRINK = 0.5


@dataclass(frozen=True, eq=False)
class LinearClassSpec:
    """Basis psi = (psi_1, ..., psi_d) with normalisation vector v (v^T psi == 1)."""

    basis: tuple
    v: np.ndarray
    bounds: tuple | None = None  # optional (lower, upper) boxes for theta

    def __post_init__(self):
        object.__setattr__(self, "basis", tuple(self.basis))
        v = np.array(self.v, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "v", v)
        if v.shape != (len(self.basis),):
            raise InvalidModelError("v must have one entry per basis function")
        if not np.any(v):
            raise InvalidModelError("v must be nonzero")

    @property
    def d(self):
        return len(self.basis)

    def statistic(self, theta) -> AffineStatistic:
        return AffineStatistic(np.asarray(theta, dtype=float), self.basis, self.v)

    def validate(self, model):
        """The constant function must lie in the span: v^T psi == 1 on probe points."""
        if not check_normalization(self.statistic(np.zeros(self.d)), model):
            raise InvalidModelError("v^T psi is not identically 1 on the observation space")


def _product(a: Statistic, b: Statistic) -> Statistic:
    pa, pb = a.poly(), b.poly()
    if pa is not None and pb is not None:
        return PolynomialStatistic(np.polynomial.polynomial.polymul(pa, pb))
    return FunctionStatistic(lambda y, a=a, b=b: a(y) * b(y))


def _twisted_features(model, cls, theta, t=1.0):
    """(Lambda_0(t F_theta), t-twisted mean of psi, tilt object)."""
    tl = _Tilt(model, cls.statistic(theta), t)
    if model.finite:
        tab = cls.statistic(theta).feature_table(model)
        return tl.logz, np.array([tl.expect(tab[:, i]) for i in range(cls.d)]), tl
    return tl.logz, np.array([tl.expect(b) for b in cls.basis]), tl


def _post_features(model, cls):
    return np.array([law_expectation(model, b, 1) for b in cls.basis])


def autocorrelation(model, cls: LinearClassSpec, theta) -> np.ndarray:
    """R_theta(i, j): twisted (t = 1) second moments of the basis."""
    tl = _Tilt(model, cls.statistic(theta), 1.0)
    d = cls.d
    R = np.empty((d, d))
    if model.finite:
        tab = cls.statistic(theta).feature_table(model)
        for i in range(d):
            for j in range(i, d):
                R[i, j] = R[j, i] = tl.expect(tab[:, i] * tab[:, j])
    else:
        for i in range(d):
            for j in range(i, d):
                R[i, j] = R[j, i] = tl.expect(_product(cls.basis[i], cls.basis[j]))
    return R


def _check_rank(R, rel=1e-10):
    w = np.linalg.eigvalsh(R)
    if w[0] <= rel * max(w[-1], 1e-300):
        raise DegenerateClassError(f"autocorrelation matrix is singular (eigenvalues {w})")


def cost_approx_theta(model, cls: LinearClassSpec, theta, kappa, rho_a):
    """log(kappa) / (m1 * theta_plus) for F_theta."""
    prof = solve_exponents(model, cls.statistic(theta), rho_a)
    return math.log(kappa) / (prof.m1 * prof.theta_plus)


@dataclass(frozen=True)
class Stationarity:
    residual: np.ndarray  # gradient of log of the approximate cost
    drift_gap: float  # twisted drift at theta_plus minus m1

    @property
    def norm(self):
        return float(np.linalg.norm(self.residual))


def stationarity_residual(model, cls: LinearClassSpec, theta, rho_a) -> Stationarity:
    """-pi1(psi)/m1 + twisted(psi)/m_plus at theta_plus; zero iff theta is stationary."""
    F = cls.statistic(theta)
    prof = solve_exponents(model, F, rho_a)
    _, tw, _ = _twisted_features(model, cls, theta, prof.theta_plus)
    post = _post_features(model, cls)
    res = -post / prof.m1 + tw / prof.m_check_plus
    return Stationarity(res, prof.m_check_plus - prof.m1)


def _gamma(model, cls, theta, post):
    try:
        lam0, tw, _ = _twisted_features(model, cls, theta)
    except CgfDomainError:
        return math.inf, None
    vt = cls.v @ theta
    return lam0 - post @ theta + 0.5 * vt**2, tw - post + cls.v * vt


@dataclass(eq=False)
class OptimizerResult:
    theta_circ: np.ndarray
    r_circ: float
    theta_star: np.ndarray
    F_star: AffineStatistic
    theta_plus: float
    theta_normalized: np.ndarray  # theta_plus * theta_star, so that theta_plus becomes 1
    gamma: float
    R: np.ndarray
    stationarity: Stationarity
    converged: bool
    iterations: int
    trace: list = field(default_factory=list)

    def to_dict(self):
        return {
            "theta_circ": self.theta_circ.tolist(),
            "r_circ": self.r_circ,
            "theta_star": self.theta_star.tolist(),
            "theta_plus": self.theta_plus,
            "theta_normalized": self.theta_normalized.tolist(),
            "gamma": self.gamma,
            "R": self.R.tolist(),
            "stationarity_residual": self.stationarity.residual.tolist(),
            "drift_gap": self.stationarity.drift_gap,
            "converged": self.converged,
            "iterations": self.iterations,
            "trace": self.trace,
        }


def optimize_linear(model, cls: LinearClassSpec, rho_a, theta_init=None, max_iter=MAX_ITER, tol=GRAD_TOL):
    """Minimise Gamma by projected gradient descent, then shift along v to hit rho_a.

    Iterates stay on {v^T theta = 0}.  Steps start from a Barzilai-Borwein
    guess and are cut back until the Armijo condition holds.
    """
    cls.validate(model)
    v = cls.v
    post = _post_features(model, cls)

    def project(x):
        return x - v * (v @ x) / (v @ v)

    theta = project(np.zeros(cls.d) if theta_init is None else np.asarray(theta_init, float))
    val, grad = _gamma(model, cls, theta, post)
    if grad is None:
        raise CgfDomainError("Gamma is infinite at the initial point")
    g = project(grad)
    step = 1.0
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gn = float(np.linalg.norm(g))
        trace.append({"iter": it - 1, "gamma": val, "grad_norm": gn, "theta": theta.tolist()})
        _check_rank(autocorrelation(model, cls, theta))
        if gn <= tol:
            converged = True
            break
        a = step
        while True:
            cand = theta - a * g
            cval, cgrad = _gamma(model, cls, cand, post)
            if cval <= val - ARMIJO_C * a * gn**2:
                break
            a *= SHRINK
            if a < 1e-20:
                break
        if cgrad is None or a < 1e-20:
            break
        cg = project(cgrad)
        s, y = cand - theta, cg - g
        # Barzilai-Borwein trial step for the next iteration
        sy = s @ y
        step = (s @ s) / sy if sy > 0 else 2 * a
        theta, val, g = cand, cval, cg
    theta_circ = theta
    lam0 = _twisted_features(model, cls, theta_circ)[0]
    r_circ = rho_a - lam0
    theta_star = theta_circ + r_circ * v
    F_star = cls.statistic(theta_star)
    try:
        theta_plus = solve_exponents(model, F_star, rho_a).theta_plus
        stat = stationarity_residual(model, cls, theta_star, rho_a)
    except AssumptionError:
        if converged:
            raise
        # an unfinished iterate need not satisfy the drift conditions yet
        theta_plus = math.nan
        stat = Stationarity(np.full(cls.d, math.nan), math.nan)
    return OptimizerResult(
        theta_circ=theta_circ,
        r_circ=r_circ,
        theta_star=theta_star,
        F_star=F_star,
        theta_plus=theta_plus,
        theta_normalized=theta_plus * theta_star,
        gamma=val,
        R=autocorrelation(model, cls, theta_circ),
        stationarity=stat,
        converged=converged,
        iterations=it,
        trace=trace,
    )


@dataclass(frozen=True, eq=False)
class OffsetResult:
    theta1: float
    offset: float
    F_star: Statistic
    theta_plus: float
    drift_gap: float


def optimize_offset(model, F: Statistic, rho_a) -> OffsetResult:
    """Best scalar offset for F: theta1 minimises Lambda_0(t F) - t pi1(F)."""
    _, m1 = stationary_means(model, F)

    def dU(t):
        return _Tilt(model, F, t).mean() - m1

    lo, hi = 0.0, 1.0
    while True:
        try:
            val = dU(hi)
        except CgfDomainError as exc:
            raise CgfDomainError("offset objective is unbounded below") from exc
        if val > 0:
            break
        lo, hi = hi, 2 * hi
        if hi > 1e6:
            raise CgfDomainError("offset objective is unbounded below")
    theta1 = brentq(dU, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    offset = (rho_a - _Tilt(model, F, theta1).logz) / theta1
    F_star = F + offset
    prof = solve_exponents(model, F_star, rho_a)
    return OffsetResult(theta1, offset, F_star, prof.theta_plus, prof.m_check_plus - prof.m1)
