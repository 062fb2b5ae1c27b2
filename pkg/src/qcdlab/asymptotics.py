"""Large-deviations performance approximations for CUSUM.

Everything here is built from the pre-change CGF ``U(t) = Lambda_0(t F)``:
the exponents ``theta0``/``theta_plus``, the convex dual ``I0``, the
eagerness exponent ``G`` and the closed-form threshold/cost approximations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import logsumexp

from ._linalg import perron_frobenius
from .errors import CgfDomainError, ExponentError, InvalidModelError, RateBoundaryError
from .model import _gh_nodes, gaussian_expectation, stationary_means

ROOT_TOL = 1e-12
# Richardson step for markov second derivatives: 1e-4 * max(1, t)
FD_STEP = 1e-4


class TwistedGaussian(NamedTuple):
    mean: float
    var: float


class QuadratureLaw(NamedTuple):
    nodes: np.ndarray
    weights: np.ndarray


# ---------------------------------------------------------------------------
# exponential tilting


def _finite_logits(logp, vals, t):
    """log p + t F with the conventions 0 * (-inf) = 0 and exp(+inf) = divergence."""
    if t == 0:
        return logp.copy()
    with np.errstate(invalid="ignore"):
        a = logp + t * vals
    if np.isposinf(a).any() or np.isnan(a).any():
        raise CgfDomainError(f"CGF diverges at t={t}")
    return a


def _gauss_poly_tilt(p, mean, var, t):
    """Tilt N(mean, var) by exp(t p(y)) for deg(p) <= 2: (log normaliser, tilted law)."""
    p = np.concatenate([p, np.zeros(3 - p.size)]) if p.size < 3 else p
    a, b, c = p[:3]
    prec = 1.0 / var - 2.0 * t * c
    if prec <= 0:
        raise CgfDomainError(f"Gaussian CGF diverges at t={t}")
    lin = mean / var + t * b
    logz = t * a - 0.5 * math.log(var * prec) + lin**2 / (2 * prec) - mean**2 / (2 * var)
    if not math.isfinite(logz):
        raise CgfDomainError(f"Gaussian CGF overflows at t={t}")
    return logz, TwistedGaussian(lin / prec, 1.0 / prec)


def _pf(K, t):
    try:
        return perron_frobenius(K)
    except ArithmeticError as exc:
        raise CgfDomainError(f"tilted kernel is numerically degenerate at t={t}") from exc


class _Tilt:
    """The t-twisted pre-change marginal for one (model, F, t)."""

    def __init__(self, model, F, t):
        self.model, self.F, self.t = model, F, float(t)
        v = model.variant
        if v == "iid_discrete":
            self._iid_finite()
        elif v == "finite_markov":
            self._markov()
        elif v == "pomdp":
            self._pomdp()
        elif v == "iid_gaussian":
            self._gaussian()
        else:
            raise InvalidModelError(f"unsupported model variant {v!r}")

    # -- variants ---------------------------------------------------------
    def _iid_finite(self):
        p = self.model.pre_pmf()
        vals = self.F.table(self.model)
        with np.errstate(divide="ignore"):
            logp = np.log(p)
        a = _finite_logits(logp, vals, self.t)
        self.logz = float(logsumexp(a))
        self.weights = np.exp(a - self.logz)
        self.values = vals
        self.kind = "finite"

    def _markov(self):
        m = self.model
        vals = self.F.table(m).reshape(m.N, m.N)
        with np.errstate(divide="ignore"):
            logP = np.log(m.P0)
        a = _finite_logits(logP, vals, self.t)
        shift = a[np.isfinite(a)].max()
        K = np.exp(a - shift)
        pf = _pf(K, self.t)
        self.logz = math.log(pf.lam) + shift
        pair = pf.u[:, None] * K * pf.v[None, :] / pf.lam
        self.weights = (pair / pair.sum()).ravel()
        self.values = vals.ravel()
        self.kind = "finite"
        # kernel and pf are for the rescaled matrix; Doob transforms are scale-free
        self.pf = pf
        self.kernel = K

    def _pomdp(self):
        m = self.model
        X0 = list(m.X0)
        M = m.P[np.ix_(X0, X0)]
        labels = m.h[X0]
        fvals = self.F.table(m)[labels]
        with np.errstate(divide="ignore"):
            logM = np.log(M)
        a = _finite_logits(logM, fvals[None, :], self.t)
        shift = a[np.isfinite(a)].max()
        pf = _pf(np.exp(a - shift), self.t)
        self.logz = math.log(pf.lam) + shift - math.log(m.report.lam)
        state_w = pf.u * pf.v
        state_w = state_w / state_w.sum()
        # push the state law forward to observation labels
        self.weights = np.bincount(labels, weights=state_w, minlength=m.m)
        self.values = self.F.table(m)
        self.kind = "finite"
        self.state_weights = state_w

    def _gaussian(self):
        m = self.model
        p = self.F.poly()
        if p is not None and p.size <= 3:
            self.logz, self.law = _gauss_poly_tilt(p, m.pre_mean, m.pre_var, self.t)
            self.kind = "gauss"
            return
        if p is not None and self.t != 0:
            # degree >= 3: exp(t p(y)) is not integrable against a Gaussian
            raise CgfDomainError("polynomial statistic grows too fast for a finite CGF")
        # generic statistic: quadrature with node doubling
        sd = math.sqrt(m.pre_var)
        prev = None
        n = 64
        while n <= 4096:
            x, w = _gh_nodes(n)
            y = m.pre_mean + sd * x
            a = np.log(w) + self.t * self.F(y)
            logz = float(logsumexp(a))
            if not math.isfinite(logz):
                raise CgfDomainError(f"CGF diverges at t={self.t}")
            if prev is not None and abs(logz - prev) < 1e-10:
                break
            prev = logz
            n *= 2
        self.logz = logz
        self.law = QuadratureLaw(y, np.exp(a - logz))
        self.kind = "quad"

    # -- expectations -----------------------------------------------------
    def expect(self, G):
        """Twisted expectation of a Statistic (or of a precomputed finite table)."""
        if self.kind == "finite":
            vals = G if isinstance(G, np.ndarray) else G.table(self.model)
            mask = self.weights > 0
            return self.weights[mask] @ vals[mask]
        if self.kind == "gauss":
            mean, var = self.law
            gp = G.poly()
            if gp is None:
                return gaussian_expectation(G, mean, var)
            # n nodes integrate polynomials of degree < 2n exactly
            x, w = _gh_nodes(max(2, gp.size))
            return w @ np.asarray(G(mean + math.sqrt(var) * x), dtype=float)
        nodes, w = self.law
        return w @ np.asarray(G(nodes), dtype=float)

    def mean(self):
        if self.kind == "finite":
            return float(self.expect(self.values))
        return float(self.expect(self.F))

    def var(self):
        if self.kind == "finite":
            mask = self.weights > 0
            d = self.values[mask] - self.mean()
            return float(self.weights[mask] @ d**2)
        if self.kind == "gauss":
            p = self.F.poly()
            p = np.concatenate([p, np.zeros(3 - p.size)]) if p.size < 3 else p
            _, b, c = p[:3]
            m, s2 = self.law
            return float((b + 2 * c * m) ** 2 * s2 + 2 * c**2 * s2**2)
        nodes, w = self.law
        f = self.F(nodes)
        mu = w @ f
        return float(w @ (f - mu) ** 2)


def _iid(model):
    return model.variant in ("iid_discrete", "iid_gaussian")


def _upsilon_d1(model, F, t):
    tl = _Tilt(model, F, t)
    return tl.logz, tl.mean()


def cgf(model, F, t):
    """(U(t), U'(t), U''(t)) for U(t) = Lambda_0(t F)."""
    t = float(t)
    tl = _Tilt(model, F, t)
    u, d1 = tl.logz, tl.mean()
    if _iid(model):
        d2 = tl.var()
    else:
        h = FD_STEP * max(1.0, abs(t))

        def central(step):
            return (_upsilon_d1(model, F, t + step)[1] - _upsilon_d1(model, F, t - step)[1]) / (2 * step)

        d2 = (4 * central(h / 2) - central(h)) / 3
    return u, d1, d2


def twisted_marginal(model, F, t):
    """The t-twisted pre-change marginal.

    Returns a pmf over labels (iid_discrete, pomdp), an N x N pair pmf
    (finite_markov), or a TwistedGaussian / QuadratureLaw (iid_gaussian).
    """
    tl = _Tilt(model, F, t)
    if tl.kind == "finite":
        w = tl.weights
        if model.variant == "finite_markov":
            return w.reshape(model.N, model.N)
        return w
    return tl.law


def twisted_expectation(model, F, t, G):
    return float(_Tilt(model, F, t).expect(G))


# ---------------------------------------------------------------------------
# exponents


@dataclass(eq=False)
class CgfProfile:
    model: object
    F: object
    rho_a: float
    theta0: float
    theta_plus: float
    m0: float
    m1: float
    m_check0: float
    m_check_plus: float
    d_upsilon_zero: float
    _cache: dict = field(default_factory=dict, repr=False)

    def _eval(self, t):
        key = float(t)
        if key not in self._cache:
            self._cache[key] = cgf(self.model, self.F, key)
        return self._cache[key]

    def upsilon(self, t):
        return self._eval(t)[0]

    def d_upsilon(self, t):
        return self._eval(t)[1]

    def dd_upsilon(self, t):
        return self._eval(t)[2]


def _upsilon(model, F):
    def f(t):
        return _Tilt(model, F, t).logz

    return f


def _expand_root(f, lo, hi, limit=1e6):
    """Double ``hi`` until f(hi) > 0, keeping f(lo) <= 0; returns the bracket."""
    while True:
        try:
            val = f(hi)
        except CgfDomainError as exc:
            raise ExponentError("CGF left its domain before a root was bracketed") from exc
        if val > 0:
            return lo, hi
        lo, hi = hi, 2 * hi
        if hi > limit:
            raise ExponentError("no positive root found")


def _root(f, lo, hi):
    t = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(f(t)) > ROOT_TOL:
        # brentq stops on bracket width; polish with a few secant-free bisections
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if f(mid) > 0:
                hi = mid
            else:
                lo = mid
        t = 0.5 * (lo + hi)
    return t


def solve_theta0(model, F):
    """The positive root of U; U(0) = 0 is skipped by starting the bracket at 1e-6."""
    U = _upsilon(model, F)
    start = 1e-6
    if U(start) > 0:
        raise ExponentError("U is already positive next to zero; no positive root")
    lo, hi = _expand_root(U, start, 2 * start)
    return _root(U, lo, hi)


def solve_exponents(model, F, rho_a) -> CgfProfile:
    """theta0 > 0 with U(theta0) = 0 and theta_plus > theta0 with U(theta_plus) = rho_a."""
    if not rho_a > 0:
        raise ValueError("rho_a must be positive")
    m0, m1 = stationary_means(model, F)
    U = _upsilon(model, F)
    theta0 = solve_theta0(model, F)
    lo, hi = _expand_root(lambda t: U(t) - rho_a, theta0, 2 * theta0)
    theta_plus = _root(lambda t: U(t) - rho_a, lo, hi)
    prof = CgfProfile(
        model=model,
        F=F,
        rho_a=float(rho_a),
        theta0=theta0,
        theta_plus=theta_plus,
        m0=m0,
        m1=m1,
        m_check0=0.0,
        m_check_plus=0.0,
        d_upsilon_zero=0.0,
    )
    prof.m_check0 = prof.d_upsilon(theta0)
    prof.m_check_plus = prof.d_upsilon(theta_plus)
    prof.d_upsilon_zero = prof.d_upsilon(0.0)
    return prof


# ---------------------------------------------------------------------------
# convex dual and the eagerness exponent


def rate_function(profile: CgfProfile, m, limit=1e4):
    """(I0(m), theta(m)) with theta(m) solving U'(theta) = m."""
    m = float(m)

    def g(t):
        return profile.d_upsilon(t) - m

    g0 = g(0.0)
    if g0 == 0:
        return 0.0, 0.0
    direction = 1.0 if g0 < 0 else -1.0
    lo, step = 0.0, 1.0
    while True:
        hi = direction * step
        try:
            val = g(hi)
        except (CgfDomainError, OverflowError) as exc:
            raise RateBoundaryError(f"drift {m} not attained inside the CGF domain") from exc
        if val * g0 < 0 or val == 0:
            break
        lo, step = hi, 2 * step
        if step > limit:
            raise RateBoundaryError(f"drift {m} lies outside the range of U'")
    a, b = sorted((lo, hi))
    t = brentq(g, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    return t * m - profile.upsilon(t), t


class MostLikelyPath(NamedTuple):
    t: np.ndarray
    x: np.ndarray
    t0: float
    t1: float
    slope: float


def path_exponent(profile: CgfProfile, T):
    """e0(T) and the piecewise-linear most likely path reaching level 1 by time T."""
    if not T > 0:
        raise ValueError("T must be positive")
    s0 = 1.0 / profile.m_check0
    decay = abs(profile.m0)
    if T >= s0:
        e0 = rate_function(profile, profile.m_check0)[0] / profile.m_check0
        slope, t1 = profile.m_check0, float(T)
        t0 = t1 - s0
    else:
        try:
            e0 = T * rate_function(profile, 1.0 / T)[0]
        except RateBoundaryError:
            e0 = math.inf
        slope, t0, t1 = 1.0 / T, 0.0, float(T)
    knots_t = [0.0] + ([t0] if t0 > 0 else []) + [t1, t1 + 1.0 / decay]
    knots_x = [0.0] + ([0.0] if t0 > 0 else []) + [1.0, 0.0]
    return e0, MostLikelyPath(np.array(knots_t), np.array(knots_x), t0, t1, slope)


@dataclass(eq=False)
class EagernessCurve:
    profile: CgfProfile
    s_star: float
    s0: float
    gamma2: float
    gamma2_curvature: float
    eps: float = 0.75

    @property
    def rho_a(self):
        return self.profile.rho_a

    @property
    def theta_plus(self):
        return self.profile.theta_plus

    @property
    def theta0(self):
        return self.profile.theta0

    def e0(self, s):
        return path_exponent(self.profile, s)[0]

    def G(self, s):
        s = np.asarray(s, dtype=float)
        out = np.array([self.e0(x) + self.rho_a * x for x in s.ravel()]).reshape(s.shape)
        return out if out.ndim else float(out)

    def G_tilde(self, s):
        return self.G(s) - self.theta_plus

    def delta(self, H):
        return H ** (-1.0 + self.eps)

    def sigma2(self, H):
        return self.gamma2 / H

    def mde1(self, H):
        return math.sqrt(H) * math.sqrt(2 * math.pi * self.gamma2) * math.exp(-H * self.theta_plus)

    def mde2(self, H):
        return math.exp(-H * self.theta0) / (1.0 - math.exp(-self.rho_a))

    def mde(self, H):
        return self.mde1(H) + self.mde2(H)


def eagerness_curve(profile: CgfProfile, rho_a: Optional[float] = None) -> EagernessCurve:
    """G(s) = e0(s) + rho_a s with minimiser s* = 1/m_plus and kink s0 = 1/m_check0.

    ``gamma2`` is the Laplace width Lambda_0''(theta_plus) / theta_plus**3 used in
    the MDE approximation.  ``gamma2_curvature`` is 1/G''(s*), which by the chain
    rule equals Lambda_0''(theta_plus) / m_plus**3; both are exposed.
    """
    if rho_a is not None and not math.isclose(rho_a, profile.rho_a, rel_tol=1e-12):
        raise ValueError("rho_a disagrees with the profile")
    dd = profile.dd_upsilon(profile.theta_plus)
    return EagernessCurve(
        profile=profile,
        s_star=1.0 / profile.m_check_plus,
        s0=1.0 / profile.m_check0,
        gamma2=dd / profile.theta_plus**3,
        gamma2_curvature=dd / profile.m_check_plus**3,
    )


def approx_mde(curve: EagernessCurve, H):
    """(MDE1, MDE2, MDE1 + MDE2): Laplace term plus the geometric tail term."""
    if not H > 0:
        raise ValueError("H must be positive")
    a, b = curve.mde1(H), curve.mde2(H)
    return a, b, a + b


def approx_cost(curve: EagernessCurve, H, kappa, m1=None):
    m1 = curve.profile.m1 if m1 is None else m1
    return H / m1 + kappa * approx_mde(curve, H)[2]


@dataclass(frozen=True)
class ThresholdApprox:
    kappa: float
    H_inf: float
    H_one: float
    J_inf: float
    b: float
    H_numeric: float
    J_numeric: float


def approx_optimal_threshold(profile, curve, kappa, m1=None) -> ThresholdApprox:
    """Closed-form thresholds log(kappa)/theta_plus, (log(kappa) + b)/theta_plus and a numeric minimiser."""
    if not kappa > 1:
        raise ValueError("kappa must exceed 1")
    m1 = profile.m1 if m1 is None else m1
    tp = profile.theta_plus
    H_inf = math.log(kappa) / tp
    b = math.log(m1 * math.sqrt(math.pi * curve.gamma2 * tp))
    H_one = (math.log(kappa) + b) / tp

    def J(H):
        return approx_cost(curve, H, kappa, m1)

    hi = 10 * H_inf
    grid = np.linspace(hi / 400, hi, 400)
    vals = [J(h) for h in grid]
    k = int(np.argmin(vals))
    lo_b = grid[max(k - 1, 0)] if k > 0 else 1e-12
    hi_b = grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(J, bounds=(lo_b, hi_b), method="bounded", options={"xatol": 1e-10})
    H_num = float(res.x) if res.fun <= vals[k] else float(grid[k])
    return ThresholdApprox(
        kappa=float(kappa),
        H_inf=H_inf,
        H_one=H_one,
        J_inf=H_inf / m1,
        b=b,
        H_numeric=H_num,
        J_numeric=J(H_num),
    )


# ---------------------------------------------------------------------------
# Lambert-type inverse


def lambert_w(z):
    """W(z) = z - log z."""
    return z - math.log(z)


def lambert_inverse(w):
    """L(w) = w + log w, an approximate inverse of W for large arguments."""
    if not w > 0:
        raise ValueError("w must be positive")
    return w + math.log(w)


def lambert_bound_check(z):
    """(eps(z), bound) with L(W(z)) = z - eps(z) and 0 <= eps <= log z / (z - log z)."""
    if not z > 1:
        raise ValueError("z must exceed 1")
    # z - L(W(z)) = log z - log(z - log z), written without cancellation
    eps = -math.log1p(-math.log(z) / z)
    bound = math.log(z) / (z - math.log(z))
    assert -1e-12 <= eps <= bound + 1e-12, (z, eps, bound)
    return eps, bound


# ---------------------------------------------------------------------------
# relative entropy rates


@dataclass(frozen=True)
class EntropyRates:
    k_twisted: float  # K(twisted process || pre-change process) at t = 1
    k_model: float  # K(post || pre): D(pi1||pi0) or the Donsker-Varadhan rate
    k_post_twisted: float  # K(post || twisted pre-change process)
    lambda0: float  # Lambda_0(F)
    m1: float
    residual: float  # m1 - [Lambda_0(F) + k_model - k_post_twisted]
    infinite: bool


def _kl(p, q):
    mask = p > 0
    if (q[mask] == 0).any():
        return math.inf
    return float(p[mask] @ np.log(p[mask] / q[mask]))


def entropy_rates(model, F) -> EntropyRates:
    """Entropy-rate identities for the unit tilt of F on a finite model."""
    if model.variant not in ("iid_discrete", "finite_markov"):
        raise InvalidModelError("entropy rates need an iid_discrete or finite_markov model")
    tl = _Tilt(model, F, 1.0)
    lam0 = tl.logz
    k_tw = tl.mean() - lam0
    m1 = float(model.post_pmf() @ np.where(model.post_pmf() > 0, F.table(model), 0.0))
    if model.variant == "iid_discrete":
        k_model = _kl(model.pmf1, model.pmf0)
        k_post_tw = _kl(model.pmf1, tl.weights)
    else:
        pair1 = model.pair_pmf(1)
        k_model = _kl(pair1.ravel(), model.pair_pmf(0).ravel()) - _kl(model.mu1, model.mu0)
        # kernel of the twisted process is a Doob transform of the tilted kernel
        pf = tl.pf
        Pc = tl.kernel * pf.v[None, :] / (pf.lam * pf.v[:, None])
        k_post_tw = float(
            sum(
                pair1[x, z] * math.log(model.P1[x, z] / Pc[x, z])
                for x in range(model.N)
                for z in range(model.N)
                if pair1[x, z] > 0
            )
        ) if (Pc[pair1 > 0] > 0).all() else math.inf
    infinite = not (math.isfinite(k_model) and math.isfinite(k_post_tw))
    residual = m1 - (lam0 + k_model - k_post_tw) if not infinite else math.nan
    return EntropyRates(k_tw, k_model, k_post_tw, lam0, m1, residual, infinite)
