"""Observation models, change-time laws and statistic function classes.

Observation conventions
-----------------------
* ``iid_discrete`` and ``pomdp`` observations are integer labels ``0..m-1``.
* ``iid_gaussian`` observations are reals.
* ``finite_markov`` observations are transition pairs.  ``sample_path``
  returns them as an ``(n, 2)`` integer array of ``(previous, current)``
  states; statistics on such models are ``N x N`` tables indexed the same way.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import hermite_e

from ._linalg import stationary_pmf
from .errors import (
    DriftSignError,
    InvalidLawError,
    InvalidModelError,
    UnboundedLLRError,
)

PMF_TOL = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _check_pmf(p, name):
    if p.ndim != 1 or p.size == 0:
        raise InvalidModelError(f"{name} must be a nonempty vector")
    if (p < 0).any() or abs(p.sum() - 1.0) > PMF_TOL:
        raise InvalidModelError(f"{name} is not a pmf (sum={p.sum()!r})")


def _check_kernel(P, name):
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidModelError(f"{name} must be square")
    if (P < 0).any() or np.abs(P.sum(axis=1) - 1.0).max() > PMF_TOL:
        raise InvalidModelError(f"{name} is not row stochastic")


def _inv_cdf(cdf, u):
    # clip guards against cdf[-1] rounding just below 1
    return np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)


# ---------------------------------------------------------------------------
# observation models


class ObservationModel:
    """Common interface.  Concrete variants are immutable dataclasses."""

    variant: str
    finite: bool

    def space_size(self) -> int:
        raise NotImplementedError

    def pre_pmf(self) -> np.ndarray:
        raise NotImplementedError

    def post_pmf(self) -> np.ndarray:
        raise NotImplementedError

    # batch sampling used by sample_path and the Monte Carlo harness
    def init_batch(self, rng, size):
        return None

    def step_batch(self, rng, state, pre):
        """Advance one step; returns (state, observation codes, absorbed flags)."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class IidGaussian(ObservationModel):
    pre_mean: float = 0.0
    pre_var: float = 1.0
    post_mean: float = 1.0
    post_var: float = 1.0
    variant: str = field(default="iid_gaussian", init=False)
    finite: bool = field(default=False, init=False)

    def __post_init__(self):
        if self.pre_var <= 0 or self.post_var <= 0:
            raise InvalidModelError("variances must be positive")

    def step_batch(self, rng, state, pre):
        z = rng.standard_normal(pre.shape)
        y = np.where(
            pre,
            self.pre_mean + np.sqrt(self.pre_var) * z,
            self.post_mean + np.sqrt(self.post_var) * z,
        )
        return state, y, None


@dataclass(frozen=True, eq=False)
class IidDiscrete(ObservationModel):
    pmf0: np.ndarray
    pmf1: np.ndarray
    variant: str = field(default="iid_discrete", init=False)
    finite: bool = field(default=True, init=False)

    def __post_init__(self):
        object.__setattr__(self, "pmf0", _frozen(self.pmf0))
        object.__setattr__(self, "pmf1", _frozen(self.pmf1))
        _check_pmf(self.pmf0, "pmf0")
        _check_pmf(self.pmf1, "pmf1")
        if self.pmf0.shape != self.pmf1.shape:
            raise InvalidModelError("pmf0 and pmf1 must share an alphabet")

    @property
    def m(self):
        return self.pmf0.size

    def space_size(self):
        return self.m

    def pre_pmf(self):
        return self.pmf0

    def post_pmf(self):
        return self.pmf1

    @cached_property
    def _cdfs(self):
        return np.cumsum(self.pmf0), np.cumsum(self.pmf1)

    def step_batch(self, rng, state, pre):
        c0, c1 = self._cdfs
        u = rng.random(pre.shape)
        return state, np.where(pre, _inv_cdf(c0, u), _inv_cdf(c1, u)), None


@dataclass(frozen=True, eq=False)
class FiniteMarkov(ObservationModel):
    """Pre/post-change stationary chains observed through transition pairs."""

    P0: np.ndarray
    P1: np.ndarray
    variant: str = field(default="finite_markov", init=False)
    finite: bool = field(default=True, init=False)

    def __post_init__(self):
        object.__setattr__(self, "P0", _frozen(self.P0))
        object.__setattr__(self, "P1", _frozen(self.P1))
        _check_kernel(self.P0, "P0")
        _check_kernel(self.P1, "P1")
        if self.P0.shape != self.P1.shape:
            raise InvalidModelError("P0 and P1 must have the same size")

    @property
    def N(self):
        return self.P0.shape[0]

    @cached_property
    def mu0(self):
        return _frozen(stationary_pmf(self.P0))

    @cached_property
    def mu1(self):
        return _frozen(stationary_pmf(self.P1))

    def space_size(self):
        return self.N * self.N

    def pair_pmf(self, i):
        mu, P = (self.mu0, self.P0) if i == 0 else (self.mu1, self.P1)
        return mu[:, None] * P

    def pre_pmf(self):
        return self.pair_pmf(0).ravel()

    def post_pmf(self):
        return self.pair_pmf(1).ravel()

    @cached_property
    def _cdfs(self):
        return (
            np.cumsum(self.mu0),
            np.cumsum(self.mu1),
            np.cumsum(self.P0, axis=1),
            np.cumsum(self.P1, axis=1),
        )

    def init_batch(self, rng, size):
        m0, m1, _, _ = self._cdfs
        return _inv_cdf(m0, rng.random(size)), _inv_cdf(m1, rng.random(size))

    def _advance(self, cdf_rows, x, u):
        cdf = cdf_rows[x]
        nxt = (u[:, None] >= cdf).sum(axis=1)
        return np.minimum(nxt, self.N - 1)

    def step_batch(self, rng, state, pre):
        x0, x1 = state
        _, _, C0, C1 = self._cdfs
        z0 = self._advance(C0, x0, rng.random(x0.shape))
        z1 = self._advance(C1, x1, rng.random(x1.shape))
        codes = np.where(pre, x0 * self.N + z0, x1 * self.N + z1)
        return (z0, z1), codes, None


@dataclass(frozen=True, eq=False)
class Pomdp(ObservationModel):
    """Hidden chain with absorbing post-change set; observations ``h(state)``.

    The change time is the entrance time of ``X1``; the chain starts at
    ``z_init`` (a state in ``X0``).
    """

    P: np.ndarray
    X0: tuple
    h: np.ndarray
    z_init: int = 0
    variant: str = field(default="pomdp", init=False)
    finite: bool = field(default=True, init=False)

    def __post_init__(self):
        object.__setattr__(self, "P", _frozen(self.P))
        object.__setattr__(self, "X0", tuple(int(z) for z in self.X0))
        object.__setattr__(self, "h", _frozen(self.h, dtype=int))
        _check_kernel(self.P, "P")
        N = self.P.shape[0]
        if self.h.shape != (N,) or (self.h < 0).any():
            raise InvalidModelError("h must give a nonnegative label per state")
        if not self.X0 or len(set(self.X0)) != len(self.X0):
            raise InvalidModelError("X0 must be a nonempty set of states")
        if min(self.X0) < 0 or max(self.X0) >= N or len(self.X0) == N:
            raise InvalidModelError("X0 must be a proper subset of the states")
        if self.z_init not in self.X0:
            raise InvalidModelError("z_init must lie in X0")
        X1 = self.X1
        if (self.P[np.ix_(X1, self.X0)] != 0).any():
            raise InvalidModelError("X1 is not absorbing: P(z, z') > 0 for z in X1, z' in X0")

    @property
    def N(self):
        return self.P.shape[0]

    @property
    def X1(self):
        return tuple(z for z in range(self.N) if z not in self.X0)

    @property
    def m(self):
        return int(self.h.max()) + 1

    @cached_property
    def report(self):
        from .metastable import survival_factorization

        return survival_factorization(self.P, self.X0)

    @cached_property
    def marginals(self):
        from .metastable import induced_marginals

        return induced_marginals(self.report, self.h, self.m)

    def space_size(self):
        return self.m

    def pre_pmf(self):
        return self.marginals[0]

    def post_pmf(self):
        return self.marginals[1]

    def change_law(self):
        return ChangeTimeLaw.geometric(1.0 - self.report.lam)

    @cached_property
    def _cdf(self):
        return np.cumsum(self.P, axis=1)

    @cached_property
    def _in_x1(self):
        mask = np.ones(self.N, dtype=bool)
        mask[list(self.X0)] = False
        return mask

    def init_batch(self, rng, size):
        return np.full(size, self.z_init, dtype=int)

    def step_batch(self, rng, state, pre):
        u = rng.random(state.shape)
        nxt = np.minimum((u[:, None] >= self._cdf[state]).sum(axis=1), self.N - 1)
        return nxt, self.h[nxt], self._in_x1[nxt]


# ---------------------------------------------------------------------------
# change-time laws


@dataclass(frozen=True, eq=False)
class ChangeTimeLaw:
    """Mixture of geometric laws on {0, 1, 2, ...} with P{tau >= n} = sum w (1-rho)^n."""

    weights: np.ndarray
    rhos: np.ndarray

    def __post_init__(self):
        w = _frozen(np.atleast_1d(self.weights))
        r = _frozen(np.atleast_1d(self.rhos))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "rhos", r)
        if w.shape != r.shape or w.size == 0:
            raise InvalidLawError("weights and rhos must be equal-length, nonempty")
        if ((r <= 0) | (r >= 1)).any():
            raise InvalidLawError(f"geometric parameters must lie in (0, 1): {r}")
        if (w <= 0).any() or abs(w.sum() - 1.0) > PMF_TOL:
            raise InvalidLawError("mixture weights must be positive and sum to 1")

    @classmethod
    def geometric(cls, rho):
        return cls([1.0], [rho])

    @classmethod
    def mixture(cls, components: Sequence[tuple[float, float]]):
        w, r = zip(*components)
        return cls(w, r)

    @property
    def variant(self):
        return "geometric" if self.rhos.size == 1 else "geometric_mixture"

    def survival(self, n):
        """P{tau_a >= n}."""
        n = np.asarray(n)
        if (n < 0).any():
            raise ValueError("n must be nonnegative")
        return np.sum(self.weights * (1.0 - self.rhos) ** n[..., None], axis=-1)

    def decay_rate(self):
        # the slowest component dominates the tail
        return float(np.min(-np.log1p(-self.rhos)))

    def tail_sum(self, sigma):
        """sum_{n >= sigma} P{tau_a > n}; zero for sigma = inf."""
        sigma = np.asarray(sigma, dtype=float)
        q = 1.0 - self.rhos
        with np.errstate(over="ignore", invalid="ignore"):
            terms = self.weights * q ** (sigma[..., None] + 1.0) / self.rhos
        terms = np.where(np.isinf(sigma)[..., None], 0.0, terms)
        return terms.sum(axis=-1)

    def sample(self, rng, size=None):
        comp = rng.choice(self.rhos.size, size=size, p=self.weights)
        # numpy's geometric lives on {1, 2, ...}
        return rng.geometric(self.rhos[comp]) - 1


def change_survival(law: ChangeTimeLaw, n: int) -> float:
    return float(law.survival(n))


def decay_rate(law: ChangeTimeLaw) -> float:
    return law.decay_rate()


# ---------------------------------------------------------------------------
# statistics


class Statistic:
    """A driving function F for the CUSUM recursion."""

    kind: str

    def __call__(self, y):
        raise NotImplementedError

    def table(self, model) -> np.ndarray:
        """Values of F on a finite model's observation space (flattened)."""
        raise InvalidModelError(f"{self.kind} statistic has no finite table")

    def poly(self):
        """Polynomial coefficients (lowest degree first) or None."""
        return None

    def __add__(self, c):
        return shifted(self, c)

    def __mul__(self, k):
        return scaled(self, k)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class TableStatistic(Statistic):
    """Tabulated F: a vector over labels, or an N x N table over transition pairs."""

    values: np.ndarray
    kind: str = "table"

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    def __call__(self, y):
        y = np.asarray(y)
        if self.values.ndim == 2:
            return self.values[y[..., 0], y[..., 1]]
        return self.values[y]

    def table(self, model):
        expect = model.space_size()
        flat = self.values.ravel()
        if flat.size != expect:
            raise InvalidModelError(
                f"table has {flat.size} entries, model space has {expect}"
            )
        return flat


@dataclass(frozen=True, eq=False)
class PolynomialStatistic(Statistic):
    coeffs: np.ndarray
    kind: str = "polynomial"

    def __post_init__(self):
        c = np.trim_zeros(np.atleast_1d(np.array(self.coeffs, dtype=float)), "b")
        object.__setattr__(self, "coeffs", _frozen(c if c.size else [0.0]))

    def __call__(self, y):
        return np.polynomial.polynomial.polyval(np.asarray(y, dtype=float), self.coeffs)

    def poly(self):
        return self.coeffs

    def table(self, model):
        if self.coeffs.size == 1:
            return np.full(model.space_size(), self.coeffs[0])
        if model.variant == "finite_markov":
            raise InvalidModelError("a nonconstant polynomial has no transition-pair table")
        return self(probe_points(model))


@dataclass(frozen=True, eq=False)
class FunctionStatistic(Statistic):
    """Arbitrary vectorised callable; Gaussian integrals fall back to quadrature."""

    fn: Callable
    kind: str = "function"

    def __call__(self, y):
        return np.asarray(self.fn(np.asarray(y)), dtype=float)

    def table(self, model):
        if not model.finite:
            raise InvalidModelError("no finite table for a continuous model")
        return np.broadcast_to(self(probe_points(model)), (model.space_size(),)).copy()


@dataclass(frozen=True, eq=False)
class AffineStatistic(Statistic):
    """F_theta = theta^T psi for a basis psi with v^T psi == 1."""

    theta: np.ndarray
    basis: tuple
    v: np.ndarray
    kind: str = "affine"

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen(self.theta))
        object.__setattr__(self, "v", _frozen(self.v))
        object.__setattr__(self, "basis", tuple(self.basis))
        d = len(self.basis)
        if self.theta.shape != (d,) or self.v.shape != (d,):
            raise InvalidModelError("theta, v and basis must share dimension d")

    def features(self, y):
        return np.stack([np.asarray(b(y), dtype=float) for b in self.basis], axis=-1)

    def __call__(self, y):
        return self.features(y) @ self.theta

    def feature_table(self, model):
        return np.stack([b.table(model) for b in self.basis], axis=-1)

    def table(self, model):
        return self.feature_table(model) @ self.theta

    def poly(self):
        polys = [b.poly() for b in self.basis]
        if any(p is None for p in polys):
            return None
        out = np.zeros(max(p.size for p in polys))
        for t, p in zip(self.theta, polys):
            out[: p.size] += t * p
        return out

    def with_theta(self, theta):
        return AffineStatistic(theta, self.basis, self.v)


def constant(c=1.0):
    return PolynomialStatistic([c], kind="constant")


def indicator(label, m):
    vals = np.zeros(m)
    vals[label] = 1.0
    return TableStatistic(vals, kind="indicator")


def shifted(F: Statistic, c: float) -> Statistic:
    """F + c, keeping the closed-form representation where there is one."""
    if isinstance(F, TableStatistic):
        return TableStatistic(F.values + c, kind=F.kind)
    if isinstance(F, AffineStatistic):
        return F.with_theta(F.theta + c * F.v)
    p = F.poly()
    if p is not None:
        q = p.copy()
        q[0] += c
        return PolynomialStatistic(q, kind=F.kind)
    return FunctionStatistic(lambda y, F=F, c=c: F(y) + c)


def scaled(F: Statistic, k: float) -> Statistic:
    if isinstance(F, TableStatistic):
        return TableStatistic(k * F.values, kind=F.kind)
    if isinstance(F, AffineStatistic):
        return F.with_theta(k * F.theta)
    p = F.poly()
    if p is not None:
        return PolynomialStatistic(k * p, kind=F.kind)
    return FunctionStatistic(lambda y, F=F, k=k: k * F(y))


def probe_points(model, n=201):
    """Observation probe set: the whole finite space, or a grid for Gaussians."""
    if model.finite:
        if model.variant == "finite_markov":
            N = model.N
            x, z = np.divmod(np.arange(N * N), N)
            return np.stack([x, z], axis=-1)
        return np.arange(model.space_size())
    lo = min(model.pre_mean - 8 * np.sqrt(model.pre_var), model.post_mean - 8 * np.sqrt(model.post_var))
    hi = max(model.pre_mean + 8 * np.sqrt(model.pre_var), model.post_mean + 8 * np.sqrt(model.post_var))
    return np.linspace(lo, hi, n)


def check_normalization(F: AffineStatistic, model, tol=1e-10):
    """True when v^T psi(y) = 1 on the probe set, i.e. the constants lie in the span."""
    vals = F.features(probe_points(model)) @ F.v
    return bool(np.abs(vals - 1.0).max() <= tol)


# ---------------------------------------------------------------------------
# log-likelihood ratio and means


def llr(model: ObservationModel) -> Statistic:
    """Exact log-likelihood ratio log(d pi1 / d pi0) as a statistic."""
    if model.variant == "iid_gaussian":
        m0, v0, m1, v1 = model.pre_mean, model.pre_var, model.post_mean, model.post_var
        c0 = 0.5 * np.log(v0 / v1) - m1**2 / (2 * v1) + m0**2 / (2 * v0)
        c1 = m1 / v1 - m0 / v0
        c2 = -1 / (2 * v1) + 1 / (2 * v0)
        return PolynomialStatistic([c0, c1, c2], kind="gaussian_llr")
    if model.variant == "iid_discrete":
        return TableStatistic(_log_ratio(model.pmf1, model.pmf0), kind="table")
    if model.variant == "finite_markov":
        return TableStatistic(_log_ratio(model.P1, model.P0), kind="markov_llr")
    raise InvalidModelError(f"no closed-form LLR for variant {model.variant!r}")


def _log_ratio(p1, p0):
    if ((p0 == 0) & (p1 > 0)).any():
        raise UnboundedLLRError("pre-change law has zero mass where post-change does not")
    with np.errstate(divide="ignore"):
        out = np.where(p1 > 0, np.log(np.where(p1 > 0, p1, 1.0) / np.where(p0 > 0, p0, 1.0)), -np.inf)
    # cells null under both laws are never observed; give them a finite value
    return np.where((p0 == 0) & (p1 == 0), 0.0, out)


def _gh_nodes(n):
    x, w = hermite_e.hermegauss(n)
    return x, w / np.sqrt(2 * np.pi)


def gaussian_expectation(g, mean, var, tol=1e-10, n0=64, n_max=4096):
    """E[g(Y)], Y ~ N(mean, var), by Gauss-Hermite with node doubling."""
    sd = np.sqrt(var)
    prev = None
    n = n0
    while n <= n_max:
        x, w = _gh_nodes(n)
        val = float(w @ np.asarray(g(mean + sd * x), dtype=float))
        if prev is not None and abs(val - prev) < tol:
            return val
        prev = val
        n *= 2
    return prev


def _gaussian_mean(model, F, i):
    mean, var = (model.pre_mean, model.pre_var) if i == 0 else (model.post_mean, model.post_var)
    p = F.poly()
    if p is not None:
        # Gauss-Hermite with n nodes is exact for degree < 2n
        x, w = _gh_nodes(max(2, p.size))
        return float(w @ np.polynomial.polynomial.polyval(mean + np.sqrt(var) * x, p))
    return gaussian_expectation(F, mean, var)


def law_expectation(model, F: Statistic, i: int) -> float:
    """pi^i(F) for i in {0, 1}."""
    if model.finite:
        pmf = model.pre_pmf() if i == 0 else model.post_pmf()
        vals = F.table(model)
        mask = pmf > 0
        return float(pmf[mask] @ vals[mask])
    return _gaussian_mean(model, F, i)


def stationary_means(model, F: Statistic, check=True):
    """(m0, m1) = (pi0(F), pi1(F)); raises DriftSignError unless m0 < 0 < m1."""
    m0 = law_expectation(model, F, 0)
    m1 = law_expectation(model, F, 1)
    if check and not (m0 < 0 < m1):
        raise DriftSignError(f"need m0 < 0 < m1, got m0={m0:.6g}, m1={m1:.6g}", m0=m0, m1=m1)
    return m0, m1


# ---------------------------------------------------------------------------
# sampling


def sample_path(model, law, seed, horizon):
    """Draw (tau_a, Y_0..Y_horizon) deterministically from ``seed``.

    For POMDP models ``law`` is ignored: the change time is the entrance
    time of X1 (``horizon + 1`` is returned if it has not happened yet).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    if model.variant == "pomdp":
        state = model.init_batch(rng, 1)
        obs = [model.h[model.z_init]]
        tau = None
        for k in range(1, horizon + 1):
            state, y, absorbed = model.step_batch(rng, state, None)
            obs.append(y[0])
            if tau is None and absorbed[0]:
                tau = k
        return (horizon + 1 if tau is None else tau), np.asarray(obs)
    tau = int(law.sample(rng))
    state = model.init_batch(rng, 1)
    obs = []
    for k in range(horizon + 1):
        state, y, _ = model.step_batch(rng, state, np.array([k < tau]))
        obs.append(y[0])
    obs = np.asarray(obs)
    if model.variant == "finite_markov":
        obs = np.stack(np.divmod(obs, model.N), axis=-1)
    return tau, obs
