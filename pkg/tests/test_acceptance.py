"""Acceptance criteria 1-10.  Each test prints one PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v`` (the lines are
printed even under output capture) or ``python3 tests/test_acceptance.py``.
"""
import math
import sys
import time

import numpy as np
import pytest

from qcdlab.asymptotics import (
    approx_mde,
    eagerness_curve,
    lambert_bound_check,
    rate_function,
    solve_exponents,
    solve_theta0,
)
from qcdlab.harness import exact_cost_dp, mc_estimate_cost, sweep_threshold
from qcdlab.metastable import conditional_cgf, conditional_moment_ratio, survival_curve, survival_factorization
from qcdlab.model import ChangeTimeLaw, FiniteMarkov, IidDiscrete, IidGaussian, TableStatistic, constant, indicator, llr
from qcdlab.optimizer import LinearClassSpec, optimize_linear

RHO_A = -math.log(0.9)
GAUSS = IidGaussian(0.0, 1.0, 1.0, 1.0)
TWO = IidDiscrete([0.8, 0.2], [0.3, 0.7])
MARKOV = FiniteMarkov([[0.9, 0.1], [0.2, 0.8]], [[0.5, 0.5], [0.4, 0.6]])
PM_ONE = TableStatistic(np.array([-1.0, 1.0]))
GEOM = ChangeTimeLaw.geometric(0.1)
THREE = np.array([[0.5, 0.2, 0.3], [0.1, 0.4, 0.5], [0.0, 0.0, 1.0]])


@pytest.fixture
def verdict(capsys):
    """Time the criterion, print its verdict line, then fail the test if needed."""
    start = time.perf_counter()

    def finish(number, ok, detail, limit):
        elapsed = time.perf_counter() - start
        passed = bool(ok) and elapsed < limit
        with capsys.disabled():
            print(f"\ncriterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}  [{elapsed:.2f}s < {limit:g}s]")
        assert ok, detail
        assert elapsed < limit, f"took {elapsed:.2f}s"

    return finish


def test_criterion_01_duality(verdict):
    errs = []
    for model, F in ((GAUSS, llr(GAUSS)), (TWO, llr(TWO))):
        p = solve_exponents(model, F, RHO_A)
        errs.append(abs(rate_function(p, p.m_check0)[0] - p.m_check0 * p.theta0))
        errs.append(abs(rate_function(p, p.m_check_plus)[0] - (p.m_check_plus * p.theta_plus - RHO_A)))
    worst = max(errs)
    verdict(1, worst <= 1e-8, f"max duality error {worst:.2e} (tol 1e-8)", 1.0)


def test_criterion_02_llr_normalization(verdict):
    errs = [abs(solve_theta0(m, llr(m)) - 1.0) for m in (GAUSS, TWO, MARKOV)]
    verdict(2, max(errs) <= 1e-10, f"max |theta0 - 1| {max(errs):.2e} (tol 1e-10)", 1.0)


def test_criterion_03_eagerness_geometry(verdict):
    worst_min = worst_slope = 0.0
    for model, F in ((GAUSS, llr(GAUSS)), (TWO, llr(TWO)), (TWO, PM_ONE)):
        c = eagerness_curve(solve_exponents(model, F, RHO_A))
        worst_min = max(worst_min, abs(c.G(c.s_star) - c.theta_plus))
        s = c.s0 * np.array([1.0, 1.5, 2.0, 4.0, 8.0])
        slopes = np.diff(c.G(s)) / np.diff(s)
        worst_slope = max(worst_slope, float(np.abs(slopes - RHO_A).max()))
    ok = worst_min <= 1e-8 and worst_slope <= 1e-6
    verdict(3, ok, f"|G(s*) - theta+| {worst_min:.2e} (tol 1e-8), slope error {worst_slope:.2e} (tol 1e-6)", 1.0)


def test_criterion_04_lambert(verdict):
    zs = [1.5, math.e] + [10.0**k for k in range(1, 7)]
    rows = [lambert_bound_check(z) for z in zs]
    inside = all(0 <= eps <= bound for eps, bound in rows)
    eps_e = rows[1][0]
    ok = inside and abs(eps_e - 0.45867) <= 1e-5
    verdict(4, ok, f"bounds hold on {len(zs)} points: {inside}; eps(e) = {eps_e:.6f}", 1.0)


def test_criterion_05_mc_vs_exact(verdict):
    ests = mc_estimate_cost(TWO, PM_ONE, [3.0, 6.0], [10.0, 50.0], GEOM, reps=100_000, seed=20240)
    zs = []
    for e in ests:
        exact = exact_cost_dp(TWO, PM_ONE, e.H, e.kappa, GEOM)
        zs.append(abs(e.J - exact.J) / e.J_stderr)
    verdict(5, max(zs) < 3, f"max |J_mc - J_dp| / se = {max(zs):.2f} over 4 (H, kappa) pairs (tol 3)", 60.0)


def test_criterion_06_laplace_trend(verdict):
    curve = eagerness_curve(solve_exponents(TWO, PM_ONE, GEOM.decay_rate()))
    logs = {H: math.log(exact_cost_dp(TWO, PM_ONE, H, 1.0, GEOM).MDE / approx_mde(curve, H)[2]) for H in (6, 12)}
    ok = abs(logs[12]) < abs(logs[6])
    verdict(6, ok, f"log ratio H=6: {logs[6]:+.4f}, H=12: {logs[12]:+.4f}", 30.0)


def test_criterion_07_gap_constancy(verdict):
    rep = sweep_threshold(TWO, PM_ONE, GEOM, [2, 10, 50, 100], np.arange(1.0, 13.0), method="exact")
    ok = rep.gap_range <= 0.25 * rep.H_inf_range
    verdict(7, ok, f"gap range {rep.gap_range:.4f} vs 0.25 * {rep.H_inf_range:.4f} = {0.25 * rep.H_inf_range:.4f}", 300.0)


def test_criterion_08_optimizer_recovery(verdict):
    cases = [
        (TWO, LinearClassSpec((indicator(1, 2), constant(1.0)), [0.0, 1.0])),
        (MARKOV, LinearClassSpec((llr(MARKOV), TableStatistic(np.ones((2, 2)))), [0.0, 1.0])),
    ]
    sup = resid = 0.0
    for model, cls in cases:
        res = optimize_linear(model, cls, RHO_A)
        F_star = cls.statistic(res.theta_normalized).table(model)
        target = llr(model).table(model) + RHO_A
        sup = max(sup, float(np.abs(F_star - target).max()))
        resid = max(resid, res.stationarity.norm)
    ok = sup <= 1e-6 and resid <= 1e-6
    verdict(8, ok, f"sup |F* - (L + rho_a)| {sup:.2e}, stationarity residual {resid:.2e} (tol 1e-6)", 30.0)


def test_criterion_09_metastability(verdict):
    rep = survival_factorization(THREE, [0, 1])
    curve = survival_curve(rep, 0, 60)
    cond_err = float(np.abs(curve.conditional[60] - rep.quasi_stationary).max())
    ok = (
        abs(rep.lam - 0.6) <= 1e-10
        and abs(rep.rho_a + math.log(0.6)) <= 1e-10
        and cond_err <= 1e-8
        and curve.slope_a < 0
        and curve.slope_b < 0
        and curve.r2_a > 0.99
        and curve.r2_b > 0.99
    )
    detail = (
        f"lambda {rep.lam:.12f}, conditional error {cond_err:.1e}, "
        f"slopes {curve.slope_a:.3f} (R2 {curve.r2_a:.5f}) / {curve.slope_b:.3f} (R2 {curve.r2_b:.5f})"
    )
    verdict(9, ok, detail, 5.0)


def test_criterion_10_conditional_cgf(verdict):
    rep = survival_factorization(THREE, [0, 1])
    fh = np.array([1.0, -1.0, 0.0])
    n = 200
    errs, slow = [], []
    for t in (-0.5, 0.3, 1.0):
        spectral = conditional_cgf(THREE, [0, 1], fh, t, report=rep)
        # growth rate of the exact conditional moment between horizons n and n + 1
        oracle = conditional_moment_ratio(rep, 0, fh, t, n + 1) - conditional_moment_ratio(rep, 0, fh, t, n)
        errs.append(abs(spectral - oracle))
        slow.append(abs(spectral - conditional_moment_ratio(rep, 0, fh, t, n) / n))
    ok = max(errs) <= 1e-6
    verdict(10, ok, f"max error {max(errs):.1e} (tol 1e-6); (1/n) log form off by up to {max(slow):.1e}", 5.0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
