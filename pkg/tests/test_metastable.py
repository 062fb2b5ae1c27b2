import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qcdlab.errors import MetastabilityError
from qcdlab.metastable import (
    conditional_cgf,
    conditional_moment_ratio,
    induced_marginals,
    pomdp_costs,
    shiryaev_embedding,
    survival_curve,
    survival_factorization,
)

X0 = (0, 1)


@pytest.fixture
def report(three_state):
    return survival_factorization(three_state, X0)


def test_spectral_factorization(report):
    assert report.lam == pytest.approx(0.6, abs=1e-12)
    assert report.rho_a == pytest.approx(-math.log(0.6), abs=1e-12)
    assert report.rho_a == pytest.approx(0.510826, abs=1e-6)
    assert np.allclose(report.v / report.v[0], [1.0, 0.5], atol=1e-12)
    assert np.allclose(report.u / report.u[0], [1.0, 1.0], atol=1e-12)
    M = report.M
    assert np.allclose(M @ report.v, report.lam * report.v, atol=1e-10)
    assert np.allclose(report.u @ M, report.lam * report.u, atol=1e-10)
    assert report.lam == pytest.approx(max(abs(np.linalg.eigvals(M))), abs=1e-12)


def test_twisted_kernel_and_laws(report):
    assert np.allclose(report.P_check.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(report.pi_check @ report.P_check, report.pi_check, atol=1e-12)
    assert np.allclose(report.pi_check, [2 / 3, 1 / 3], atol=1e-12)
    assert np.allclose(report.quasi_stationary, [0.5, 0.5], atol=1e-12)
    # the Yaglom law is a left eigenvector of M
    qs = report.quasi_stationary
    assert np.allclose(qs @ report.M, report.lam * qs, atol=1e-12)


def test_single_state_x0():
    p = 0.7
    P = np.array([[p, 1 - p], [0.0, 1.0]])
    rep = survival_factorization(P, [0])
    assert rep.lam == pytest.approx(p) and rep.rho_a == pytest.approx(-math.log(p))
    curve = survival_curve(rep, 0, 30)
    assert np.allclose(curve.conditional, 1.0)
    assert np.allclose(curve.survival, p ** np.maximum(np.arange(31) - 1, 0) * np.r_[1, np.ones(30)])


def test_survival_curve(report, three_state):
    curve = survival_curve(report, 0, 120)
    # direct matrix powers of the full chain
    P = three_state
    row = np.array([1.0, 0.0, 0.0])
    surv = []
    for n in range(121):
        surv.append(1.0 if n == 0 else alive)  # noqa: F821
        alive = row[:2].sum()
        row = row @ P
    assert curve.survival[0] == 1.0
    assert np.allclose(curve.survival, surv, rtol=1e-12, atol=0)
    scaled = curve.survival[1:] / 0.6 ** np.arange(1, 121)
    assert abs(scaled[60] / scaled[59] - 1) < 1e-8
    assert np.allclose(curve.conditional[60], [0.5, 0.5], atol=1e-8)
    assert curve.b0_fit == pytest.approx(curve.b0_exact, rel=1e-10)
    assert curve.slope_a < 0 and curve.slope_b < 0
    # second eigenvalue 0.3: errors decay at rate log(0.3/0.6)
    assert curve.slope_b == pytest.approx(math.log(0.5), abs=0.02)


def test_b0_closed_form(report):
    for k, z in enumerate(X0):
        c = survival_curve(report, z, 200)
        assert report.b0[k] == pytest.approx(c.survival[-1] / 0.6**200, rel=1e-10)


def test_assumption_errors():
    with pytest.raises(MetastabilityError) as info:
        survival_factorization(np.eye(2), [0, 1])
    assert "absorbing" in str(info.value)
    leaky = np.array([[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(MetastabilityError) as info:
        survival_factorization(leaky, [0])
    assert "absorbing" in str(info.value)
    # state 1 can never leave X0, so X1 is not reachable from it
    P2 = np.array([[0.5, 0.0, 0.5], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(MetastabilityError) as info:
        survival_factorization(P2, [0, 1])
    assert "reachable" in str(info.value)
    # periodic X0 block: no power has a strictly positive column
    P3 = np.array([[0.0, 0.9, 0.1], [0.9, 0.0, 0.1], [0.0, 0.0, 1.0]])
    with pytest.raises(MetastabilityError) as info:
        survival_factorization(P3, [0, 1])
    assert "primitive" in str(info.value)


def test_induced_marginals(report, three_state):
    pi0, pi1 = induced_marginals(report, [0, 0, 1])
    assert np.allclose(pi0, [1.0, 0.0]) and np.allclose(pi1, [0.0, 1.0])
    pi0, _ = induced_marginals(report, [0, 1, 2])
    assert np.allclose(pi0[:2], report.quasi_stationary)


def test_induced_post_marginal_on_communicating_x1():
    P = np.array([
        [0.6, 0.2, 0.1, 0.1],
        [0.3, 0.5, 0.0, 0.2],
        [0.0, 0.0, 0.3, 0.7],
        [0.0, 0.0, 0.6, 0.4],
    ])
    rep = survival_factorization(P, [0, 1])
    _, pi1 = induced_marginals(rep, [0, 1, 2, 3])
    B = P[2:, 2:]
    w, vl = np.linalg.eig(B.T)
    inv = np.abs(vl[:, np.argmin(abs(w - 1))].real)
    inv /= inv.sum()
    assert np.allclose(pi1[2:], inv, atol=1e-12)
    assert pi1[:2].sum() == 0


def test_conditional_cgf(report, three_state):
    fh = np.array([1.0, -1.0, 0.0])
    assert conditional_cgf(three_state, X0, fh, 0.0) == pytest.approx(0.0, abs=1e-14)
    c = np.full(3, 0.8)
    assert conditional_cgf(three_state, X0, c, 0.5) == pytest.approx(0.4, abs=1e-12)
    val = conditional_cgf(three_state, X0, fh, 0.3, report=report)
    # successive ratio of exact conditional moments
    ratio = conditional_moment_ratio(report, 0, fh, 0.3, 201) - conditional_moment_ratio(report, 0, fh, 0.3, 200)
    assert val == pytest.approx(ratio, abs=1e-10)
    # the (1/n) log form converges to the same limit only at rate 1/n
    slow = conditional_moment_ratio(report, 0, fh, 0.3, 200) / 200
    assert abs(slow - val) < 5e-3


def test_conditional_cgf_closed_form(report, three_state):
    fh = np.array([1.0, -1.0, 0.0])
    t = 0.3
    Mf = report.M * np.exp(t * fh[:2])[None, :]
    lam_f = max(np.linalg.eigvals(Mf).real)
    assert conditional_cgf(three_state, X0, fh, t) == pytest.approx(math.log(lam_f / 0.6), abs=1e-12)


@given(st.floats(-2, 2))
def test_conditional_cgf_convex(t):
    P = np.array([[0.5, 0.2, 0.3], [0.1, 0.4, 0.5], [0.0, 0.0, 1.0]])
    fh = np.array([1.0, -1.0, 0.0])
    h = 0.05
    vals = [conditional_cgf(P, X0, fh, x) for x in (t - h, t, t + h)]
    assert vals[0] - 2 * vals[1] + vals[2] >= -1e-10


def test_pomdp_costs(report):
    running, stopping = pomdp_costs(report, 10.0)
    assert np.array_equal(running, [0, 0, 1])
    ET = np.linalg.solve(np.eye(2) - report.M, np.ones(2))
    assert np.allclose(stopping[:2], 10 * ET) and stopping[2] == 0


def test_shiryaev_embedding():
    rho = 0.1
    P, X0s, h = shiryaev_embedding([0.8, 0.2], [0.3, 0.7], rho)
    rep = survival_factorization(P, X0s)
    assert rep.rho_a == pytest.approx(-math.log(1 - rho), abs=1e-9)
    pi0, pi1 = induced_marginals(rep, h)
    assert np.allclose(pi0, [0.8, 0.2], atol=1e-9)
    assert np.allclose(pi1, [0.3, 0.7], atol=1e-9)


def test_report_to_dict(report):
    d = report.to_dict()
    assert d["lambda"] == pytest.approx(0.6) and d["X0"] == [0, 1]
