import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qcdlab.errors import DriftSignError, InvalidLawError, InvalidModelError, UnboundedLLRError
from qcdlab.model import (
    AffineStatistic,
    ChangeTimeLaw,
    FiniteMarkov,
    IidDiscrete,
    IidGaussian,
    PolynomialStatistic,
    Pomdp,
    TableStatistic,
    change_survival,
    check_normalization,
    constant,
    decay_rate,
    llr,
    sample_path,
    scaled,
    shifted,
    stationary_means,
)


def test_gaussian_llr_is_y_minus_half(gauss):
    L = llr(gauss)
    y = np.linspace(-4, 4, 17)
    assert np.allclose(L(y), y - 0.5, atol=1e-14)


def test_gaussian_llr_unequal_variance_matches_density_ratio():
    from scipy.stats import norm

    model = IidGaussian(0.3, 2.0, -1.0, 0.5)
    y = np.linspace(-3, 3, 13)
    ref = norm.logpdf(y, -1.0, math.sqrt(0.5)) - norm.logpdf(y, 0.3, math.sqrt(2.0))
    assert np.allclose(llr(model)(y), ref, atol=1e-12)


def test_discrete_llr(two_symbol):
    L = llr(two_symbol)
    assert np.allclose(L.values, [math.log(0.3 / 0.8), math.log(0.7 / 0.2)])
    assert np.allclose(L.values, [-0.98083, 1.25276], atol=1e-5)


def test_identical_laws_llr_is_zero():
    L = llr(IidDiscrete([0.4, 0.6], [0.4, 0.6]))
    assert np.all(L.values == 0.0)


def test_zero_pre_cell_is_unbounded():
    with pytest.raises(UnboundedLLRError):
        llr(IidDiscrete([1.0, 0.0], [0.5, 0.5]))


def test_zero_post_cell_gives_minus_inf():
    L = llr(IidDiscrete([0.5, 0.5], [1.0, 0.0]))
    assert L.values[1] == -np.inf


def test_stationary_means(gauss, two_symbol):
    assert np.allclose(stationary_means(gauss, llr(gauss)), (-0.5, 0.5), atol=1e-12)
    m0, m1 = stationary_means(two_symbol, llr(two_symbol))
    # finite-sum relative entropy, 0.8 log(3/8) + 0.2 log(7/2)
    assert m0 == pytest.approx(0.8 * math.log(3 / 8) + 0.2 * math.log(7 / 2), abs=1e-14)
    assert m0 == pytest.approx(-0.53411, abs=5e-6)
    assert m1 == pytest.approx(0.58268, abs=1e-5)


def test_zero_statistic_violates_drift(two_symbol):
    with pytest.raises(DriftSignError) as info:
        stationary_means(two_symbol, constant(0.0))
    assert info.value.values == {"m0": 0.0, "m1": 0.0}
    assert stationary_means(two_symbol, constant(0.0), check=False) == (0.0, 0.0)


def test_markov_llr_means_match_relative_entropy_rate(markov):
    L = llr(markov)
    m0, m1 = stationary_means(markov, L)
    P0, P1, mu0, mu1 = markov.P0, markov.P1, markov.mu0, markov.mu1
    k1 = sum(mu1[x] * P1[x, z] * math.log(P1[x, z] / P0[x, z]) for x in range(2) for z in range(2))
    k0 = sum(mu0[x] * P0[x, z] * math.log(P0[x, z] / P1[x, z]) for x in range(2) for z in range(2))
    assert m1 == pytest.approx(k1, abs=1e-10)
    assert m0 == pytest.approx(-k0, abs=1e-10)


def test_markov_stationary_laws(markov):
    assert np.allclose(markov.mu0 @ markov.P0, markov.mu0, atol=1e-10)
    assert np.allclose(markov.mu0, [2 / 3, 1 / 3])
    assert np.allclose(markov.mu1 @ markov.P1, markov.mu1, atol=1e-10)


def test_invalid_models():
    with pytest.raises(InvalidModelError):
        IidDiscrete([0.5, 0.6], [0.5, 0.5])
    with pytest.raises(InvalidModelError):
        FiniteMarkov([[1.0, 0.1], [0.0, 1.0]], [[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(InvalidModelError):
        # X1 = {1} leaks back into X0
        Pomdp(np.array([[0.5, 0.5], [0.1, 0.9]]), [0], [0, 1])


def test_geometric_law():
    law = ChangeTimeLaw.geometric(0.1)
    assert change_survival(law, 0) == 1.0
    assert change_survival(law, 7) == pytest.approx(0.9**7, rel=1e-14)
    assert decay_rate(law) == pytest.approx(0.105361, abs=1e-6)


def test_mixture_rate_is_smallest_exponent():
    law = ChangeTimeLaw.mixture([(0.5, 0.5), (0.5, 0.1)])
    assert law.decay_rate() == pytest.approx(-math.log(0.9), rel=1e-14)
    n = 400
    assert abs(math.log(law.survival(n)) / n + law.decay_rate()) < 5e-3


@pytest.mark.parametrize("rho", [0.0, 1.0, -0.2, 1.5])
def test_invalid_law(rho):
    with pytest.raises(InvalidLawError):
        ChangeTimeLaw.geometric(rho)


def test_mixture_weights_must_sum_to_one():
    with pytest.raises(InvalidLawError):
        ChangeTimeLaw.mixture([(0.5, 0.2), (0.4, 0.3)])


@given(
    st.lists(st.tuples(st.floats(0.05, 1.0), st.floats(0.01, 0.99)), min_size=1, max_size=4),
    st.integers(0, 50),
)
def test_survival_properties(comps, sigma):
    w = np.array([c[0] for c in comps])
    law = ChangeTimeLaw(w / w.sum(), [c[1] for c in comps])
    S = law.survival(np.arange(200))
    assert S[0] == pytest.approx(1.0)
    assert np.all(np.diff(S) <= 1e-15)
    # tail_sum(s) = sum_{n >= s} P{tau > n}
    brute = law.survival(np.arange(sigma + 1, 20000)).sum()
    assert law.tail_sum(sigma) == pytest.approx(brute, rel=1e-9, abs=1e-12)


def test_law_sampler_mean(geom):
    rng = np.random.default_rng(1)
    tau = geom.sample(rng, size=200_000)
    assert tau.min() == 0
    # E tau = (1 - rho) / rho = 9, sd = sqrt(1 - rho) / rho
    se = math.sqrt(0.9) / 0.1 / math.sqrt(tau.size)
    assert abs(tau.mean() - 9.0) < 4 * se


def test_sample_path_deterministic(two_symbol, geom):
    a = sample_path(two_symbol, geom, 42, 50)
    b = sample_path(two_symbol, geom, 42, 50)
    assert a[0] == b[0]
    assert np.array_equal(a[1], b[1])
    assert a[1].shape == (51,)


def test_sampler_pre_frequency(two_symbol):
    rng = np.random.default_rng(3)
    n = 1_000_000
    _, y, _ = two_symbol.step_batch(rng, two_symbol.init_batch(rng, n), np.ones(n, bool))
    p = np.mean(y == 0)
    assert abs(p - 0.8) < 3 * math.sqrt(0.8 * 0.2 / n)


def test_markov_sampler_chi_square(markov):
    from scipy.stats import chisquare

    rng = np.random.default_rng(5)
    n = 1_000_000
    state = markov.init_batch(rng, n)
    _, y, _ = markov.step_batch(rng, state, np.ones(n, bool))
    counts = np.bincount(y, minlength=4)
    assert chisquare(counts, n * markov.pre_pmf()).pvalue > 1e-3


def test_markov_path_pairs_chain(markov, geom):
    _, obs = sample_path(markov, geom, 9, 40)
    assert obs.shape == (41, 2)
    assert np.array_equal(obs[1:, 0], obs[:-1, 1])


def test_pomdp_absorbing(three_state):
    model = Pomdp(three_state, [0, 1], [0, 1, 1])
    for seed in range(20):
        rng = np.random.default_rng(seed)
        state = model.init_batch(rng, 1)
        seen_x1 = False
        for _ in range(60):
            state, _, absorbed = model.step_batch(rng, state, None)
            if seen_x1:
                assert absorbed[0]
            seen_x1 = seen_x1 or bool(absorbed[0])


def test_shift_and_scale_keep_representation(gauss, two_symbol):
    F = shifted(llr(gauss), 0.25)
    assert isinstance(F, PolynomialStatistic)
    assert np.allclose(F.poly(), [-0.25, 1.0])
    G = scaled(llr(two_symbol), 2.0)
    assert isinstance(G, TableStatistic)
    assert np.allclose(G.values, 2 * llr(two_symbol).values)


def test_affine_normalization(gauss):
    basis = (PolynomialStatistic([0.0, 1.0]), constant(1.0))
    F = AffineStatistic([1.0, -0.5], basis, [0.0, 1.0])
    assert check_normalization(F, gauss)
    assert np.allclose(F.poly(), [-0.5, 1.0])
    bad = AffineStatistic([1.0, -0.5], basis, [1.0, 1.0])
    assert not check_normalization(bad, gauss)


def test_llr_tilt_is_normalised(two_symbol, markov):
    # E0[exp(L)] = 1 for an exact likelihood ratio
    from qcdlab.asymptotics import cgf

    assert abs(cgf(two_symbol, llr(two_symbol), 1.0)[0]) < 1e-10
    assert abs(cgf(markov, llr(markov), 1.0)[0]) < 1e-10
