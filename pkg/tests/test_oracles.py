import numpy as np
import pytest
from scipy import special as sps
from scipy import stats

from inferostatic.errors import BoundaryError, ConfigurationError, DomainError
from inferostatic.oracles import (
    Dirichlet3,
    Gaussian1D,
    LatentTwoStage,
    dirichlet_log_density,
    dirichlet_sample,
    dirichlet_score,
    gamma_sample,
    gaussian1d_ksa_closed_form,
    make_oracle,
    new_counters,
)
from inferostatic.samplers import make_rng
from inferostatic.special import EULER_GAMMA, digamma, lgamma

# ---------------------------------------------------------------- special functions


def test_digamma_at_one():
    assert abs(digamma(1.0) + EULER_GAMMA) < 1e-10


def test_digamma_recurrence():
    x = np.linspace(0.5, 10, 400)
    np.testing.assert_allclose(digamma(x + 1), digamma(x) + 1 / x, rtol=0, atol=1e-12)


def test_special_against_scipy():
    x = np.concatenate([np.linspace(0.01, 0.5, 50), np.linspace(0.5, 60, 500)])
    np.testing.assert_allclose(lgamma(x), sps.gammaln(x), rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(digamma(x), sps.digamma(x), rtol=1e-13, atol=1e-13)


def test_lgamma_known_values():
    assert abs(lgamma(3.0) - np.log(2.0)) < 1e-14
    assert abs(lgamma(0.5) - 0.5 * np.log(np.pi)) < 1e-14


def test_special_domain():
    with pytest.raises(DomainError):
        lgamma(np.array([1.0, 0.0]))
    with pytest.raises(DomainError):
        digamma(-1.0)


# ---------------------------------------------------------------- gamma sampler


@pytest.mark.parametrize("shape", [0.3, 1.0, 2.5, 7.0])
def test_gamma_sampler_distribution(shape):
    draws = gamma_sample(np.full(50_000, shape), make_rng(10))
    assert stats.kstest(draws, stats.gamma(shape).cdf).pvalue > 0.001


# ---------------------------------------------------------------- Dirichlet


@pytest.mark.parametrize("theta", [(1.0, 1.0, 1.0), (1.0, 2.0, 2.0)])
def test_dirichlet_mean(theta):
    n = 100_000
    th = np.tile(theta, (n, 1))
    x = dirichlet_sample(th, make_rng(11))
    a = np.asarray(theta)
    mean = a / a.sum()
    var = mean * (1 - mean) / (a.sum() + 1)
    assert np.all(np.abs(x.mean(axis=0) - mean) < 3 * np.sqrt(var / n))
    assert np.all(x >= 0)
    np.testing.assert_allclose(x.sum(axis=1), 1.0, atol=1e-12)


def test_dirichlet_sampler_matches_numpy_reference():
    th = np.tile([0.6, 2.0, 4.5], (40_000, 1))
    ours = dirichlet_sample(th, make_rng(12))
    ref = np.random.default_rng(12).dirichlet([0.6, 2.0, 4.5], size=40_000)
    for i in range(3):
        assert stats.ks_2samp(ours[:, i], ref[:, i]).pvalue > 0.001


def test_dirichlet_rejects_nonpositive_theta():
    with pytest.raises(DomainError):
        dirichlet_sample(np.array([[1.0, 0.0, 2.0]]), make_rng(0))


def test_boundary_counter_untouched_for_ordinary_draws():
    c = new_counters()
    Dirichlet3().sample(np.tile([2.0, 2.0, 2.0], (1000, 1)), make_rng(0), c)
    assert c["boundary_redraws"] == 0


def test_uniform_log_density():
    x = dirichlet_sample(np.tile([1.0, 1.0, 1.0], (20, 1)), make_rng(1))
    np.testing.assert_allclose(dirichlet_log_density(x, np.ones((20, 3))), np.log(2.0), atol=1e-14)


def test_log_density_hand_value():
    val = dirichlet_log_density(np.array([[0.5, 0.25, 0.25]]), np.array([[2.0, 1.0, 1.0]]))
    assert val[0] == pytest.approx(np.log(3.0), abs=1e-14)


def test_log_density_matches_scipy():
    rng = make_rng(2)
    th = rng.uniform(0.5, 5, size=(50, 3))
    x = dirichlet_sample(th, rng)
    ref = [stats.dirichlet(t).logpdf(xx) for t, xx in zip(th, x)]
    np.testing.assert_allclose(dirichlet_log_density(x, th), ref, rtol=1e-12)


def test_normalisation_by_monte_carlo():
    n = 200_000
    u = dirichlet_sample(np.ones((n, 3)), make_rng(3))  # uniform on the simplex
    dens = np.exp(dirichlet_log_density(u, np.tile([2.0, 3.0, 4.0], (n, 1))))
    # simplex area in (x1, x2) coordinates is 1/2
    assert abs(dens.mean() * 0.5 - 1.0) < 0.01


def test_boundary_errors():
    with pytest.raises(BoundaryError):
        dirichlet_log_density(np.array([[0.0, 0.5, 0.5]]), np.array([[0.7, 1.0, 1.0]]))
    with pytest.raises(BoundaryError):
        dirichlet_score(np.array([[0.0, 0.5, 0.5]]), np.array([[2.0, 1.0, 1.0]]))


def test_score_center_value():
    s = dirichlet_score(np.array([[1 / 3, 1 / 3, 1 / 3]]), np.ones((1, 3)))
    # psi(3) - psi(1) = 1 + 1/2
    np.testing.assert_allclose(s, np.log(1 / 3) + 1.5, atol=1e-13)
    assert s[0, 0] == pytest.approx(0.4014, abs=1e-4)


def test_score_matches_finite_differences():
    rng = make_rng(4)
    th = rng.uniform(0.5, 5, size=(100, 3))
    x = dirichlet_sample(th, rng)
    s = dirichlet_score(x, th)
    h = 1e-5
    fd = np.empty_like(s)
    for j in range(3):
        tp, tm = th.copy(), th.copy()
        tp[:, j] += h
        tm[:, j] -= h
        fd[:, j] = (dirichlet_log_density(x, tp) - dirichlet_log_density(x, tm)) / (2 * h)
    assert np.max(np.abs(s - fd)) < 1e-6


def test_score_permutation_symmetry():
    rng = make_rng(5)
    th = rng.uniform(0.5, 5, size=(10, 3))
    x = dirichlet_sample(th, rng)
    perm = [2, 0, 1]
    np.testing.assert_allclose(dirichlet_score(x[:, perm], th[:, perm]), dirichlet_score(x, th)[:, perm],
                               rtol=1e-13)


def test_score_has_zero_mean():
    n = 100_000
    th = np.tile([1.5, 3.0, 5.0], (n, 1))
    s = dirichlet_score(dirichlet_sample(th, make_rng(6)), th)
    assert np.all(np.abs(s.mean(axis=0)) < 3 * s.std(axis=0) / np.sqrt(n))


def test_log_ratio_identities():
    o = Dirichlet3()
    rng = make_rng(7)
    t0, t1, t2 = (rng.uniform(0.5, 5, size=(30, 3)) for _ in range(3))
    x = o.sample(t0, rng)
    np.testing.assert_allclose(o.log_ratio(x, t0, t1) + o.log_ratio(x, t1, t2), o.log_ratio(x, t0, t2),
                               atol=1e-12)
    assert np.all(o.log_ratio(x, t0, t0) == 0)


# ---------------------------------------------------------------- Gaussian KSA


def test_ksa_zero_at_center():
    assert gaussian1d_ksa_closed_form(0.7, 0.7, 0.3) == 0.0


def test_ksa_reference_value():
    # direct evaluation of the normal pdf ratio
    pdf = stats.norm.pdf
    lam = 0.5
    direct = (pdf(1, 0 + lam) - pdf(1, 0 - lam)) / (pdf(1, 0 + lam) + pdf(1, 0 - lam)) / lam
    assert gaussian1d_ksa_closed_form(1.0, 0.0, lam) == pytest.approx(direct, rel=1e-14)
    # a four-digit value of 0.9244 is consistent with this
    assert abs(direct - 0.9244) < 5e-4


def test_ksa_bias_quadratic():
    bias = [abs(gaussian1d_ksa_closed_form(1.0, 0.0, lam) - 1.0) for lam in (0.5, 0.25)]
    assert 3.0 <= bias[0] / bias[1] <= 5.0


def test_gaussian_score():
    o = Gaussian1D()
    assert o.score(np.array([[1.5]]), np.array([[0.5]]))[0, 0] == 1.0


# ---------------------------------------------------------------- latent model


def test_latent_ratio_identity():
    o = LatentTwoStage()
    z = np.array([[-1.0], [0.3], [2.0]])
    np.testing.assert_array_equal(o.latent_ratio(z, np.full((3, 1), 0.4), np.full((3, 1), 0.4)), 1.0)


def test_latent_ratio_hand_value():
    o = LatentTwoStage()
    assert o.latent_ratio(np.array([[0.0]]), np.array([[1.0]]), np.array([[-1.0]]))[0] == 1.0


def test_latent_marginal_moments():
    n = 100_000
    x, _ = LatentTwoStage().sample_latent(np.full((n, 1), 2.0), make_rng(9))
    x = x[:, 0]
    assert abs(x.mean() - 2.0) < 3 * np.sqrt(2.0 / n)
    # var of the sample variance for a normal: 2 sigma^4 / n
    assert abs(x.var() - 2.0) < 3 * np.sqrt(2 * 4.0 / n)


def test_latent_marginal_density_normalised():
    o = LatentTwoStage()
    grid = np.linspace(-15, 15, 30001)[:, None]
    dens = np.exp(o.log_density(grid, np.full_like(grid, 1.0)))
    assert abs(np.trapezoid(dens, grid[:, 0]) - 1.0) < 1e-9


def test_make_oracle():
    assert make_oracle("dirichlet3").kind == "dirichlet3"
    with pytest.raises(ConfigurationError):
        make_oracle("poisson")


def test_delta_ksa_matches_gaussian_closed_form():
    from inferostatic.oracles import delta_kernel_ksa

    x = np.linspace(-3, 3, 13)[:, None]
    th = np.full_like(x, 0.4)
    np.testing.assert_allclose(delta_kernel_ksa(Gaussian1D(), x, th, 0.5)[:, 0],
                               gaussian1d_ksa_closed_form(x[:, 0], 0.4, 0.5), rtol=1e-13, atol=1e-15)


def test_delta_ksa_by_direct_enumeration():
    from itertools import product

    from inferostatic.oracles import delta_kernel_ksa

    o = Dirichlet3()
    x = np.array([[0.2, 0.3, 0.5]])
    th = np.array([[1.0, 2.0, 3.0]])
    num, den = np.zeros(3), 0.0
    for u in product([-1.0, 1.0], repeat=3):
        p = stats.dirichlet(th[0] + 0.25 * np.array(u)).pdf(x[0])
        num += np.array(u) * p
        den += p
    np.testing.assert_allclose(delta_kernel_ksa(o, x, th, 0.25)[0], num / den / 0.25, rtol=1e-12)
