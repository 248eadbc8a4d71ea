import numpy as np
import pytest

from inferostatic.datagen import (
    RatioDataset,
    ScoreDataset,
    dataset_load,
    dataset_save,
    generate_events,
    generate_kse,
    generate_kse_alt,
    generate_ratio,
)
from inferostatic.errors import ParseError, SchemaVersionError
from inferostatic.oracles import Dirichlet3, Gaussian1D, LatentTwoStage, gaussian1d_ksa_closed_form
from inferostatic.samplers import KernelSpec, PairDistribution, PriorSpec, make_rng

STUDY_PRIOR = PriorSpec((0.5,) * 3, (5.0,) * 3)
LINE_PRIOR = PriorSpec((-1.0,), (1.0,))


def binned_means(key, values, edges, weights=None):
    """Per-bin weighted mean and its standard error."""
    idx = np.digitize(key, edges) - 1
    w = np.ones_like(values) if weights is None else weights
    out = []
    for b in range(len(edges) - 1):
        sel = idx == b
        if sel.sum() < 2000:
            continue
        ww, vv = w[sel], values[sel]
        mean = np.sum(ww * vv) / np.sum(ww)
        # SE of a ratio estimator (linearised)
        se = np.sqrt(np.sum((ww * (vv - mean)) ** 2)) / np.sum(ww)
        out.append((b, mean, se, sel))
    return out


# ---------------------------------------------------------------- KSE


def test_delta_targets_are_plus_minus_four():
    ds = generate_kse(Dirichlet3(), STUDY_PRIOR, KernelSpec("delta", 0.25), 5000, make_rng(0))
    assert set(np.unique(ds.y)) == {-4.0, 4.0}
    assert np.all(ds.weight == 1.0)


def test_rectangular_target_formula():
    k = KernelSpec("rectangular", 0.25)
    assert 0.5 / (0.25 * k.sigma_sq) == pytest.approx(6.0, rel=1e-15)


def test_targets_recompute_exactly():
    k = KernelSpec("rectangular", 0.4)
    ds = generate_kse(Dirichlet3(), STUDY_PRIOR, k, 3000, make_rng(1))
    assert np.array_equal(ds.u / (ds.lam * ds.sigma_sq), ds.y)
    assert np.all(np.abs(ds.y) <= 1 / (0.4 * k.sigma_sq))


def test_domain_redraws_counted():
    # widths larger than the distance to zero force some Theta + eps outside the domain
    ds = generate_kse(Dirichlet3(), STUDY_PRIOR, KernelSpec("delta", 0.7), 4000, make_rng(2))
    assert len(ds) == 4000
    assert ds.counters["domain_redraws"] > 0
    assert np.all(ds.theta + ds.lam * ds.u > 0)


@pytest.mark.parametrize("lam", [0.1, 0.5])
def test_binned_regression_reproduces_ksa(lam):
    n = 1_000_000
    ds = generate_kse(Gaussian1D(), LINE_PRIOR, KernelSpec("delta", lam), n, make_rng(3, int(lam * 10)))
    delta = (ds.x - ds.theta)[:, 0]
    ksa = gaussian1d_ksa_closed_form(ds.x[:, 0], ds.theta[:, 0], lam)
    z_ksa, z_true = [], []
    for _, mean, se, sel in binned_means(delta, ds.y[:, 0], np.linspace(-3, 3, 25)):
        z_ksa.append((mean - ksa[sel].mean()) / se)
        z_true.append((mean - delta[sel].mean()) / se)
    z_ksa = np.array(z_ksa)
    assert np.max(np.abs(z_ksa)) < 4
    assert abs(np.mean(z_ksa ** 2) - 1) < 0.8
    if lam == 0.5:
        # at this width the approximation is visibly distinct from the true score
        assert np.max(np.abs(z_true)) > 10


# ---------------------------------------------------------------- weighted variant


def test_alt_constant_widths_reduce_to_plain_target():
    k = KernelSpec("rectangular", 0.3)
    ds = generate_kse_alt(Dirichlet3(), STUDY_PRIOR, k, 2000, make_rng(4))
    np.testing.assert_allclose(ds.y, ds.u / (0.3 * k.sigma_sq), rtol=1e-14)


def test_alt_interior_weights_are_one():
    ds = generate_kse_alt(Dirichlet3(), STUDY_PRIOR, KernelSpec("delta", 0.25), 5000, make_rng(5))
    assert np.all(ds.weight == 1.0)
    assert ds.counters["zero_weight_drops"] > 0
    assert len(ds) + ds.counters["zero_weight_drops"] == 5000


def test_alt_pool_reuse():
    rng = make_rng(6)
    theta_p = STUDY_PRIOR.sample(1000, rng)
    x = Dirichlet3().sample(theta_p, rng)
    a = generate_kse_alt(Dirichlet3(), STUDY_PRIOR, KernelSpec("delta", 0.1), None, make_rng(7), pool=(theta_p, x))
    b = generate_kse_alt(Dirichlet3(), STUDY_PRIOR, KernelSpec("delta", 0.3), None, make_rng(7), pool=(theta_p, x))
    assert len(a) <= 1000 and len(b) <= 1000
    assert set(map(tuple, a.x)) <= set(map(tuple, x))


def test_alt_x_dependent_widths():
    k = KernelSpec("rectangular", lambda th, x: 0.1 + 0.2 * x)
    ds = generate_kse_alt(Dirichlet3(), STUDY_PRIOR, k, 2000, make_rng(8))
    lam_p = 0.1 + 0.2 * ds.x
    eps = lam_p * ds.u
    expected = (ds.lam ** 2 / lam_p ** 2) * eps / (ds.lam ** 2 * k.sigma_sq)
    np.testing.assert_allclose(ds.y, expected, rtol=1e-13)


def test_alt_zero_prior_denominator_dropped():
    rng = make_rng(9)
    theta_p = np.array([[10.0, 1.0, 1.0], [1.0, 1.0, 1.0]])  # first row outside the prior box
    x = Dirichlet3().sample(theta_p, rng)
    ds = generate_kse_alt(Dirichlet3(), STUDY_PRIOR, KernelSpec("delta", 0.01), None, rng, pool=(theta_p, x))
    assert len(ds) == 1
    assert ds.counters["zero_prior_drops"] == 1


def test_weighted_regression_matches_plain():
    n = 1_000_000
    lam = 0.5
    k = KernelSpec("delta", lam)
    plain = generate_kse(Gaussian1D(), LINE_PRIOR, k, n, make_rng(10))
    alt = generate_kse_alt(Gaussian1D(), LINE_PRIOR, k, n, make_rng(11))
    edges = np.linspace(-2.5, 2.5, 21)
    pm = {b: (m, s) for b, m, s, _ in binned_means((plain.x - plain.theta)[:, 0], plain.y[:, 0], edges)}
    am = {b: (m, s) for b, m, s, _ in
          binned_means((alt.x - alt.theta)[:, 0], alt.y[:, 0], edges, alt.weight)}
    z = [(pm[b][0] - am[b][0]) / np.hypot(pm[b][1], am[b][1]) for b in pm.keys() & am.keys()]
    assert len(z) >= 15
    assert np.max(np.abs(z)) < 4


# ---------------------------------------------------------------- ratio data


def test_label_balance():
    n = 100_000
    ds = generate_ratio(Dirichlet3(), PairDistribution("iid", STUDY_PRIOR), n, make_rng(12))
    assert abs((ds.y == 0).sum() - n / 2) < 3 * np.sqrt(n / 4)
    assert set(np.unique(ds.y)) == {0, 1}
    assert not ds.has_latent


def test_labels_pick_generating_parameter():
    # wildly different parameters make the generating distribution identifiable
    pd = PairDistribution("reference", PriorSpec((-6.0,), (-5.0,)), theta_ref=(5.0,))
    ds = generate_ratio(Gaussian1D(), pd, 2000, make_rng(13))
    assert np.mean((ds.x[:, 0] > 0) == (ds.y == 1)) > 0.999


def test_identical_pairs_give_half():
    pd = PairDistribution("reference", PriorSpec((0.0,), (1e-12,)), theta_ref=(0.0,))
    ds = generate_ratio(Gaussian1D(), pd, 200_000, make_rng(14))
    for _, mean, se, _ in binned_means(ds.x[:, 0], ds.y.astype(float), np.linspace(-2, 2, 9)):
        assert abs(mean - 0.5) < 4 * se


def test_kernel_pair_separation():
    pd = PairDistribution("kernel", STUDY_PRIOR, kernel=KernelSpec("rectangular", 0.4))
    ds = generate_ratio(Dirichlet3(), pd, 20_000, make_rng(15), task="klre")
    assert np.max(np.abs(ds.theta0 - ds.theta1)) < 0.4


def test_latent_targets_match_labels():
    pd = PairDistribution("iid", LINE_PRIOR)
    ds = generate_ratio(LatentTwoStage(), pd, 500_000, make_rng(16), with_latent=True)
    assert ds.has_latent and np.all(ds.r_lat > 0)
    a = 1 / (1 + ds.r_lat)
    edges = np.linspace(-3, 3, 13)
    ym = binned_means(ds.x[:, 0], ds.y.astype(float), edges)
    for b, mean, se, sel in ym:
        diff = ds.y[sel] - a[sel]
        assert abs(diff.mean()) < 3 * diff.std() / np.sqrt(sel.sum())


def test_latent_requires_capability():
    from inferostatic.errors import ConfigurationError

    with pytest.raises(ConfigurationError):
        generate_ratio(Gaussian1D(), PairDistribution("iid", LINE_PRIOR), 10, make_rng(0), with_latent=True)


# ---------------------------------------------------------------- files


def test_score_round_trip(tmp_path):
    ds = generate_kse(Dirichlet3(), STUDY_PRIOR, KernelSpec("rectangular", 0.4), 500, make_rng(17))
    dataset_save(ds, tmp_path / "s.csv")
    back = dataset_load(tmp_path / "s.csv")
    assert isinstance(back, ScoreDataset) and back.task == "kse"
    for name in ("x", "theta", "y", "weight", "u", "lam"):
        assert np.array_equal(getattr(back, name), getattr(ds, name))
    assert back.sigma_sq == ds.sigma_sq


def test_ratio_round_trip_with_latent(tmp_path):
    ds = generate_ratio(LatentTwoStage(), PairDistribution("iid", LINE_PRIOR), 300, make_rng(18), with_latent=True)
    dataset_save(ds, tmp_path / "r.csv")
    back = dataset_load(tmp_path / "r.csv")
    assert isinstance(back, RatioDataset)
    for name in ("x", "theta0", "theta1", "y", "z", "r_lat"):
        assert np.array_equal(getattr(back, name), getattr(ds, name))


def test_events_round_trip(tmp_path):
    ev = generate_events(Dirichlet3(), (1.0, 2.0, 3.0), 50, make_rng(19))
    dataset_save(ev, tmp_path / "e.csv")
    back = dataset_load(tmp_path / "e.csv")
    assert np.array_equal(back.x, ev.x) and back.kind == "events"


def test_large_file_row_count(tmp_path):
    ds = generate_ratio(Dirichlet3(), PairDistribution("iid", STUDY_PRIOR), 100_000, make_rng(20))
    dataset_save(ds, tmp_path / "big.csv")
    assert len(dataset_load(tmp_path / "big.csv")) == 100_000


def test_wrong_version(tmp_path):
    ds = generate_events(Gaussian1D(), (0.0,), 5, make_rng(0))
    p = tmp_path / "v.csv"
    dataset_save(ds, p)
    p.write_text(p.read_text().replace("version=1", "version=99", 1))
    with pytest.raises(SchemaVersionError):
        dataset_load(p)


def test_parse_error_reports_line(tmp_path):
    ds = generate_events(Gaussian1D(), (0.0,), 5, make_rng(0))
    p = tmp_path / "bad.csv"
    dataset_save(ds, p)
    lines = p.read_text().splitlines()
    lines[4] = "1.0,abc"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as info:
        dataset_load(p)
    assert info.value.line == 5
