import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from inclusion_fwi.bayes import PosteriorSpec, default_prior
from inclusion_fwi.ensemble import (
    EnsembleConfig, GridSpec, LogPosterior, SamplerAbort, SamplerConfigError, derangement, draw_stretch,
    dominance_ratio, histograms, integrated_autocorr, membership_contour, mode_masses, run, step_ensemble,
    stretch_cdf, write_chains_csv, write_contour_csv,
)
from inclusion_fwi.geometry import DEFAULT_RECT, PRIOR_INCLUSION, TRUE_INCLUSION, default_model, inside_ellipse


def gauss(nu):
    return -0.5 * float(np.dot(nu, nu))


def _gauss_init(W, seed=0):
    return np.random.default_rng(seed).standard_normal((W, 7))


@pytest.fixture(scope="module")
def gaussian_run():
    cfg = EnsembleConfig(W=32, S=5000, B=1000, rng_seed=11)
    store, _ = run(None, cfg, logpost=gauss, init=_gauss_init(32))
    return cfg, store


def test_draw_stretch_values():
    assert draw_stretch(2.0, 0.0) == pytest.approx(0.5)
    assert draw_stretch(2.0, 1.0) == pytest.approx(2.0)
    assert draw_stretch(2.0, 0.5) == pytest.approx(1.125)
    with pytest.raises(SamplerConfigError):
        draw_stretch(1.0, 0.5)


def test_stretch_draws_ks():
    z = draw_stretch(2.0, np.random.default_rng(0).random(10**6))
    assert z.min() >= 0.5 and z.max() <= 2.0
    assert stats.kstest(z, lambda s: stretch_cdf(s, 2.0)).pvalue > 0.01


def test_derangements():
    rng = np.random.default_rng(0)
    assert np.array_equal(derangement(2, rng), [1, 0])
    counts = {}
    for _ in range(10_000):
        p = tuple(derangement(3, rng))
        counts[p] = counts.get(p, 0) + 1
    assert set(counts) == {(1, 2, 0), (2, 0, 1)}
    assert all(abs(c / 10_000 - 0.5) < 0.02 for c in counts.values())
    idx = np.arange(480)
    assert all(not np.any(derangement(480, rng) == idx) for _ in range(10**5 // 100))
    with pytest.raises(SamplerConfigError):
        derangement(1, rng)


def test_config_rules():
    with pytest.raises(SamplerConfigError, match="W > 2P"):
        EnsembleConfig(W=14)
    with pytest.raises(SamplerConfigError):
        EnsembleConfig(a=1.0)
    with pytest.raises(SamplerConfigError):
        EnsembleConfig(S=10, B=10)
    with pytest.raises(SamplerConfigError):
        EnsembleConfig(mesh_regime="adapted")
    assert EnsembleConfig(S=400).B == 80


def test_gaussian_target_moments(gaussian_run):
    cfg, store = gaussian_run
    x = store.post_burn(cfg.B)
    series = store.samples[cfg.B:].mean(axis=1)
    for j in range(7):
        tau = integrated_autocorr(series[:, j])
        se = series[:, j].std() * np.sqrt(tau / len(series))
        assert abs(x[:, j].mean()) < 3 * se
    assert np.all(np.abs(x.var(axis=0) - 1.0) < 0.1)
    assert 0.05 < store.acceptance_rate < 0.7


def test_gaussian_histograms_match_marginal(gaussian_run):
    cfg, store = gaussian_run
    x = store.post_burn(cfg.B)
    h = histograms(x)
    dens, edges = h["c_x"]
    cdf = np.concatenate([[0.0], np.cumsum(dens * np.diff(edges))])
    assert np.max(np.abs(cdf - stats.norm.cdf(edges))) < 0.05
    for key, val in h.items():
        if isinstance(key, tuple):
            d, ex, ey = val
            total = np.sum(d * np.outer(np.diff(ex), np.diff(ey)))
        else:
            d, ex = val
            total = np.sum(d * np.diff(ex))
        assert total == pytest.approx(1.0, abs=1e-9)


def test_stretch_factors_chi_square(gaussian_run):
    _, store = gaussian_run
    z = store.z[:3200].ravel()  # about 1e5 moves
    edges = draw_stretch(2.0, np.linspace(0, 1, 21))
    obs, _ = np.histogram(z, edges)
    assert stats.chisquare(obs, np.full(20, len(z) / 20)).pvalue > 0.01


def test_fixed_seed_is_bit_identical():
    cfg = EnsembleConfig(W=16, S=50, rng_seed=3)
    a, _ = run(None, cfg, logpost=gauss, init=_gauss_init(16))
    b, _ = run(None, cfg, logpost=gauss, init=_gauss_init(16))
    assert np.array_equal(a.samples, b.samples) and np.array_equal(a.log_post, b.log_post)
    c, _ = run(None, EnsembleConfig(W=16, S=50, rng_seed=4), logpost=gauss, init=_gauss_init(16))
    assert not np.array_equal(a.samples, c.samples)


def test_parallel_map_does_not_change_results():
    from concurrent.futures import ThreadPoolExecutor

    cfg = EnsembleConfig(W=16, S=30, rng_seed=5)
    a, _ = run(None, cfg, logpost=gauss, init=_gauss_init(16))
    with ThreadPoolExecutor(4) as ex:
        b, _ = run(None, cfg, logpost=gauss, init=_gauss_init(16), mapper=ex.map)
    assert np.array_equal(a.samples, b.samples)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_affine_invariance(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((7, 7)) + 3 * np.eye(7)
    b = rng.standard_normal(7)
    X = _gauss_init(16, seed)
    Y = np.linalg.solve(A, (X - b).T).T
    target = lambda y: gauss(A @ y + b)
    for k in range(5):
        X1, lx, ax, _, _ = step_ensemble(X, np.array([gauss(x) for x in X]), gauss, 2.0,
                                         np.random.default_rng(100 + k))
        Y1, ly, ay, _, _ = step_ensemble(Y, np.array([target(y) for y in Y]), target, 2.0,
                                         np.random.default_rng(100 + k))
        assert np.array_equal(ax, ay)
        assert np.allclose(A @ Y1.T + b[:, None], X1.T, atol=1e-9)
        X, Y = X1, Y1


def test_identical_partner_at_unit_stretch_is_accepted():
    X = _gauss_init(16)
    X[1] = X[0]
    flat = lambda nu: 0.0
    # equal densities: every proposal is accepted whatever z is, since z^{P-1} >= 1 or u small
    _, _, acc, z, _ = step_ensemble(X, np.zeros(16), flat, 2.0, np.random.default_rng(0))
    assert np.all(acc[z >= 1.0])


def test_collapsed_init_is_rejected():
    with pytest.raises(SamplerAbort, match="collapsed"):
        run(None, EnsembleConfig(W=16, S=10), logpost=gauss, init=np.ones((16, 7)))
    with pytest.raises(SamplerAbort):
        run(None, EnsembleConfig(W=16, S=10), logpost=gauss, init=np.full((16, 7), np.nan))
    with pytest.raises(SamplerConfigError):
        run(None, EnsembleConfig(W=16, S=10), logpost=gauss, init=np.ones((15, 7)))


def test_rejection_window_abort_keeps_partial_chains():
    # a needle target: everything away from the starting walkers is -inf
    X = _gauss_init(16)
    keys = {tuple(x) for x in X}
    needle = lambda nu: 0.0 if tuple(nu) in keys else -np.inf
    with pytest.raises(SamplerAbort) as err:
        run(None, EnsembleConfig(W=16, S=300, reject_window=100), logpost=needle, init=X)
    store = err.value.store
    assert store is not None and store.samples.shape[0] == 100
    assert np.all(np.isfinite(store.log_post))


def _prior_spec():
    mean, cov = default_prior(default_model())
    nu0 = np.r_[PRIOR_INCLUSION.to_array()[:5], mean]
    return PosteriorSpec(nu0, cov, np.inf, [np.zeros((2, 2))])


def test_prior_only_target_matches_truncated_prior():
    spec = _prior_spec()
    logpost = LogPosterior(spec, None)
    assert logpost.prior_only
    # autocorrelation times reach ~300 steps inside the constraint set
    cfg = EnsembleConfig(W=32, S=12000, B=2400, rng_seed=2)
    store, _ = run(spec, cfg, logpost=logpost)
    x = store.post_burn(cfg.B)
    assert all(spec.feasible(v) for v in x[::97])
    ref = spec.sample_prior(100_000, np.random.default_rng(9))
    sd = ref.std(axis=0)
    assert np.all(np.abs(x.mean(axis=0) - ref.mean(axis=0)) < 0.05 * np.maximum(sd, np.abs(ref.mean(axis=0))))
    assert np.all(np.abs(x.std(axis=0) / sd - 1.0) < 0.05)


def test_forward_failures_are_rejections():
    spec = PosteriorSpec(np.zeros(7), np.eye(7), 1.0, [np.zeros(1)], constrained=False)

    def fragile(nu):
        if nu[0] > 0.5:
            raise FloatingPointError("blow-up")
        return [np.zeros(1)]

    store, _ = run(spec, EnsembleConfig(W=16, S=40, rng_seed=1), observe_fn=fragile)
    assert store.failures > 0
    assert np.all(store.samples[..., 0] <= 0.5) and np.all(np.isfinite(store.log_post))


def test_map_is_best_post_burn_sample(gaussian_run):
    cfg, store = gaussian_run
    nu = store.map_estimate(cfg.B)
    assert gauss(nu) == pytest.approx(store.post_burn_logp(cfg.B).max())


def test_membership_contour():
    grid = GridSpec(DEFAULT_RECT, 30, 30)
    same = np.tile(TRUE_INCLUSION.to_array(), (5, 1))
    c = membership_contour(same, grid)
    xs, ys = grid.centers()
    P = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
    expect = inside_ellipse(TRUE_INCLUSION, P).reshape(30, 30)
    assert np.array_equal(c, expect.astype(float))
    mixed = np.vstack([same, PRIOR_INCLUSION.to_array()])
    c2 = membership_contour(mixed, grid)
    assert c2.min() >= 0 and c2.max() <= 1
    with pytest.raises(SamplerConfigError):
        membership_contour(np.empty((0, 7)), grid)


def test_single_sample_histogram_is_one_bin():
    h = histograms(TRUE_INCLUSION.to_array()[None, :])
    dens, _ = h["rho"]
    assert np.count_nonzero(dens) == 1


def test_mode_masses_counts_separated_modes():
    rng = np.random.default_rng(0)
    one = rng.normal([2, 4], 0.05, (4000, 2))
    m1 = mode_masses(one[:, 0], one[:, 1], (0.05, 0.1), ((1.5, 2.5), (3, 5)))
    assert dominance_ratio(m1) >= 2.0 and m1.sum() == pytest.approx(1.0)
    two = np.vstack([one, rng.normal([2.2, 3.4], 0.05, (3000, 2))])
    m2 = mode_masses(two[:, 0], two[:, 1], (0.05, 0.1), ((1.5, 2.5), (3, 5)))
    assert len(m2) >= 2 and dominance_ratio(m2) < 2.0
    assert m2[0] == pytest.approx(4 / 7, abs=0.03)


def test_integrated_autocorr():
    rng = np.random.default_rng(0)
    assert integrated_autocorr(rng.standard_normal(20_000)) == pytest.approx(1.0, abs=0.15)
    phi = 0.8
    x = np.zeros(50_000)
    e = rng.standard_normal(50_000)
    for i in range(1, len(x)):
        x[i] = phi * x[i - 1] + e[i]
    assert integrated_autocorr(x) == pytest.approx((1 + phi) / (1 - phi), rel=0.15)
    assert integrated_autocorr(np.ones(10)) == 1.0


def test_output_files(tmp_path):
    cfg = EnsembleConfig(W=16, S=5, rng_seed=0)
    store, _ = run(None, cfg, logpost=gauss, init=_gauss_init(16))
    write_chains_csv(store, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0].startswith("step,walker,c_x") and lines[0].endswith("log_post,accepted")
    assert len(lines) == 1 + 5 * 16
    grid = GridSpec(DEFAULT_RECT, 4, 3)
    write_contour_csv(np.zeros((3, 4)), grid, tmp_path / "g.csv")
    rows = (tmp_path / "g.csv").read_text().splitlines()
    assert len(rows) == 4 and len(rows[0].split(",")) == 5
