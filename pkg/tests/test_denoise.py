"""Denoiser correctness: hand values, independent quadrature oracles for
the posterior-mean denoisers, Lipschitz bounds, ground-truth oracles, and
the Monte-Carlo divergence estimator."""

import numpy as np
import pytest

from csdmp import denoise, diffusion, metrics


# ---------------------------------------------------------------------------
# soft threshold
# ---------------------------------------------------------------------------

def test_soft_threshold_values():
    h = np.array([2.0, -0.5, -3.0])
    out = denoise.soft_threshold(h, 1.0)
    np.testing.assert_array_equal(out, [1.0, 0.0, -2.0])
    assert denoise.soft_threshold_divergence(h, 1.0) == 2.0
    np.testing.assert_array_equal(denoise.soft_threshold(h, 0.0), h)
    assert denoise.soft_threshold_divergence(h, 0.0) == 3.0
    with pytest.raises(ValueError):
        denoise.soft_threshold(h, -0.1)
    with pytest.raises(ValueError):
        denoise.soft_threshold_divergence(h, -0.1)


def test_soft_threshold_never_grows_magnitude():
    rng = np.random.Generator(np.random.PCG64(0))
    h = rng.standard_normal(1000) * 3
    out = denoise.soft_threshold(h, 0.7)
    assert np.all(np.abs(out) <= np.abs(h) + 1e-15)


# ---------------------------------------------------------------------------
# posterior-mean denoisers vs numeric-integration oracles
# ---------------------------------------------------------------------------

def _normal_pdf(x, var):
    return np.exp(-x * x / (2 * var)) / np.sqrt(2 * np.pi * var)


def _quadrature_gaussian_mean(h, sigma):
    x = np.linspace(-12, 12, 40001)
    w = _normal_pdf(h - x, sigma ** 2) * _normal_pdf(x, 1.0)
    return np.trapezoid(x * w, x) / np.trapezoid(w, x)


def _quadrature_bg_mean(h, sigma, rho):
    x = np.linspace(-12, 12, 40001)
    slab = _normal_pdf(h - x, sigma ** 2) * _normal_pdf(x, 1.0)
    num = rho * np.trapezoid(x * slab, x)
    den = ((1 - rho) * _normal_pdf(h, sigma ** 2)
           + rho * np.trapezoid(slab, x))
    return num / den


def test_mmse_gaussian_examples():
    h = np.array([2.0])
    np.testing.assert_array_equal(denoise.mmse_gaussian(h, 0.0), h)
    assert denoise.mmse_gaussian(h, 1.0)[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        denoise.mmse_gaussian(h, -1.0)


def test_mmse_gaussian_matches_quadrature():
    rng = np.random.Generator(np.random.PCG64(1))
    hs = rng.uniform(-4, 4, 100)
    for sigma in (0.3, 1.0, 2.0):
        got = denoise.mmse_gaussian(hs, sigma)
        want = np.array([_quadrature_gaussian_mean(h, sigma) for h in hs])
        np.testing.assert_allclose(got, want, atol=1e-8)


def test_mmse_bg_symmetry_and_reduction():
    assert denoise.mmse_bernoulli_gaussian(np.zeros(3), 0.5, 0.1)[0] == 0.0
    h = np.array([1.3, -0.4])
    np.testing.assert_allclose(
        denoise.mmse_bernoulli_gaussian(h, 0.7, 1.0),
        denoise.mmse_gaussian(h, 0.7))
    with pytest.raises(ValueError):
        denoise.mmse_bernoulli_gaussian(h, 0.5, 0.0)
    with pytest.raises(ValueError):
        denoise.mmse_bernoulli_gaussian(h, 0.5, 1.5)


def test_mmse_bg_matches_quadrature():
    got = denoise.mmse_bernoulli_gaussian(np.array([1.5]), 0.5, 0.1)[0]
    assert got == pytest.approx(_quadrature_bg_mean(1.5, 0.5, 0.1), abs=1e-8)
    # a few more operating points
    for h, s, rho in [(0.3, 0.2, 0.05), (-2.5, 1.0, 0.3), (4.0, 0.8, 0.5)]:
        got = denoise.mmse_bernoulli_gaussian(np.array([h]), s, rho)[0]
        assert got == pytest.approx(_quadrature_bg_mean(h, s, rho), abs=1e-8)


def test_mmse_bg_shrinks_and_is_odd():
    rng = np.random.Generator(np.random.PCG64(2))
    h = rng.standard_normal(500) * 2
    out = denoise.mmse_bernoulli_gaussian(h, 0.6, 0.2)
    assert np.all(np.abs(out) <= np.abs(h) + 1e-12)
    out_neg = denoise.mmse_bernoulli_gaussian(-h, 0.6, 0.2)
    np.testing.assert_allclose(out_neg, -out, rtol=1e-12)


def test_analytic_divergences_match_probing():
    # exact divergence formulas agree with a high-probe Monte-Carlo probe
    rng = np.random.Generator(np.random.PCG64(3))
    h = rng.standard_normal(2048) * 1.5
    cases = [
        (lambda v: denoise.mmse_gaussian(v, 0.8),
         denoise.mmse_gaussian_divergence(h, 0.8)),
        (lambda v: denoise.mmse_bernoulli_gaussian(v, 0.8, 0.2),
         denoise.mmse_bernoulli_gaussian_divergence(h, 0.8, 0.2)),
    ]
    for fn, want in cases:
        est = denoise.mc_sure_divergence(fn, h, eps_probe=1e-4, n_probes=50,
                                         seed=0)
        assert abs(est.value - want) / abs(want) < 0.05


@pytest.mark.parametrize("make", [
    lambda: denoise.make_soft_threshold(0.8),
    denoise.make_mmse_gaussian,
    lambda: denoise.make_mmse_bernoulli_gaussian(0.15),
])
def test_denoisers_are_nonexpansive(make):
    handle = make()
    rng = np.random.Generator(np.random.PCG64(4))
    for _ in range(50):
        h1 = rng.standard_normal(64) * 2
        h2 = rng.standard_normal(64) * 2
        d_out = np.linalg.norm(handle.fn(h1, 0.5) - handle.fn(h2, 0.5))
        d_in = np.linalg.norm(h1 - h2)
        assert d_out <= d_in + 1e-10


# ---------------------------------------------------------------------------
# ground-truth oracles
# ---------------------------------------------------------------------------

def test_oracle_denoiser_deterministic_at_t1():
    s = diffusion.build_schedule(20)
    x = np.linspace(0, 1, 8)
    r = np.sqrt(s.alpha_bar[1]) * x
    out = denoise.oracle_perfect_denoiser(r, 1, x, s)
    np.testing.assert_allclose(out, x, rtol=1e-12)
    with pytest.raises(ValueError):
        denoise.oracle_perfect_denoiser(r, 1, None, s)


def test_oracle_denoiser_scaled_identity():
    s = diffusion.build_schedule(100)
    x = np.linspace(-1, 1, 16)
    r = np.sqrt(s.alpha_bar[50]) * x
    out = denoise.oracle_perfect_denoiser(r, 50, x, s)
    np.testing.assert_allclose(out, np.sqrt(s.alpha_bar[49]) * x, rtol=1e-12)


def test_oracle_denoiser_sample_mean():
    s = diffusion.build_schedule(100)
    x = np.full(100_000, 0.5)
    r = np.sqrt(s.alpha_bar[50]) * x + 0.1
    rng = np.random.Generator(np.random.PCG64(5))
    out = denoise.oracle_perfect_denoiser(r, 50, x, s,
                                          noise=rng.standard_normal(x.shape))
    mean = diffusion.posterior_params(r, x, 50, s).mean
    assert abs(out.mean() - mean.mean()) < 0.02 * abs(mean.mean())


def test_oracle_filter_statistics():
    s = diffusion.build_schedule(200)
    rng = np.random.Generator(np.random.PCG64(6))
    x = rng.standard_normal(100_000)
    t = 100
    clean = denoise.oracle_gaussian_filter(None, t, x, s)
    np.testing.assert_allclose(clean, np.sqrt(s.alpha_bar[t]) * x)
    noisy = denoise.oracle_gaussian_filter(
        None, t, x, s, noise=rng.standard_normal(x.shape))
    resid = noisy - np.sqrt(s.alpha_bar[t]) * x
    target = 1.0 - s.alpha_bar[t]
    assert abs(resid.var() - target) / target < 0.03
    assert metrics.gaussianity_corr(resid[:4096]) >= 0.99
    with pytest.raises(ValueError):
        denoise.oracle_gaussian_filter(None, t, None, s)


def test_oracle_filter_custom_target_variance():
    s = diffusion.build_schedule(200)
    x = np.ones(10_000)
    rng = np.random.Generator(np.random.PCG64(7))
    out = denoise.oracle_gaussian_filter(
        None, 50, x, s, noise=rng.standard_normal(x.shape), target_var=0.0)
    np.testing.assert_allclose(out, np.sqrt(s.alpha_bar[50]) * x)


# ---------------------------------------------------------------------------
# Monte-Carlo divergence
# ---------------------------------------------------------------------------

def test_mc_divergence_identity():
    est = denoise.mc_sure_divergence(lambda h: h, np.zeros(4096),
                                     n_probes=10, seed=0)
    assert abs(est.value - 4096) / 4096 < 0.03


def _explicit_linear_map(n, seed):
    # diagonally dominant so the trace is large against probe variance
    rng = np.random.Generator(np.random.PCG64(seed))
    return 0.5 * np.eye(n) + 0.05 * rng.standard_normal((n, n))


def test_mc_divergence_linear_map_trace():
    rng = np.random.Generator(np.random.PCG64(8))
    A = _explicit_linear_map(8, 80)
    h = rng.standard_normal(8)
    est = denoise.mc_sure_divergence(lambda v: A @ v, h, n_probes=100, seed=1)
    assert abs(est.value - np.trace(A)) / abs(np.trace(A)) < 0.05


def test_mc_divergence_unbiased_for_linear_map():
    rng = np.random.Generator(np.random.PCG64(9))
    A = _explicit_linear_map(6, 81)
    h = rng.standard_normal(6)
    est = denoise.mc_sure_divergence(lambda v: A @ v, h, n_probes=10_000,
                                     seed=2)
    assert abs(est.value - np.trace(A)) / abs(np.trace(A)) < 0.01


def test_mc_divergence_soft_threshold():
    rng = np.random.Generator(np.random.PCG64(10))
    h = rng.standard_normal(4096) * 2
    want = denoise.soft_threshold_divergence(h, 1.0)
    est = denoise.mc_sure_divergence(lambda v: denoise.soft_threshold(v, 1.0),
                                     h, eps_probe=1e-3, n_probes=10, seed=3)
    assert abs(est.value - want) / want < 0.05


def test_mc_divergence_argument_validation():
    with pytest.raises(ValueError):
        denoise.mc_sure_divergence(lambda h: h, np.zeros(4), eps_probe=0.0)
    with pytest.raises(ValueError):
        denoise.mc_sure_divergence(lambda h: h, np.zeros(4), n_probes=0)
