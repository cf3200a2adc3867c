"""Image-quality metric values against hand math and an independent
reference implementation, plus the analytic cost model."""

import numpy as np
import pytest

from csdmp import metrics, sensing
from csdmp.unfolded import UnfoldedConfig


def test_psnr_examples():
    img = np.random.Generator(np.random.PCG64(0)).random((8, 8))
    assert metrics.psnr(img, img) == float("inf")
    assert metrics.psnr(img, img + 0.1) == pytest.approx(20.0)
    # MSE 0.0025 -> 10 log10(400)
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.05)
    assert metrics.psnr(a, b) == pytest.approx(26.0205999132, rel=1e-9)
    with pytest.raises(ValueError):
        metrics.psnr(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        metrics.psnr(a, b, peak=0.0)


def test_psnr_symmetry_and_noise_monotonicity():
    rng = np.random.Generator(np.random.PCG64(1))
    img = rng.random((32, 32))
    other = rng.random((32, 32))
    assert metrics.psnr(img, other) == metrics.psnr(other, img)
    g = rng.standard_normal(img.shape)
    vals = [metrics.psnr(img, img + s * g) for s in (0.01, 0.02, 0.05)]
    assert vals[0] > vals[1] > vals[2]


def test_ssim_identical_and_anticorrelated():
    rng = np.random.Generator(np.random.PCG64(2))
    img = rng.random((16, 16))
    assert metrics.ssim(img, img) == pytest.approx(1.0)
    binary = (rng.random((16, 16)) > 0.5).astype(float)
    assert metrics.ssim(binary, 1.0 - binary) < 0.0
    assert metrics.ssim(img, 1 - img) == metrics.ssim(1 - img, img)
    with pytest.raises(ValueError):
        metrics.ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_ssim_matches_reference_implementation():
    skimage_metrics = pytest.importorskip("skimage.metrics")
    rng = np.random.Generator(np.random.PCG64(3))
    a = rng.random((16, 16))
    b = np.clip(a + 0.1 * rng.standard_normal((16, 16)), 0, 1)
    want = skimage_metrics.structural_similarity(
        a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
        use_sample_covariance=False)
    assert metrics.ssim(a, b) == pytest.approx(want, abs=1e-6)


def test_gaussianity_corr():
    from scipy.special import erfinv
    probs = (np.arange(4096) + 0.5) / 4096
    grid = np.sqrt(2.0) * erfinv(2 * probs - 1)
    assert metrics.gaussianity_corr(grid) >= 0.9999
    rng = np.random.Generator(np.random.PCG64(4))
    heavy = rng.standard_normal(4096) ** 3
    assert metrics.gaussianity_corr(heavy) < 0.99
    with pytest.raises(ValueError):
        metrics.gaussianity_corr(np.ones(100))
    with pytest.raises(ValueError):
        metrics.gaussianity_corr(np.ones(4))


# ---------------------------------------------------------------------------
# cost model
# ---------------------------------------------------------------------------

def _default_report(height=32, width=32, stride=50):
    cfg = UnfoldedConfig(block_size=16, channels=8, stride=stride)
    op = sensing.gen_sensing_matrix(25, 256, seed=0)
    return metrics.flops_report(cfg, op, height, width)


def test_cost_doubling_area_doubles_conv_counts():
    small = _default_report(32, 32)
    big = _default_report(32, 64)
    assert big.step_resblock == 2 * small.step_resblock
    assert big.reverse_model < 2 * small.reverse_model  # time MLP is fixed
    assert big.head == 2 * small.head
    assert big.tail == 2 * small.tail


def test_cost_additivity_across_steps():
    two = _default_report(stride=50)
    four = _default_report(stride=25)
    assert two.total == two.head + two.tail + 2 * two.per_step
    assert four.total == four.head + four.tail + 4 * four.per_step
    assert four.per_step == two.per_step


def test_cost_learned_block_cheaper_than_probing():
    rep = _default_report()
    assert rep.step_resblock < rep.mc_sure_alternative
    assert rep.total < rep.total_mc_sure
    assert rep.mc_sure_alternative >= 2 * rep.reverse_model


def test_cost_totals_reproducible_integers():
    a, b = _default_report(), _default_report()
    for (na, va), (nb, vb) in zip(a.rows(), b.rows()):
        assert na == nb and va == vb
        assert isinstance(va, int)
