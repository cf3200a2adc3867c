"""Image-quality metrics and the analytic multiply-add cost model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .solver import qq_quantiles

PSNR_IDENTICAL = float("inf")


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    gaussianity_corr: float | None = None
    per_image: list = field(default_factory=list)

    def rows(self):
        yield ("psnr_db", self.psnr_db)
        yield ("ssim", self.ssim)
        if self.gaussianity_corr is not None:
            yield ("gaussianity_corr", self.gaussianity_corr)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); +inf for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be > 0")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_taps(radius: int = 5, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    # separable 'valid' convolution
    out = np.apply_along_axis(lambda r: np.convolve(r, taps, mode="valid"),
                              1, img)
    out = np.apply_along_axis(lambda c: np.convolve(c, taps, mode="valid"),
                              0, out)
    return out


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM with the standard 11x11 sigma-1.5 Gaussian window."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < 11:
        raise ValueError("image must be at least 11x11")
    taps = _gaussian_taps()
    mu_a = _filter_valid(a, taps)
    mu_b = _filter_valid(b, taps)
    var_a = _filter_valid(a * a, taps) - mu_a * mu_a
    var_b = _filter_valid(b * b, taps) - mu_b * mu_b
    cov = _filter_valid(a * b, taps) - mu_a * mu_b
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def gaussianity_corr(noise: np.ndarray, n_points: int | None = None) -> float:
    """Pearson correlation of the empirical-vs-normal quantile pairs."""
    noise = np.asarray(noise, dtype=np.float64).ravel()
    if noise.size < 16:
        raise ValueError("need at least 16 samples")
    if n_points is None:
        n_points = min(256, noise.size)
    return qq_quantiles(noise, n_points).pearson()


# ---------------------------------------------------------------------------
# cost model
# ---------------------------------------------------------------------------

@dataclass
class CostReport:
    """Multiply-add counts (1 MAC = 2 FLOPs) per reconstruction component."""
    gradient_step: int
    step_resblock: int
    reverse_model: int
    mc_sure_alternative: int
    head: int
    tail: int
    n_steps: int

    @property
    def per_step(self) -> int:
        return self.gradient_step + self.step_resblock + self.reverse_model

    @property
    def total(self) -> int:
        return self.head + self.tail + self.n_steps * self.per_step

    @property
    def total_mc_sure(self) -> int:
        """Total with the learned Onsager block swapped for SURE probing."""
        per = self.gradient_step + self.mc_sure_alternative + self.reverse_model
        return self.head + self.tail + self.n_steps * per

    def rows(self):
        yield ("gradient_step", self.gradient_step)
        yield ("step_resblock", self.step_resblock)
        yield ("reverse_model", self.reverse_model)
        yield ("mc_sure_alternative", self.mc_sure_alternative)
        yield ("head", self.head)
        yield ("tail", self.tail)
        yield ("per_step", self.per_step)
        yield ("total", self.total)
        yield ("total_mc_sure", self.total_mc_sure)


def _conv_macs(c_in: int, c_out: int, hw: int) -> int:
    return c_in * c_out * 9 * hw


def flops_report(cfg, op, height: int, width: int,
                 n_probes: int = 1) -> CostReport:
    """Analytic per-component multiply-add counts for one reconstruction.

    cfg is an UnfoldedConfig; the SURE alternative is costed as
    (1 + n_probes) reverse-model evaluations (each probe re-runs the
    denoiser) per paper's cost argument, replacing the step ResBlock.
    """
    hw = height * width
    C = cfg.channels
    n_blocks = (height // cfg.block_size) * (width // cfg.block_size)
    # per block: Phi x (M*N) + Phi^T residual (M*N)
    grad = 2 * op.m * op.n * n_blocks
    rb_in = 1 + C
    rb_out = cfg.reverse_in_channels + C
    step_rb = (_conv_macs(rb_in, C, hw)
               + 4 * 2 * _conv_macs(C, C, hw)
               + _conv_macs(C, rb_out, hw))
    w = cfg.reverse_width
    rm = (_conv_macs(cfg.reverse_in_channels, w, hw)
          + _conv_macs(w, w, hw)
          + _conv_macs(w, cfg.reverse_in_channels, hw)
          + w * cfg.time_embed_dim)
    head = (_conv_macs(1, C, hw) + 4 * 2 * _conv_macs(C, C, hw)
            + _conv_macs(C, 1 + C, hw))
    tail = _conv_macs(cfg.reverse_in_channels, C, hw) + _conv_macs(C, 1, hw)
    return CostReport(
        gradient_step=grad,
        step_resblock=step_rb,
        reverse_model=rm,
        mc_sure_alternative=(1 + n_probes) * rm,
        head=head,
        tail=tail,
        n_steps=cfg.n_steps,
    )
