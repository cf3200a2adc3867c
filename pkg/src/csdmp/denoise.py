"""Pluggable denoisers, closed-form verification oracles, and the
Monte-Carlo divergence estimator used for Onsager corrections.

Analytic denoisers take the noisy vector plus the effective noise std
``sigma_eff`` (std of the Gaussian noise in the pseudo-data) and expose
an exact divergence where one exists.  Oracle implementations require
the ground-truth signal and exist only for state-evolution verification.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from . import diffusion


@dataclass
class DenoiserHandle:
    kind: str
    fn: Callable                      # fn(h, sigma_eff) -> ndarray
    divergence: Callable | None = None  # divergence(h, sigma_eff) -> float
    needs_ground_truth: bool = False
    time_conditioned: bool = False

    @property
    def has_analytic_divergence(self) -> bool:
        return self.divergence is not None


@dataclass
class FilterHandle:
    kind: str
    fn: Callable                      # fn(d, t) -> ndarray
    needs_ground_truth: bool = False


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    n_probes: int
    eps_probe: float
    seed: int


# ---------------------------------------------------------------------------
# analytic denoisers
# ---------------------------------------------------------------------------

def soft_threshold(h: np.ndarray, tau: float) -> np.ndarray:
    if tau < 0:
        raise ValueError("tau must be >= 0")
    h = np.asarray(h, dtype=np.float64)
    return np.sign(h) * np.maximum(np.abs(h) - tau, 0.0)


def soft_threshold_divergence(h: np.ndarray, tau: float) -> float:
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return float(np.count_nonzero(np.abs(h) > tau))


def mmse_gaussian(h: np.ndarray, sigma_eff: float) -> np.ndarray:
    """Posterior mean under a unit-Gaussian prior: h / (1 + sigma_eff^2)."""
    if sigma_eff < 0:
        raise ValueError("sigma_eff must be >= 0")
    return np.asarray(h, dtype=np.float64) / (1.0 + sigma_eff ** 2)


def mmse_gaussian_divergence(h: np.ndarray, sigma_eff: float) -> float:
    return np.asarray(h).size / (1.0 + sigma_eff ** 2)


def _bg_responsibility(h, v, rho):
    # w(h) = P(slab | h);  log-space to stay stable for tiny v
    a = 1.0 / (v * (1.0 + v))
    log_r = (np.log((1.0 - rho) / rho) + 0.5 * np.log((1.0 + v) / v)
             - 0.5 * a * h * h)
    return expit(-log_r), a


def mmse_bernoulli_gaussian(h: np.ndarray, sigma_eff: float,
                            rho: float) -> np.ndarray:
    """Posterior mean for the prior (1-rho) delta_0 + rho N(0,1)."""
    if not 0 < rho <= 1:
        raise ValueError("rho must be in (0, 1]")
    h = np.asarray(h, dtype=np.float64)
    if rho == 1.0:
        return mmse_gaussian(h, sigma_eff)
    v = sigma_eff ** 2
    if v == 0.0:
        return h.copy()
    w, _ = _bg_responsibility(h, v, rho)
    return w * h / (1.0 + v)


def mmse_bernoulli_gaussian_divergence(h: np.ndarray, sigma_eff: float,
                                       rho: float) -> float:
    if not 0 < rho <= 1:
        raise ValueError("rho must be in (0, 1]")
    h = np.asarray(h, dtype=np.float64)
    if rho == 1.0:
        return mmse_gaussian_divergence(h, sigma_eff)
    v = sigma_eff ** 2
    if v == 0.0:
        return float(h.size)
    w, a = _bg_responsibility(h, v, rho)
    deriv = w * (1.0 + (1.0 - w) * a * h * h) / (1.0 + v)
    return float(deriv.sum())


def make_soft_threshold(tau: float) -> DenoiserHandle:
    return DenoiserHandle(
        kind="soft_threshold",
        fn=lambda h, sigma_eff: soft_threshold(h, tau),
        divergence=lambda h, sigma_eff: soft_threshold_divergence(h, tau))


def make_mmse_gaussian() -> DenoiserHandle:
    return DenoiserHandle(
        kind="mmse_gaussian", fn=mmse_gaussian,
        divergence=mmse_gaussian_divergence)


def make_mmse_bernoulli_gaussian(rho: float) -> DenoiserHandle:
    return DenoiserHandle(
        kind="mmse_bernoulli_gaussian",
        fn=lambda h, s: mmse_bernoulli_gaussian(h, s, rho),
        divergence=lambda h, s: mmse_bernoulli_gaussian_divergence(h, s, rho))


# ---------------------------------------------------------------------------
# ground-truth oracles (state-evolution verification only)
# ---------------------------------------------------------------------------

def oracle_perfect_denoiser(r_t, t, x_true, schedule, noise=None,
                            t_prev=None):
    """One exact reverse step: sample the closed-form posterior with the
    true x0 plugged in.  ``noise=None`` returns the posterior mean."""
    if x_true is None:
        raise ValueError("oracle denoiser requires ground truth")
    params = diffusion.posterior_params(r_t, x_true, t, schedule,
                                        t_prev=t_prev)
    return diffusion.posterior_sample(params, noise)


def oracle_gaussian_filter(d, t, x_true, schedule, noise=None,
                           target_var=None):
    """Perfect filter stand-in: emits sqrt(alpha_bar_t) x_true plus white
    Gaussian noise of the requested variance (defaults to 1 - alpha_bar_t,
    the marginal variance the reverse model expects)."""
    if x_true is None:
        raise ValueError("oracle filter requires ground truth")
    x_true = np.asarray(x_true, dtype=np.float64)
    if target_var is None:
        target_var = 1.0 - schedule.alpha_bar[t]
    out = np.sqrt(schedule.alpha_bar[t]) * x_true
    if noise is not None and target_var > 0:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != x_true.shape:
            raise ValueError("noise shape mismatch")
        out = out + np.sqrt(target_var) * noise
    return out


def make_oracle_filter(x_true, schedule, rng=None,
                       target_var_fn=None) -> FilterHandle:
    """FilterHandle closing over ground truth; draws its own noise from
    ``rng`` (None means deterministic output)."""

    def fn(d, t):
        tv = None if target_var_fn is None else target_var_fn(t)
        noise = None
        if rng is not None:
            noise = rng.standard_normal(np.asarray(x_true).shape)
        return oracle_gaussian_filter(d, t, x_true, schedule, noise=noise,
                                      target_var=tv)

    return FilterHandle(kind="oracle_gaussian_filter", fn=fn,
                        needs_ground_truth=True)


# ---------------------------------------------------------------------------
# Monte-Carlo divergence (SURE probing)
# ---------------------------------------------------------------------------

def mc_sure_divergence(denoiser_fn, h, eps_probe=1e-3, n_probes=1,
                       seed=0) -> DivergenceEstimate:
    """Estimate div(eta) at h as mean over probes of
    g . [eta(h + eps g) - eta(h)] / eps with g ~ N(0, I).

    The probe step is scaled by max(1, ||h||_inf) to avoid cancellation
    on large-amplitude inputs.
    """
    if eps_probe <= 0:
        raise ValueError("eps_probe must be > 0")
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    h = np.asarray(h, dtype=np.float64)
    eps = eps_probe * max(1.0, float(np.max(np.abs(h))) if h.size else 1.0)
    rng = np.random.Generator(np.random.PCG64(seed))
    base = denoiser_fn(h)
    total = 0.0
    for _ in range(n_probes):
        g = rng.standard_normal(h.shape)
        total += float(np.dot(g.ravel(),
                              (denoiser_fn(h + eps * g) - base).ravel())) / eps
    return DivergenceEstimate(value=total / n_probes, n_probes=n_probes,
                              eps_probe=eps_probe, seed=seed)
