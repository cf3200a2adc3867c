"""Diffusion scaling schedules and the closed-form reverse posterior.

Time runs from large t down to 0.  ``alpha_bar[0] == 1`` by convention,
so the t=1 posterior is deterministic.  Accelerated (DDIM-style)
stepping reuses the same posterior with the two alpha_bar values indexed
at consecutive subsequence times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DiffusionSchedule:
    alpha: np.ndarray      # (T+1,), alpha[0] == 1
    alpha_bar: np.ndarray  # (T+1,), cumulative products

    @property
    def t_max(self) -> int:
        return len(self.alpha) - 1

    def sqrt_ab(self, t: int) -> float:
        return float(np.sqrt(self.alpha_bar[t]))


@dataclass(frozen=True)
class TimeSubsequence:
    start: int
    stride: int
    times: tuple  # strictly decreasing, terminal 0

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def pairs(self):
        """Consecutive (t, t_prev) transitions, high to low."""
        return list(zip(self.times[:-1], self.times[1:]))


@dataclass(frozen=True)
class PosteriorParams:
    mean: np.ndarray
    var: float
    t: int


def build_schedule(t_max: int, beta_start: float = 1e-4,
                   beta_end: float = 0.02) -> DiffusionSchedule:
    """Linear-beta schedule; alpha_t = 1 - beta_t."""
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    betas = np.linspace(beta_start, beta_end, t_max)
    alpha = np.concatenate([[1.0], 1.0 - betas])
    alpha_bar = np.cumprod(alpha)
    return DiffusionSchedule(alpha=alpha, alpha_bar=alpha_bar)


def ddim_times(start: int, stride: int) -> TimeSubsequence:
    """Accelerated time grid [start, start-stride, ..., stride, 0]."""
    if stride < 1 or start < stride:
        raise ValueError(f"need start >= stride >= 1, got ({start}, {stride})")
    if start % stride:
        raise ValueError(f"stride {stride} does not divide start {start}")
    times = tuple(range(start, -1, -stride))
    return TimeSubsequence(start=start, stride=stride, times=times)


def forward_marginal(x0: np.ndarray, t: int, schedule: DiffusionSchedule,
                     noise: np.ndarray | None = None) -> np.ndarray:
    """sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise."""
    if t > schedule.t_max:
        raise ValueError(f"t={t} exceeds schedule length {schedule.t_max}")
    ab = schedule.alpha_bar[t]
    out = np.sqrt(ab) * np.asarray(x0, dtype=np.float64)
    if noise is not None:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != out.shape:
            raise ValueError("noise shape mismatch")
        out = out + np.sqrt(1.0 - ab) * noise
    return out


def posterior_coeffs(t: int, schedule: DiffusionSchedule,
                     t_prev: int | None = None):
    """Coefficients (c_xt, c_x0, var) of the reverse posterior t -> t_prev.

    mean = c_xt * x_t + c_x0 * x0;  t_prev defaults to t - 1.
    """
    if t < 1:
        raise ValueError("no posterior at t=0")
    if t_prev is None:
        t_prev = t - 1
    if not 0 <= t_prev < t:
        raise ValueError(f"need 0 <= t_prev < t, got ({t}, {t_prev})")
    ab_t = schedule.alpha_bar[t]
    ab_p = schedule.alpha_bar[t_prev]
    a_eff = ab_t / ab_p
    c_xt = (1.0 - ab_p) / (1.0 - ab_t) * np.sqrt(a_eff)
    c_x0 = (1.0 - a_eff) / (1.0 - ab_t) * np.sqrt(ab_p)
    var = (1.0 - ab_p) / (1.0 - ab_t) * (1.0 - a_eff)
    return float(c_xt), float(c_x0), float(var)


def posterior_params(x_t: np.ndarray, x0_hat: np.ndarray, t: int,
                     schedule: DiffusionSchedule,
                     t_prev: int | None = None) -> PosteriorParams:
    c_xt, c_x0, var = posterior_coeffs(t, schedule, t_prev)
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    if x_t.shape != x0_hat.shape:
        raise ValueError("x_t / x0_hat shape mismatch")
    mean = c_xt * x_t + c_x0 * x0_hat
    return PosteriorParams(mean=mean, var=var,
                           t=t - 1 if t_prev is None else t_prev)


def posterior_sample(p: PosteriorParams,
                     noise: np.ndarray | None = None) -> np.ndarray:
    if noise is None or p.var == 0.0:
        return p.mean.copy()
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != p.mean.shape:
        raise ValueError("noise shape mismatch")
    return p.mean + np.sqrt(p.var) * noise
