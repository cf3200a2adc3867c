"""AMP and diffusion-message-passing iterations with their scalar
state-evolution predictors and noise-decoupling diagnostics.

Both solvers operate on a single flattened block (length-N signal,
length-M measurement).  The iterate of the diffusion solver lives on the
sqrt(alpha_bar_t)-scaled manifold; measurement consistency therefore
compares Phi x_t against sqrt(alpha_bar_t) y.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfinv

from . import denoise
from .denoise import DenoiserHandle, FilterHandle
from .diffusion import DiffusionSchedule, TimeSubsequence, posterior_coeffs
from .sensing import SensingOperator

EXPLOSION_FACTOR = 1e6


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# shared primitives (also used by the unfolded network for bit-exactness)
# ---------------------------------------------------------------------------

def grad_step_block(x, y, phi, coef):
    """x - coef * Phi^T (Phi x - y) on one block."""
    resid = phi @ x - y
    return x - coef * (phi.T @ resid)


# ---------------------------------------------------------------------------
# AMP
# ---------------------------------------------------------------------------

@dataclass
class AmpState:
    x: np.ndarray
    u: np.ndarray
    last_div: float = 0.0
    t: int = 0
    sigma_hat: float = 0.0


@dataclass
class StateEvolutionTrace:
    predicted: list = field(default_factory=list)
    empirical: list = field(default_factory=list)
    n_trials: int = 1
    times: list | None = None
    diverged_at: int | None = None


def amp_init(op: SensingOperator) -> AmpState:
    return AmpState(x=np.zeros(op.n), u=np.zeros(op.m), last_div=0.0, t=0)


def amp_step(st: AmpState, op: SensingOperator, y: np.ndarray,
             denoiser: DenoiserHandle, divergence_mode: str = "analytic",
             probe_seed: int = 0) -> AmpState:
    """One AMP update: residual with Onsager memory, pseudo-data, denoise."""
    if divergence_mode not in ("analytic", "mc_sure", "off"):
        raise ValueError(f"unknown divergence_mode {divergence_mode!r}")
    phi, m = op.phi, op.m
    u = y - phi @ st.x
    if divergence_mode != "off":
        u = u + st.u * (st.last_div / m)
    h = phi.T @ u + st.x
    if not np.all(np.isfinite(h)):
        raise SolverError(f"non-finite pseudo-data at iteration {st.t + 1}")
    sigma_eff = float(np.linalg.norm(u) / np.sqrt(m))
    x_new = denoiser.fn(h, sigma_eff)
    if divergence_mode == "off":
        div = 0.0
    elif denoiser.has_analytic_divergence and divergence_mode == "analytic":
        div = float(denoiser.divergence(h, sigma_eff))
    else:
        est = denoise.mc_sure_divergence(
            lambda hh: denoiser.fn(hh, sigma_eff), h, seed=probe_seed)
        div = est.value
    return AmpState(x=x_new, u=u, last_div=div, t=st.t + 1,
                    sigma_hat=sigma_eff)


def amp_reconstruct(y, op: SensingOperator, denoiser: DenoiserHandle,
                    n_iters: int, divergence_mode: str = "analytic",
                    x_true=None, probe_seed: int = 0):
    """Iterate amp_step from the zero state.

    Returns (x_hat, trace); the trace carries the per-iteration empirical
    mean squared deviation from ground truth when x_true is given.
    """
    if n_iters < 0:
        raise ValueError("n_iters must be >= 0")
    y = np.asarray(y, dtype=np.float64)
    st = amp_init(op)
    trace = StateEvolutionTrace(times=list(range(1, n_iters + 1)))
    y_norm = float(np.linalg.norm(y)) + 1e-300
    for k in range(n_iters):
        st = amp_step(st, op, y, denoiser, divergence_mode,
                      probe_seed=probe_seed + k)
        if x_true is not None:
            trace.empirical.append(float(np.mean((st.x - x_true) ** 2)))
        if np.linalg.norm(st.x) > EXPLOSION_FACTOR * y_norm:
            trace.diverged_at = st.t
            break
    return st.x, trace


def _gh_nodes(order=61):
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    return nodes * np.sqrt(2.0), weights / np.sqrt(np.pi)


def _parse_prior(prior_spec):
    if isinstance(prior_spec, str):
        if prior_spec == "gaussian":
            return ("gaussian", None)
        if prior_spec.startswith("bg:"):
            return ("bernoulli_gaussian", float(prior_spec.split(":", 1)[1]))
        raise ValueError(f"unknown prior {prior_spec!r}")
    kind, rho = prior_spec
    return (kind, rho)


def prior_second_moment(prior_spec) -> float:
    kind, rho = _parse_prior(prior_spec)
    return 1.0 if kind == "gaussian" else float(rho)


def draw_prior(prior_spec, n, rng) -> np.ndarray:
    kind, rho = _parse_prior(prior_spec)
    x = rng.standard_normal(n)
    if kind == "bernoulli_gaussian":
        x *= rng.random(n) < rho
    return x


def mmse_denoiser_for_prior(prior_spec) -> DenoiserHandle:
    kind, rho = _parse_prior(prior_spec)
    if kind == "gaussian":
        return denoise.make_mmse_gaussian()
    return denoise.make_mmse_bernoulli_gaussian(rho)


def _bg_posterior_variance_step(s2, delta, rho):
    """One exact SE step for the Bernoulli-Gaussian MMSE denoiser.

    Because eta is the exact posterior mean, E[(eta(h)-x)^2] equals
    E_h[Var(x|h)], a 1-D integral over the marginal of h.  Adaptive
    quadrature with a breakpoint at the responsibility threshold stays
    accurate where Gauss-Hermite nodes are too coarse (tiny tau).
    """
    from scipy import integrate
    from scipy.special import expit

    v = s2 / delta
    if v == 0.0:
        return 0.0
    a = 1.0 / (v * (1.0 + v))
    log_c = np.log((1.0 - rho) / rho) + 0.5 * np.log((1.0 + v) / v)

    def integrand(h):
        w = expit(-(log_c - 0.5 * a * h * h))
        var = w * (1.0 - w) * (h / (1.0 + v)) ** 2 + w * v / (1.0 + v)
        p = ((1.0 - rho) * np.exp(-h * h / (2 * v)) / np.sqrt(2 * np.pi * v)
             + rho * np.exp(-h * h / (2 * (1 + v))) / np.sqrt(2 * np.pi * (1 + v)))
        return p * var

    h_star = np.sqrt(max(2.0 * log_c / a, 0.0))
    hi = max(10.0, 20.0 * h_star)
    pts = sorted({h_star, 5.0 * np.sqrt(v), min(5.0 * np.sqrt(1 + v), hi)})
    val, _ = integrate.quad(integrand, 0.0, hi, points=pts, limit=400)
    return 2.0 * val


def amp_se_predict(prior_spec, delta, sigma0_sq, n_iters,
                   denoiser: DenoiserHandle | None = None,
                   gh_order: int = 61):
    """Scalar state-evolution recursion sigma^2 <- E[(eta(x+tau z)-x)^2]
    with tau^2 = sigma^2/delta.

    With the default (prior-matched MMSE) denoiser the expectation is the
    mean posterior variance and is evaluated exactly; for a custom
    denoiser it falls back to tensorized Gauss-Hermite quadrature, which
    loses accuracy once tau is tiny.
    """
    kind, rho = _parse_prior(prior_spec)
    out = []
    s2 = float(sigma0_sq)
    if denoiser is None:
        for _ in range(n_iters):
            v = s2 / delta
            if kind == "gaussian":
                s2 = v / (1.0 + v)  # posterior variance, constant in h
            else:
                s2 = _bg_posterior_variance_step(s2, delta, rho)
            out.append(s2)
        return np.array(out)

    z, wz = _gh_nodes(gh_order)
    xs, wx = _gh_nodes(gh_order)

    def expect(tau):
        if tau == 0.0:
            return 0.0
        # slab/gaussian part: x ~ N(0,1)
        X, Z = np.meshgrid(xs, z, indexing="ij")
        err = (denoiser.fn((X + tau * Z).ravel(), tau).reshape(X.shape) - X) ** 2
        slab = float((wx[:, None] * wz[None, :] * err).sum())
        if kind == "gaussian":
            return slab
        # spike part: x = 0
        err0 = denoiser.fn(tau * z, tau) ** 2
        spike = float((wz * err0).sum())
        return rho * slab + (1.0 - rho) * spike

    for _ in range(n_iters):
        s2 = expect(np.sqrt(s2 / delta))
        out.append(s2)
    return np.array(out)


# ---------------------------------------------------------------------------
# DMP
# ---------------------------------------------------------------------------

@dataclass
class DmpState:
    x: np.ndarray
    u: np.ndarray
    h: np.ndarray
    last_div: float = 0.0
    sigma_hat: float = 0.0
    t: int = 0


@dataclass
class DmpDiagnostics:
    """Per-subsequence-time empirical noise statistics (needs ground truth)."""
    times: list = field(default_factory=list)
    r_var: list = field(default_factory=list)       # Var(r_t - sqrt(ab_t) x)
    x_var: list = field(default_factory=list)       # Var(x_prev - sqrt(ab_prev) x)
    r_gauss_corr: list = field(default_factory=list)
    diverged_at: int | None = None


def dmp_step(st: DmpState, op: SensingOperator, y, schedule: DiffusionSchedule,
             filt: FilterHandle, reverse_model, t: int, t_prev: int,
             onsager_mode: str = "off", probe_seed: int = 0) -> DmpState:
    """One diffusion-message-passing update from time t to t_prev.

    reverse_model is a callable (r, t, t_prev) -> x_{t_prev}.
    onsager_mode: 'off' drops the correction, 'oracle' uses the exact
    divergence of the oracle filter (zero: it ignores its input),
    'mc_sure' probes the composite filter+reverse map once.
    """
    if onsager_mode not in ("off", "oracle", "mc_sure"):
        raise ValueError(f"unknown onsager_mode {onsager_mode!r}")
    phi, m = op.phi, op.m
    sab = schedule.sqrt_ab(t)
    resid = phi @ st.x - sab * np.asarray(y, dtype=np.float64)
    s = st.x - sab * (phi.T @ resid)
    u_new = -resid
    d_in = s
    if onsager_mode != "off" and st.last_div != 0.0:
        ons = (phi.T @ st.u) * (st.last_div / m)
        d_in = s + sab * ons
        u_new = u_new + st.u * (st.last_div / m)
    if not np.all(np.isfinite(d_in)):
        raise SolverError(f"non-finite filter input at time t={t}")
    r = filt.fn(d_in, t)
    x_new = reverse_model(r, t, t_prev)
    if onsager_mode == "mc_sure":
        est = denoise.mc_sure_divergence(
            lambda hh: reverse_model(filt.fn(hh, t), t, t_prev),
            d_in, seed=probe_seed)
        div = est.value
    else:
        div = 0.0
    h_new = phi.T @ u_new + x_new
    sigma_hat = float(np.linalg.norm(u_new) / np.sqrt(m))
    return DmpState(x=x_new, u=u_new, h=h_new, last_div=div,
                    sigma_hat=sigma_hat, t=t_prev)


def dmp_reconstruct(y, op: SensingOperator, schedule: DiffusionSchedule,
                    times: TimeSubsequence, filt: FilterHandle, reverse_model,
                    onsager_mode: str = "off", x_true=None, rng=None,
                    init: str = "adjoint", x_init=None, probe_seed: int = 0):
    """Walk the time subsequence down to 0; returns (x0_hat, diagnostics).

    Default start: x_K = sqrt(ab_K) Phi^T y + sqrt(1-ab_K) g.  Pass
    init='noise' for a pure-noise start or x_init for an explicit one.
    """
    if times.times[-1] != 0:
        raise ValueError("time subsequence must terminate at 0")
    y = np.asarray(y, dtype=np.float64)
    K = times.times[0]
    ab_k = schedule.alpha_bar[K]
    if x_init is not None:
        x = np.array(x_init, dtype=np.float64)
    else:
        g = rng.standard_normal(op.n) if rng is not None else np.zeros(op.n)
        if init == "noise":
            x = g.copy()
        elif init == "adjoint":
            x = np.sqrt(ab_k) * (op.phi.T @ y) + np.sqrt(1.0 - ab_k) * g
        else:
            raise ValueError(f"unknown init {init!r}")
    st = DmpState(x=x, u=np.zeros(op.m), h=np.zeros(op.n), t=K)
    diag = DmpDiagnostics()
    y_norm = float(np.linalg.norm(y)) + 1e-300
    for k, (t, t_prev) in enumerate(times.pairs()):
        st = dmp_step(st, op, y, schedule, filt, reverse_model, t, t_prev,
                      onsager_mode=onsager_mode, probe_seed=probe_seed + k)
        if x_true is not None:
            # filters wrapped in MemoizingFilter expose the reverse
            # model's input for noise diagnostics
            r_last = getattr(filt, "last_output", None)
            if r_last is not None:
                noise_r, _ = effective_noise(r_last, x_true,
                                             schedule.sqrt_ab(t))
                diag.times.append(t)
                diag.r_var.append(float(np.mean(noise_r ** 2)))
                qq = qq_quantiles(noise_r, min(256, noise_r.size))
                diag.r_gauss_corr.append(qq.pearson())
            noise_x, _ = effective_noise(st.x, x_true,
                                         schedule.sqrt_ab(t_prev))
            diag.x_var.append(float(np.mean(noise_x ** 2)))
        if np.linalg.norm(st.x) > EXPLOSION_FACTOR * max(y_norm, 1.0):
            diag.diverged_at = t_prev
            break
    return st.x, diag


class MemoizingFilter(FilterHandle):
    """Wraps a FilterHandle, remembering the last output for diagnostics."""

    def __init__(self, inner: FilterHandle):
        def fn(d, t):
            out = inner.fn(d, t)
            self.last_output = out
            return out
        super().__init__(kind=inner.kind, fn=fn,
                         needs_ground_truth=inner.needs_ground_truth)
        self.last_output = None


def make_oracle_reverse_model(x_true, schedule, rng=None):
    """Reverse model callable backed by the exact posterior with true x0."""

    def fn(r, t, t_prev):
        noise = rng.standard_normal(np.asarray(r).shape) if rng is not None else None
        return denoise.oracle_perfect_denoiser(r, t, x_true, schedule,
                                               noise=noise, t_prev=t_prev)

    return fn


def dmp_se_predict(schedule: DiffusionSchedule, times: TimeSubsequence,
                   delta: float, reverse_model_spec: str = "oracle",
                   n_mc: int = 10 ** 5, seed: int = 0,
                   filter_reset: bool = True):
    """Monte-Carlo state evolution of the diffusion solver.

    Returns (times_r, r_var, x_var): predicted Var(r_t - sqrt(ab_t) x) at
    each non-terminal subsequence time and predicted Var of the reverse
    output against sqrt(ab_prev) x for each transition.  With the perfect
    filter (filter_reset=True) the filter output variance is pinned to
    1 - alpha_bar_t; otherwise the recursion propagates the previous
    reverse-output variance.
    """
    if n_mc < 100:
        raise ValueError("n_mc must be >= 100")
    if reverse_model_spec not in ("oracle", "oracle_mean"):
        raise ValueError(f"unknown reverse_model_spec {reverse_model_spec!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    r_var, x_var, times_r = [], [], []
    s2 = None
    for t, t_prev in times.pairs():
        if filter_reset or s2 is None:
            s2 = 1.0 - schedule.alpha_bar[t]
        times_r.append(t)
        r_var.append(s2)
        c_xt, _, beta = posterior_coeffs(t, schedule, t_prev)
        # error after the reverse step: c_xt * (r - sqrt(ab_t) x) + sqrt(beta) xi
        z = rng.standard_normal(n_mc)
        err = c_xt * np.sqrt(s2) * z
        if reverse_model_spec == "oracle" and beta > 0:
            err = err + np.sqrt(beta) * rng.standard_normal(n_mc)
        s2 = float(np.mean(err ** 2))
        x_var.append(s2)
    return times_r, np.array(r_var), np.array(x_var)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def effective_noise(est, x_true, scale: float):
    """est - scale * x_true and its RMS."""
    est = np.asarray(est, dtype=np.float64)
    x_true = np.asarray(x_true, dtype=np.float64)
    if est.shape != x_true.shape:
        raise ValueError("shape mismatch")
    noise = est - scale * x_true
    return noise, float(np.sqrt(np.mean(noise ** 2)))


@dataclass(frozen=True)
class QqData:
    normal_q: np.ndarray
    empirical_q: np.ndarray
    source: str = ""

    def pearson(self) -> float:
        a, b = self.normal_q, self.empirical_q
        return float(np.corrcoef(a, b)[0, 1])


def qq_quantiles(noise, n_points: int = 64, source: str = "") -> QqData:
    """Standardized empirical quantiles against normal quantiles."""
    noise = np.asarray(noise, dtype=np.float64).ravel()
    if n_points < 16 or n_points > noise.size:
        raise ValueError("need 16 <= n_points <= N")
    sd = noise.std()
    if sd == 0:
        raise ValueError("zero-variance input")
    z = (noise - noise.mean()) / sd
    probs = (np.arange(n_points) + 0.5) / n_points
    emp = np.quantile(z, probs)
    norm_q = np.sqrt(2.0) * erfinv(2.0 * probs - 1.0)
    return QqData(normal_q=norm_q, empirical_q=emp, source=source)


def two_column_csv(header, col_a, col_b) -> str:
    """Header line plus 17-significant-digit decimal rows."""
    lines = [",".join(header)]
    for a, b in zip(col_a, col_b):
        lines.append(f"{a:.17g},{b:.17g}")
    return "\n".join(lines) + "\n"
