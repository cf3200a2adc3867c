"""Trainable unfolded reconstruction network.

Each unfolded step mirrors one solver iteration: a learnable-step-size
gradient descent on the data fidelity, a convolutional residual block
standing in for the filter + Onsager correction (carrying a C-channel
feature memory z between steps), and a small time-conditioned reverse
model that predicts x0 and steps through the closed-form posterior mean.
A head block maps the adjoint image to the starting iterate and initial
feature map; a tail block refines the final output.

Two variants: the reverse-model weights can be frozen at their
pretrained values (``freeze_diffusion=True``) or trained end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import diffusion, sensing
from .autodiff import Tensor
from .solver import grad_step_block


@dataclass
class UnfoldedConfig:
    block_size: int = 16
    channels: int = 8
    k_start: int = 100
    stride: int = 50
    schedule_t: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    reverse_width: int = 24
    reverse_in_channels: int = 1
    time_embed_dim: int = 16
    freeze_diffusion: bool = False
    train_phi: bool = True
    stochastic_reverse: bool = False

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.k_start > self.schedule_t:
            raise ValueError("k_start exceeds schedule length")

    @property
    def n_steps(self) -> int:
        return self.k_start // self.stride

    def times(self) -> diffusion.TimeSubsequence:
        return diffusion.ddim_times(self.k_start, self.stride)

    def schedule(self) -> diffusion.DiffusionSchedule:
        return diffusion.build_schedule(self.schedule_t, self.beta_start,
                                        self.beta_end)


@dataclass
class UnfoldedModel:
    cfg: UnfoldedConfig
    schedule: diffusion.DiffusionSchedule
    times: diffusion.TimeSubsequence
    params: dict  # name -> Tensor

    def frozen_names(self):
        return sorted(k for k, p in self.params.items()
                      if not p.requires_grad)

    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def param_arrays(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_arrays(self, arrays: dict):
        for name in sorted(self.params):
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name!r}")
            arr = np.array(arrays[name], dtype=np.float64)
            want = self.params[name].data.shape
            if arr.shape != want:
                # the tensor container stores scalars rank-1; undo that
                if arr.size == 1 and self.params[name].data.size == 1:
                    arr = arr.reshape(want)
                else:
                    raise ValueError(
                        f"shape mismatch for parameter {name!r}: model "
                        f"{want}, checkpoint {arr.shape}")
            self.params[name].data = arr
        extra = sorted(set(arrays) - set(self.params))
        if extra:
            raise ValueError(f"unknown parameter {extra[0]!r} in checkpoint")


@dataclass
class TrainRun:
    epochs: int
    batch_size: int = 8
    lr0: float = 1e-3
    lr_min: float = 1e-6
    seed: int = 0
    # lr multiplier for pretrained reverse-model weights when they stay
    # trainable; 1.0 means no special treatment
    rm_lr_scale: float = 1.0
    loss_history: list = field(default_factory=list)
    val_psnr_history: list = field(default_factory=list)
    best_val_psnr: float = float("-inf")
    best_params: dict | None = None


# ---------------------------------------------------------------------------
# custom sensing ops (share gemv arithmetic with the solver)
# ---------------------------------------------------------------------------

def op_measure(x_blocks: Tensor, phi: Tensor) -> Tensor:
    """Per-block y_i = Phi x_i; (nb, N) -> (nb, M)."""
    xd, pd = x_blocks.data, phi.data
    out = np.empty((xd.shape[0], pd.shape[0]))
    for i in range(xd.shape[0]):
        out[i] = pd @ xd[i]

    def vjp(g):
        gx = np.empty_like(xd)
        gphi = np.zeros_like(pd)
        for i in range(xd.shape[0]):
            gx[i] = pd.T @ g[i]
            gphi += np.outer(g[i], xd[i])
        return gx, gphi

    return Tensor(out, _parents=(x_blocks, phi), _vjp=vjp)


def op_adjoint(y_blocks: Tensor, phi: Tensor) -> Tensor:
    """Per-block Phi^T y_i; (nb, M) -> (nb, N)."""
    yd, pd = y_blocks.data, phi.data
    out = np.empty((yd.shape[0], pd.shape[1]))
    for i in range(yd.shape[0]):
        out[i] = pd.T @ yd[i]

    def vjp(g):
        gy = np.empty_like(yd)
        gphi = np.zeros_like(pd)
        for i in range(yd.shape[0]):
            gy[i] = pd @ g[i]
            gphi += np.outer(yd[i], g[i])
        return gy, gphi

    return Tensor(out, _parents=(y_blocks, phi), _vjp=vjp)


def op_grad_step(x_blocks: Tensor, y_blocks: Tensor, phi: Tensor,
                 lam: Tensor) -> Tensor:
    """Per-block s_i = x_i - lam Phi^T (Phi x_i - y_i)."""
    xd, yd, pd = x_blocks.data, y_blocks.data, phi.data
    lv = float(lam.data.reshape(()))
    out = np.empty_like(xd)
    for i in range(xd.shape[0]):
        out[i] = grad_step_block(xd[i], yd[i], pd, lv)

    def vjp(g):
        gx = np.empty_like(xd)
        gy = np.empty_like(yd)
        gphi = np.zeros_like(pd)
        glam = 0.0
        for i in range(xd.shape[0]):
            gi = g[i]
            pg = pd @ gi
            resid = pd @ xd[i] - yd[i]
            gx[i] = gi - lv * (pd.T @ pg)
            gy[i] = lv * pg
            gphi -= lv * (np.outer(resid, gi) + np.outer(pg, xd[i]))
            glam -= float(gi @ (pd.T @ resid))
        return gx, gy, gphi, np.asarray(glam).reshape(lam.data.shape)

    return Tensor(out, _parents=(x_blocks, y_blocks, phi, lam), _vjp=vjp)


def op_blocks_to_image(x_blocks: Tensor, scheme: sensing.BlockScheme) -> Tensor:
    out = sensing.merge_blocks(x_blocks.data, scheme)
    return Tensor(out, _parents=(x_blocks,),
                  _vjp=lambda g: (sensing.partition_blocks(g, scheme),))


def op_image_to_blocks(img: Tensor, scheme: sensing.BlockScheme) -> Tensor:
    out = sensing.partition_blocks(img.data, scheme)
    return Tensor(out, _parents=(img,),
                  _vjp=lambda g: (sensing.merge_blocks(g, scheme),))


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------

def time_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of an integer time index."""
    half = dim // 2
    freqs = np.exp(-np.arange(half) * math.log(10000.0) / max(half - 1, 1))
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def _he_conv(rng, c_out, c_in):
    std = math.sqrt(2.0 / (c_in * 9))
    return rng.normal(0.0, std, size=(c_out, c_in, 3, 3))


def _add_block_params(params, rng, prefix, c_in, c, c_out, n_pass=0,
                      pass_tap=1.0):
    """Residual stack parameters.  The first ``n_pass`` output channels
    start as a center-tap copy of the first input channels scaled by
    ``pass_tap``, so the block is iterate-preserving (or iterate-damping)
    at initialization; the feature channels carry small He-initialized
    perturbations.  Inner second convs start at zero, making each
    residual unit the identity."""
    w_in = _he_conv(rng, c, c_in)
    w_out = 0.1 * _he_conv(rng, c_out, c)
    for k in range(n_pass):
        w_in[k] = 0.0
        w_in[k, k, 1, 1] = 1.0
        w_out[k] = 0.0
        w_out[k, k, 1, 1] = pass_tap
    params[f"{prefix}.conv_in.w"] = w_in
    params[f"{prefix}.conv_in.b"] = np.zeros(c)
    for r in range(4):
        params[f"{prefix}.res{r}.conv1.w"] = _he_conv(rng, c, c)
        params[f"{prefix}.res{r}.conv1.b"] = np.zeros(c)
        params[f"{prefix}.res{r}.conv2.w"] = np.zeros((c, c, 3, 3))
        params[f"{prefix}.res{r}.conv2.b"] = np.zeros(c)
    params[f"{prefix}.conv_out.w"] = w_out
    params[f"{prefix}.conv_out.b"] = np.zeros(c_out)


def build_model(cfg: UnfoldedConfig, schedule, op: sensing.SensingOperator,
                init_seed: int = 0) -> UnfoldedModel:
    """Deterministic initialization; lambda_t starts at sqrt(alpha_bar_t)."""
    times = cfg.times()
    if times.start > schedule.t_max:
        raise ValueError("time subsequence exceeds schedule")
    rng = np.random.Generator(np.random.PCG64(init_seed))
    C, w = cfg.channels, cfg.reverse_width
    rm_in = cfg.reverse_in_channels
    raw = {}
    raw["phi"] = op.phi.copy()
    for i, (t, _) in enumerate(times.pairs()):
        raw[f"lam_log_{i}"] = np.asarray(0.5 * np.log(schedule.alpha_bar[t]))
    _add_block_params(raw, rng, "head", 1, C, 1 + C, n_pass=1)
    # head starts as x_K = sqrt(alpha_bar_K) Phi^T y, the solver's
    # deterministic adjoint start on the scaled manifold
    raw["head.conv_out.w"][0, 0, 1, 1] = np.sqrt(
        schedule.alpha_bar[times.start])
    # worst-case gain of one fidelity step: spectral radius of
    # I - lambda Phi^T Phi, with rho(Phi^T Phi) <= (1 + sqrt(N/M))^2
    rho = (1.0 + math.sqrt(op.n / op.m)) ** 2
    for i, (t, t_prev) in enumerate(times.pairs()):
        lam = math.sqrt(schedule.alpha_bar[t])
        amp = max(1.0, lam * rho - 1.0)
        c_xt, _, _ = diffusion.posterior_coeffs(t, schedule, t_prev)
        # damped pass-through keeps the untrained iteration contractive
        # (the fidelity step is expansive for wide sensing matrices)
        tap = min(1.0, 1.0 / (amp * (c_xt if c_xt > 0 else 1.0)))
        _add_block_params(raw, rng, f"step{i}", 1 + C, C, rm_in + C,
                          n_pass=min(rm_in, 1), pass_tap=tap)
    raw["rm.conv1.w"] = _he_conv(rng, w, rm_in)
    raw["rm.conv1.b"] = np.zeros(w)
    raw["rm.time.w"] = rng.normal(
        0.0, 1.0 / math.sqrt(cfg.time_embed_dim),
        size=(w, cfg.time_embed_dim))
    raw["rm.time.b"] = np.zeros(w)
    raw["rm.conv2.w"] = _he_conv(rng, w, w)
    raw["rm.conv2.b"] = np.zeros(w)
    # zero-init output conv: the reverse model starts as the zero map, so
    # the initial network is a damped data-consistency iteration
    raw["rm.conv3.w"] = np.zeros((rm_in, w, 3, 3))
    raw["rm.conv3.b"] = np.zeros(rm_in)
    raw["tail.conv_in.w"] = _he_conv(rng, C, rm_in)
    raw["tail.conv_in.b"] = np.zeros(C)
    # zero-init: the tail starts as a pass-through refinement
    raw["tail.conv_out.w"] = np.zeros((1, C, 3, 3))
    raw["tail.conv_out.b"] = np.zeros(1)
    params = {}
    for name in sorted(raw):
        trainable = True
        if name == "phi":
            trainable = cfg.train_phi
        elif name.startswith("rm.") and cfg.freeze_diffusion:
            trainable = False
        params[name] = Tensor(raw[name], requires_grad=trainable, name=name)
    return UnfoldedModel(cfg=cfg, schedule=schedule, times=times,
                         params=params)


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def _apply_block(x: Tensor, p: dict, prefix: str) -> Tensor:
    h = ad.conv2d(x, p[f"{prefix}.conv_in.w"], p[f"{prefix}.conv_in.b"])
    for r in range(4):
        inner = ad.conv2d(h, p[f"{prefix}.res{r}.conv1.w"],
                          p[f"{prefix}.res{r}.conv1.b"])
        inner = ad.conv2d(ad.relu(inner), p[f"{prefix}.res{r}.conv2.w"],
                          p[f"{prefix}.res{r}.conv2.b"])
        h = ad.add(h, inner)
    return ad.conv2d(h, p[f"{prefix}.conv_out.w"], p[f"{prefix}.conv_out.b"])


def head_block(adjoint_img: Tensor, model: UnfoldedModel):
    """(1,H,W) adjoint image -> (x_K (1,H,W), z_K (C,H,W))."""
    out = _apply_block(adjoint_img, model.params, "head")
    x_k = ad.slice_channels(out, 0, 1)
    z_k = ad.slice_channels(out, 1, 1 + model.cfg.channels)
    return x_k, z_k


def step_resblock(s_img: Tensor, z: Tensor, model: UnfoldedModel,
                  step_index: int):
    """Concat {s, z}, run the per-step residual stack, split {r, z'}."""
    rm_in = model.cfg.reverse_in_channels
    cat = ad.concat_channels(s_img, z)
    out = _apply_block(cat, model.params, f"step{step_index}")
    r = ad.slice_channels(out, 0, rm_in)
    z_new = ad.slice_channels(out, rm_in, rm_in + model.cfg.channels)
    return r, z_new


def reverse_model_predict_x0(r: Tensor, t: int, model: UnfoldedModel) -> Tensor:
    """Time-conditioned x0 prediction from the filtered iterate.

    Starts as the zero map (output conv zero-initialized)."""
    p = model.params
    emb = time_embedding(t, model.cfg.time_embed_dim)
    h = ad.conv2d(r, p["rm.conv1.w"], p["rm.conv1.b"])
    tb = ad.matmul(p["rm.time.w"], Tensor(emb[:, None]))
    tb = ad.add(ad.reshape(tb, (-1,)), p["rm.time.b"])
    h = ad.relu(ad.bias_add(h, tb))
    h = ad.relu(ad.conv2d(h, p["rm.conv2.w"], p["rm.conv2.b"]))
    return ad.conv2d(h, p["rm.conv3.w"], p["rm.conv3.b"])


def reverse_model_step(r: Tensor, t_pair, model: UnfoldedModel,
                       noise: np.ndarray | None = None) -> Tensor:
    """Posterior-mean step t -> t_prev using the predicted x0."""
    t, t_prev = t_pair
    if (t, t_prev) not in model.times.pairs():
        raise ValueError(f"transition {t_pair} not on the time subsequence")
    x0_hat = reverse_model_predict_x0(r, t, model)
    c_xt, c_x0, var = diffusion.posterior_coeffs(t, model.schedule, t_prev)
    out = ad.add(ad.scale(r, c_xt), ad.scale(x0_hat, c_x0))
    if noise is not None and var > 0:
        out = ad.add(out, Tensor(np.sqrt(var) * noise))
    return out


def gradient_descent_step(x_img: Tensor, y_blocks: Tensor,
                          model: UnfoldedModel, step_index: int,
                          scheme: sensing.BlockScheme) -> Tensor:
    """Fidelity step on blocks with the model's Phi and lambda_t.

    The iterate lives on the sqrt(alpha_bar_t)-scaled manifold, so the
    measurement is scaled to match before the residual (same convention
    as the iterative solver); with lambda_t = sqrt(alpha_bar_t) this is
    exactly the solver's update."""
    t = model.times.times[step_index]
    lam = ad.exp(model.params[f"lam_log_{step_index}"])
    x_blocks = op_image_to_blocks(ad.reshape(x_img, x_img.data.shape[1:]),
                                  scheme)
    y_t = ad.scale(y_blocks, model.schedule.sqrt_ab(t))
    s_blocks = op_grad_step(x_blocks, y_t, model.params["phi"], lam)
    s_img = op_blocks_to_image(s_blocks, scheme)
    return ad.reshape(s_img, (1,) + s_img.data.shape)


def tail_block(x0: Tensor, model: UnfoldedModel) -> Tensor:
    p = model.params
    h = ad.relu(ad.conv2d(x0, p["tail.conv_in.w"], p["tail.conv_in.b"]))
    out = ad.conv2d(h, p["tail.conv_out.w"], p["tail.conv_out.b"])
    if model.cfg.reverse_in_channels == 1:
        out = ad.add(out, x0)
    return out


def forward(model: UnfoldedModel, y_blocks, height: int, width: int,
            rng=None) -> Tensor:
    """Full reconstruction graph: adjoint -> head -> unfolded steps -> tail.

    ``y_blocks`` may be a Tensor (training: keeps the measurement inside
    the graph so Phi gradients flow through it) or an ndarray.
    Returns the (H, W) image as a Tensor.
    """
    scheme = sensing.BlockScheme(model.cfg.block_size, height, width)
    scheme.check_divisible()
    y = y_blocks if isinstance(y_blocks, Tensor) else Tensor(
        np.atleast_2d(np.asarray(y_blocks, dtype=np.float64)))
    adj = op_adjoint(y, model.params["phi"])
    adj_img = ad.reshape(op_blocks_to_image(adj, scheme),
                         (1, height, width))
    x, z = head_block(adj_img, model)
    for i, (t, t_prev) in enumerate(model.times.pairs()):
        s = gradient_descent_step(x, y, model, i, scheme)
        r, z = step_resblock(s, z, model, i)
        noise = None
        if model.cfg.stochastic_reverse and rng is not None:
            noise = rng.standard_normal(r.data.shape)
        x = reverse_model_step(r, (t, t_prev), model, noise=noise)
    out = tail_block(x, model)
    return ad.reshape(out, (height, width))


def reconstruct(model: UnfoldedModel, y_blocks, height: int,
                width: int) -> np.ndarray:
    return forward(model, y_blocks, height, width).data


def forward_with_oracles(model: UnfoldedModel, y_blocks, height: int,
                         width: int, filt, reverse_model,
                         x_init: np.ndarray) -> np.ndarray:
    """Oracle-substituted forward pass for cross-checking against the
    iterative solver: the gradient step coefficient is pinned to
    sqrt(alpha_bar_t), the per-step residual stack is replaced by the
    given filter handle, and the learned reverse model by the given
    callable (r, t, t_prev) -> x_prev.  Pure numpy; blocks evolve
    independently exactly as the solver iterates them."""
    scheme = sensing.BlockScheme(model.cfg.block_size, height, width)
    scheme.check_divisible()
    yb = np.atleast_2d(np.asarray(y_blocks, dtype=np.float64))
    xb = sensing.partition_blocks(np.asarray(x_init, dtype=np.float64),
                                  scheme)
    phi = model.params["phi"].data
    out = np.empty_like(xb)
    for i in range(xb.shape[0]):
        x = xb[i].copy()
        for t, t_prev in model.times.pairs():
            sab = model.schedule.sqrt_ab(t)
            s = grad_step_block(x, sab * yb[i], phi, sab)
            r = filt.fn(s, t)
            x = reverse_model(r, t, t_prev)
        out[i] = x
    return sensing.merge_blocks(out, scheme)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _image_loss(model: UnfoldedModel, image: np.ndarray):
    """Measure with the model's (possibly trainable) Phi, reconstruct,
    and return the scalar MSE node."""
    H, W = image.shape
    scheme = sensing.BlockScheme(model.cfg.block_size, H, W)
    x_true = Tensor(sensing.partition_blocks(image, scheme))
    y = op_measure(x_true, model.params["phi"])
    out = forward(model, y, H, W)
    return ad.mse(out, Tensor(image))


def validation_psnr(model: UnfoldedModel, handle, names) -> float:
    from .metrics import psnr
    vals = []
    for name in names:
        img = handle.load(name)
        H, W = img.shape
        scheme = sensing.BlockScheme(model.cfg.block_size, H, W)
        xb = sensing.partition_blocks(img, scheme)
        phi = model.params["phi"].data
        y = np.stack([phi @ xb[i] for i in range(xb.shape[0])])
        rec = reconstruct(model, y, H, W)
        vals.append(psnr(img, rec))
    finite = [v for v in vals if np.isfinite(v)]
    return float(np.mean(finite)) if finite else float("inf")


def train(model: UnfoldedModel, handle, run: TrainRun):
    """End-to-end training: Adam + cosine LR, freeze mask honored,
    best-validation parameters retained."""
    train_names, val_names = handle.split()
    if not train_names:
        raise ValueError("empty training split")
    scales = None
    if run.rm_lr_scale != 1.0:
        scales = {k: run.rm_lr_scale for k in model.params
                  if k.startswith("rm.")}
    opt = ad.Adam(model.params, lr=run.lr0, lr_scales=scales)
    run.val_psnr_history.append(validation_psnr(model, handle, val_names))
    run.best_val_psnr = run.val_psnr_history[0]
    run.best_params = model.param_arrays()
    for epoch in range(run.epochs):
        lr = ad.cosine_lr(epoch, max(run.epochs - 1, 1), run.lr0, run.lr_min)
        patches = list(dataset_patches(handle, train_names, epoch))
        for b0 in range(0, len(patches), run.batch_size):
            batch = patches[b0:b0 + run.batch_size]
            acc = {k: np.zeros_like(p.data)
                   for k, p in model.params.items() if p.requires_grad}
            batch_loss = 0.0
            for img in batch:
                ad.zero_grads(model.params)
                loss = _image_loss(model, img)
                if not np.isfinite(loss.data):
                    raise FloatingPointError(
                        f"non-finite loss at epoch {epoch}, "
                        f"batch {b0 // run.batch_size}")
                ad.backward(loss)
                batch_loss += float(loss.data)
                for k in acc:
                    g = model.params[k].grad
                    if g is not None:
                        acc[k] += np.asarray(g).reshape(acc[k].shape)
            nb = len(batch)
            grads = {k: v / nb for k, v in acc.items()}
            opt.step(grads, lr=lr)
            run.loss_history.append(batch_loss / nb)
        vp = validation_psnr(model, handle, val_names)
        run.val_psnr_history.append(vp)
        if vp > run.best_val_psnr:
            run.best_val_psnr = vp
            run.best_params = model.param_arrays()
    return run


def dataset_patches(handle, names, epoch):
    from .dataset import ingest_patches
    return ingest_patches(handle, names, epoch)


def pretrain_reverse_model(handle, schedule, run: TrainRun,
                           cfg: UnfoldedConfig | None = None):
    """Standalone reverse-model pretraining: predict x0 from noised
    inputs drawn at random subsequence times.  Returns (rm weight arrays,
    held-out loss history per epoch)."""
    if cfg is None:
        cfg = UnfoldedConfig()
    op = sensing.gen_sensing_matrix(1, cfg.block_size ** 2, seed=run.seed)
    model = build_model(cfg, schedule, op, init_seed=run.seed)
    rm_params = {k: p for k, p in model.params.items() if k.startswith("rm.")}
    for k, p in model.params.items():
        p.requires_grad = k.startswith("rm.")
    opt = ad.Adam(model.params, lr=run.lr0)
    train_names, val_names = handle.split()
    step_times = [t for t, _ in model.times.pairs()]
    rng = np.random.Generator(np.random.PCG64(run.seed))

    def holdout_loss():
        hrng = np.random.Generator(np.random.PCG64(run.seed + 999))
        total = 0.0
        for name in val_names:
            img = handle.load(name)
            t = step_times[int(hrng.integers(len(step_times)))]
            noise = hrng.standard_normal(img.shape)
            x_t = diffusion.forward_marginal(img, t, schedule, noise)
            pred = reverse_model_predict_x0(
                Tensor(x_t[None]), t, model)
            total += float(np.mean((pred.data[0] - img) ** 2))
        return total / max(len(val_names), 1)

    history = [holdout_loss()]
    for epoch in range(run.epochs):
        lr = ad.cosine_lr(epoch, max(run.epochs - 1, 1), run.lr0, run.lr_min)
        for img in dataset_patches(handle, train_names, epoch):
            t = step_times[int(rng.integers(len(step_times)))]
            noise = rng.standard_normal(img.shape)
            x_t = diffusion.forward_marginal(img, t, schedule, noise)
            ad.zero_grads(model.params)
            pred = reverse_model_predict_x0(Tensor(x_t[None]), t, model)
            loss = ad.mse(pred, Tensor(img[None]))
            ad.backward(loss)
            run.loss_history.append(float(loss.data))
            opt.step(lr=lr)
        history.append(holdout_loss())
    return {k: p.data.copy() for k, p in rm_params.items()}, history


def checkpoint_metadata(model: UnfoldedModel, run: TrainRun | None = None,
                        config_echo: dict | None = None) -> dict:
    meta = {
        "config": config_echo if config_echo is not None else
        {k: getattr(model.cfg, k) for k in (
            "block_size", "channels", "k_start", "stride", "schedule_t",
            "beta_start", "beta_end", "reverse_width",
            "reverse_in_channels", "time_embed_dim", "freeze_diffusion",
            "train_phi", "stochastic_reverse")},
        "param_count": model.param_count(),
    }
    if run is not None:
        meta["seed"] = run.seed
        meta["loss_history"] = run.loss_history
        meta["val_psnr_history"] = [
            v if np.isfinite(v) else None for v in run.val_psnr_history]
    return meta


def model_from_metadata(meta: dict, op=None, init_seed: int = 0):
    import dataclasses
    known = {f.name for f in dataclasses.fields(UnfoldedConfig)}
    cfg = UnfoldedConfig(**{k: v for k, v in meta["config"].items()
                            if k in known})
    schedule = cfg.schedule()
    if op is None:
        n = cfg.block_size ** 2
        op = sensing.gen_sensing_matrix(max(1, n // 10), n, seed=init_seed)
    return build_model(cfg, schedule, op, init_seed=init_seed)
