"""Command-line surface.

Subcommands: gen-phi, sense, reconstruct, train, pretrain, se-sim,
qq-dump, eval, flops.  Configuration is a flat JSON document
(``--config FILE``) with ``--set key=value`` overrides; every key is
validated against a per-command schema and unknown keys are rejected.
Exit codes: 0 success, 1 validation error, 2 runtime failure.  Every
command writes a manifest (config echo + seed + versions) next to its
outputs.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import autodiff, dataset, denoise, diffusion, formats, metrics
from . import sensing, solver
from . import unfolded as uf


class ConfigError(ValueError):
    pass


# schema: command -> key -> (type, default); REQUIRED means no default
REQUIRED = object()

_COMMON = {"strict": (bool, True), "seed": (int, 0)}

SCHEMAS = {
    "gen-phi": {**_COMMON, "block_size": (int, 16), "cs_ratio": (float, 0.1),
                "out": (str, REQUIRED)},
    "sense": {**_COMMON, "phi": (str, REQUIRED), "image": (str, REQUIRED),
              "noise_std": (float, 0.0), "out": (str, REQUIRED)},
    "reconstruct": {**_COMMON, "algo": (str, REQUIRED),
                    "phi": (str, REQUIRED), "y": (str, REQUIRED),
                    "height": (int, REQUIRED), "width": (int, REQUIRED),
                    "out": (str, REQUIRED), "out_pgm": (str, ""),
                    "iters": (int, 10), "denoiser": (str, "soft:0.05"),
                    "divergence_mode": (str, "analytic"),
                    "k_start": (int, 100), "stride": (int, 50),
                    "schedule_t": (int, 200),
                    "onsager_mode": (str, "off"), "truth": (str, ""),
                    "checkpoint": (str, "")},
    "train": {**_COMMON, "dataset": (str, REQUIRED), "out": (str, REQUIRED),
              "log": (str, ""), "epochs": (int, 10), "batch_size": (int, 8),
              "lr0": (float, 2e-3), "lr_min": (float, 1e-5),
              "crop_size": (int, 32), "cs_ratio": (float, 0.1),
              "block_size": (int, 16), "channels": (int, 8),
              "k_start": (int, 100), "stride": (int, 50),
              "schedule_t": (int, 200), "reverse_width": (int, 24),
              "freeze_diffusion": (bool, False), "train_phi": (bool, True),
              "init_rm": (str, "")},
    "pretrain": {**_COMMON, "dataset": (str, REQUIRED), "out": (str, REQUIRED),
                 "epochs": (int, 5), "lr0": (float, 2e-3),
                 "lr_min": (float, 1e-5), "crop_size": (int, 32),
                 "block_size": (int, 16), "channels": (int, 8),
                 "k_start": (int, 100), "stride": (int, 50),
                 "schedule_t": (int, 200), "reverse_width": (int, 24)},
    "se-sim": {**_COMMON, "algo": (str, REQUIRED), "out": (str, REQUIRED),
               "prior": (str, "bg:0.1"), "delta": (float, 0.5),
               "iters": (int, 10), "n": (int, 4096), "n_seeds": (int, 20),
               "k_start": (int, 100), "stride": (int, 10),
               "schedule_t": (int, 200), "n_mc": (int, 100000)},
    "qq-dump": {**_COMMON, "input": (str, REQUIRED), "out": (str, REQUIRED),
                "n_points": (int, 64)},
    "eval": {**_COMMON, "ref": (str, REQUIRED), "rec": (str, REQUIRED),
             "out": (str, REQUIRED)},
    "flops": {**_COMMON, "out": (str, REQUIRED), "block_size": (int, 16),
              "channels": (int, 8), "k_start": (int, 100),
              "stride": (int, 50), "reverse_width": (int, 24),
              "height": (int, 32), "width": (int, 32), "n_probes": (int, 1)},
}


def _coerce(key, raw, want):
    if want is bool:
        if isinstance(raw, bool):
            return raw
        if isinstance(raw, str) and raw.lower() in ("true", "false"):
            return raw.lower() == "true"
        raise ConfigError(f"key {key!r}: expected a boolean, got {raw!r}")
    try:
        return want(raw)
    except (TypeError, ValueError):
        raise ConfigError(
            f"key {key!r}: expected {want.__name__}, got {raw!r}") from None


def build_config(command: str, config_path: str | None, overrides) -> dict:
    """Merge file values and --set overrides against the schema."""
    schema = SCHEMAS[command]
    values = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a flat JSON object")
        values.update(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            values[k] = json.loads(v)
        except json.JSONDecodeError:
            values[k] = v
    unknown = sorted(set(values) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r} "
                          f"for command {command!r}")
    cfg = {}
    for key, (want, default) in schema.items():
        if key in values:
            cfg[key] = _coerce(key, values[key], want)
        elif default is REQUIRED:
            raise ConfigError(f"missing required key {key!r}")
        else:
            cfg[key] = default
    return cfg


def _manifest(out_path: str, cfg: dict, extra=None):
    formats.write_manifest(out_path + ".manifest.json", cfg, cfg.get("seed"),
                           extra=extra)


def _load_phi(path) -> sensing.SensingOperator:
    phi = formats.load_tensor(path)
    if phi.ndim != 2:
        raise ConfigError(f"sensing matrix must be rank 2, got rank {phi.ndim}")
    return sensing.SensingOperator(phi=phi, seed=-1)


def _schedule_times(cfg):
    schedule = diffusion.build_schedule(cfg["schedule_t"])
    times = diffusion.ddim_times(cfg["k_start"], cfg["stride"])
    return schedule, times


# ---------------------------------------------------------------------------
# command bodies
# ---------------------------------------------------------------------------

def cmd_gen_phi(cfg):
    n = cfg["block_size"] ** 2
    m = int(round(cfg["cs_ratio"] * n))
    op = sensing.gen_sensing_matrix(m, n, seed=cfg["seed"])
    formats.save_tensor(cfg["out"], op.phi)
    _manifest(cfg["out"], cfg, {"m": m, "n": n})
    return 0


def cmd_sense(cfg):
    op = _load_phi(cfg["phi"])
    img = formats.load_pgm(cfg["image"])
    block = int(round(np.sqrt(op.n)))
    scheme = sensing.BlockScheme(block, *img.shape)
    scheme.check_divisible()
    xb = sensing.partition_blocks(img, scheme)
    ms = sensing.sample(op, xb, sigma_meas=cfg["noise_std"], seed=cfg["seed"])
    formats.save_tensor(cfg["out"], ms.y)
    _manifest(cfg["out"], cfg, {"height": img.shape[0], "width": img.shape[1]})
    return 0


def _reconstruct_blocks(cfg, op, y, recon_fn):
    """Apply a per-block (y_i -> x_i) solver and merge to an image."""
    scheme = sensing.BlockScheme(int(round(np.sqrt(op.n))),
                                 cfg["height"], cfg["width"])
    scheme.check_divisible()
    xb = np.stack([recon_fn(y[i], i) for i in range(y.shape[0])])
    return sensing.merge_blocks(xb, scheme), scheme


def cmd_reconstruct(cfg):
    algo = cfg["algo"]
    if algo not in ("adjoint", "amp", "dmp", "dun"):
        raise ConfigError(f"unknown algo {cfg['algo']!r}")
    op = _load_phi(cfg["phi"])
    y = np.atleast_2d(formats.load_tensor(cfg["y"]))
    if algo == "adjoint":
        img, _ = _reconstruct_blocks(cfg, op, y,
                                     lambda yi, i: sensing.adjoint(op, yi)[0])
    elif algo == "amp":
        handle = _denoiser_from_spec(cfg["denoiser"])

        def run_amp(yi, i):
            x, _ = solver.amp_reconstruct(
                yi, op, handle, cfg["iters"],
                divergence_mode=cfg["divergence_mode"])
            return x

        img, _ = _reconstruct_blocks(cfg, op, y, run_amp)
    elif algo == "dmp":
        if not cfg["truth"]:
            raise ConfigError(
                "algo 'dmp' runs the oracle pipeline and needs key 'truth'")
        truth = formats.load_pgm(cfg["truth"])
        schedule, times = _schedule_times(cfg)
        scheme = sensing.BlockScheme(int(round(np.sqrt(op.n))),
                                     cfg["height"], cfg["width"])
        tb = sensing.partition_blocks(truth, scheme)

        def run_dmp(yi, i):
            filt = denoise.make_oracle_filter(tb[i], schedule)
            rm = solver.make_oracle_reverse_model(tb[i], schedule)
            x, _ = solver.dmp_reconstruct(yi, op, schedule, times, filt, rm,
                                          onsager_mode=cfg["onsager_mode"])
            return x

        img, _ = _reconstruct_blocks(cfg, op, y, run_dmp)
    else:
        if not cfg["checkpoint"]:
            raise ConfigError("algo 'dun' needs key 'checkpoint'")
        params, meta = formats.load_checkpoint(cfg["checkpoint"])
        model = uf.model_from_metadata(meta, op=op)
        model.load_arrays(params)
        img = uf.reconstruct(model, y, cfg["height"], cfg["width"])
    formats.save_tensor(cfg["out"], img)
    if cfg["out_pgm"]:
        formats.save_pgm(img, cfg["out_pgm"])
    _manifest(cfg["out"], cfg)
    return 0


def _denoiser_from_spec(spec: str):
    if spec.startswith("soft:"):
        return denoise.make_soft_threshold(float(spec.split(":", 1)[1]))
    if spec == "gaussian":
        return denoise.make_mmse_gaussian()
    if spec.startswith("bg:"):
        return denoise.make_mmse_bernoulli_gaussian(
            float(spec.split(":", 1)[1]))
    raise ConfigError(f"unknown denoiser {spec!r}")


def cmd_train(cfg):
    handle = dataset.DatasetHandle(cfg["dataset"], crop_size=cfg["crop_size"],
                                   seed=cfg["seed"])
    ucfg = uf.UnfoldedConfig(
        block_size=cfg["block_size"], channels=cfg["channels"],
        k_start=cfg["k_start"], stride=cfg["stride"],
        schedule_t=cfg["schedule_t"], reverse_width=cfg["reverse_width"],
        freeze_diffusion=cfg["freeze_diffusion"], train_phi=cfg["train_phi"])
    n = ucfg.block_size ** 2
    m = int(round(cfg["cs_ratio"] * n))
    op = sensing.gen_sensing_matrix(m, n, seed=cfg["seed"])
    model = uf.build_model(ucfg, ucfg.schedule(), op, init_seed=cfg["seed"])
    if cfg["init_rm"]:
        rm_params, _ = formats.load_checkpoint(cfg["init_rm"])
        for k, arr in rm_params.items():
            if not k.startswith("rm."):
                raise ConfigError(
                    f"init_rm checkpoint holds non-reverse-model key {k!r}")
            model.params[k].data = np.array(arr)
    run = uf.TrainRun(epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                      lr0=cfg["lr0"], lr_min=cfg["lr_min"], seed=cfg["seed"])
    uf.train(model, handle, run)
    params = run.best_params if run.best_params is not None \
        else model.param_arrays()
    formats.save_checkpoint(cfg["out"], params,
                            uf.checkpoint_metadata(model, run,
                                                   config_echo=cfg))
    if cfg["log"]:
        lines = ["epoch,batch,loss,lr,val_psnr"]
        n_batches = max(len(run.loss_history) // max(cfg["epochs"], 1), 1)
        for i, loss in enumerate(run.loss_history):
            ep, ba = divmod(i, n_batches)
            lr = autodiff.cosine_lr(ep, max(cfg["epochs"] - 1, 1),
                                    cfg["lr0"], cfg["lr_min"])
            vp = run.val_psnr_history[min(ep + 1,
                                          len(run.val_psnr_history) - 1)]
            lines.append(f"{ep},{ba},{loss:.17g},{lr:.17g},{vp:.17g}")
        formats.atomic_write(cfg["log"], ("\n".join(lines) + "\n").encode())
    _manifest(cfg["out"], cfg, {
        "best_val_psnr": run.best_val_psnr,
        "epoch0_val_psnr": run.val_psnr_history[0]})
    print(f"best_val_psnr={run.best_val_psnr:.4f} "
          f"epoch0={run.val_psnr_history[0]:.4f}")
    return 0


def cmd_pretrain(cfg):
    handle = dataset.DatasetHandle(cfg["dataset"], crop_size=cfg["crop_size"],
                                   seed=cfg["seed"])
    ucfg = uf.UnfoldedConfig(
        block_size=cfg["block_size"], channels=cfg["channels"],
        k_start=cfg["k_start"], stride=cfg["stride"],
        schedule_t=cfg["schedule_t"], reverse_width=cfg["reverse_width"])
    run = uf.TrainRun(epochs=cfg["epochs"], lr0=cfg["lr0"],
                      lr_min=cfg["lr_min"], seed=cfg["seed"])
    weights, history = uf.pretrain_reverse_model(handle, ucfg.schedule(),
                                                 run, cfg=ucfg)
    formats.save_checkpoint(cfg["out"], weights,
                            {"config": cfg, "holdout_loss": history})
    _manifest(cfg["out"], cfg, {"holdout_loss": history})
    print(f"holdout_loss epoch0={history[0]:.6g} final={history[-1]:.6g}")
    return 0


def cmd_se_sim(cfg):
    if cfg["algo"] == "amp":
        prior = cfg["prior"]
        delta, n, iters = cfg["delta"], cfg["n"], cfg["iters"]
        m = int(round(delta * n))
        handle = solver.mmse_denoiser_for_prior(prior)
        predicted = solver.amp_se_predict(
            prior, delta, solver.prior_second_moment(prior), iters)
        emp = np.zeros(iters)
        for s in range(cfg["n_seeds"]):
            op = sensing.gen_sensing_matrix(m, n, seed=cfg["seed"] + s)
            rng = np.random.Generator(np.random.PCG64(
                10_000 + cfg["seed"] + s))
            x = solver.draw_prior(prior, n, rng)
            _, trace = solver.amp_reconstruct(op.phi @ x, op, handle, iters,
                                              x_true=x)
            emp += np.array(trace.empirical)
        emp /= cfg["n_seeds"]
        csv = solver.two_column_csv(("predicted", "empirical"),
                                    predicted, emp)
    elif cfg["algo"] == "dmp":
        schedule, times = _schedule_times(cfg)
        _, r_var, x_var = solver.dmp_se_predict(
            schedule, times, cfg["delta"], n_mc=cfg["n_mc"],
            seed=cfg["seed"])
        n, delta = cfg["n"], cfg["delta"]
        m = int(round(delta * n))
        op = sensing.gen_sensing_matrix(m, n, seed=cfg["seed"])
        rng = np.random.Generator(np.random.PCG64(10_000 + cfg["seed"]))
        x = rng.standard_normal(n)
        filt = solver.MemoizingFilter(denoise.make_oracle_filter(
            x, schedule, rng=np.random.Generator(
                np.random.PCG64(20_000 + cfg["seed"]))))
        rm = solver.make_oracle_reverse_model(
            x, schedule, rng=np.random.Generator(
                np.random.PCG64(30_000 + cfg["seed"])))
        _, diag = solver.dmp_reconstruct(op.phi @ x, op, schedule, times,
                                         filt, rm, x_true=x)
        csv = solver.two_column_csv(("predicted", "empirical"),
                                    r_var, diag.r_var)
    else:
        raise ConfigError(f"unknown se-sim algo {cfg['algo']!r}")
    formats.atomic_write(cfg["out"], csv.encode())
    _manifest(cfg["out"], cfg)
    return 0


def cmd_qq_dump(cfg):
    noise = formats.load_tensor(cfg["input"])
    qq = solver.qq_quantiles(noise, cfg["n_points"])
    csv = solver.two_column_csv(("normal_q", "empirical_q"),
                                qq.normal_q, qq.empirical_q)
    formats.atomic_write(cfg["out"], csv.encode())
    _manifest(cfg["out"], cfg, {"pearson": qq.pearson()})
    return 0


def cmd_eval(cfg):
    ref = formats.load_pgm(cfg["ref"])
    rec = formats.load_pgm(cfg["rec"])
    p = metrics.psnr(ref, rec)
    s = metrics.ssim(ref, rec)
    csv = f"psnr,ssim\n{p:.17g},{s:.17g}\n"
    formats.atomic_write(cfg["out"], csv.encode())
    _manifest(cfg["out"], cfg, {"psnr": p, "ssim": s})
    print(f"psnr={p:.4f} ssim={s:.6f}")
    return 0


def cmd_flops(cfg):
    ucfg = uf.UnfoldedConfig(
        block_size=cfg["block_size"], channels=cfg["channels"],
        k_start=cfg["k_start"], stride=cfg["stride"],
        reverse_width=cfg["reverse_width"])
    n = ucfg.block_size ** 2
    op = sensing.gen_sensing_matrix(max(1, n // 10), n, seed=cfg["seed"])
    report = metrics.flops_report(ucfg, op, cfg["height"], cfg["width"],
                                  n_probes=cfg["n_probes"])
    lines = ["component,macs"]
    lines += [f"{name},{macs}" for name, macs in report.rows()]
    formats.atomic_write(cfg["out"], ("\n".join(lines) + "\n").encode())
    _manifest(cfg["out"], cfg)
    print(f"total={report.total} total_mc_sure={report.total_mc_sure}")
    return 0


COMMANDS = {
    "gen-phi": cmd_gen_phi,
    "sense": cmd_sense,
    "reconstruct": cmd_reconstruct,
    "train": cmd_train,
    "pretrain": cmd_pretrain,
    "se-sim": cmd_se_sim,
    "qq-dump": cmd_qq_dump,
    "eval": cmd_eval,
    "flops": cmd_flops,
}


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="csdmp",
        description="Block compressive sensing: solvers, diagnostics, and "
                    "the unfolded reconstruction network.")
    sub = ap.add_subparsers(dest="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="flat JSON config document")
        p.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        cfg = build_config(args.command, args.config, args.overrides)
    except (ConfigError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
