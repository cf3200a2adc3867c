"""End-to-end command-line workflows: artifact pipelines, config
validation, override precedence, manifests, and exit codes."""

import json

import numpy as np
import pytest

from csdmp import cli, dataset, formats, sensing, solver


def run(argv, capsys=None):
    code = cli.main(argv)
    if capsys is None:
        return code, "", ""
    cap = capsys.readouterr()
    return code, cap.out, cap.err


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """gen-phi + a test image + sense, shared by the pipeline tests."""
    root = tmp_path_factory.mktemp("ws")
    dataset.generate_corpus(str(root / "imgs"), 1, size=32, seed=7)
    img_path = str(next((root / "imgs").glob("*.pgm")))
    phi = str(root / "phi.dtn")
    y = str(root / "y.dtn")
    assert cli.main(["gen-phi", "--set", f"out={phi}",
                     "--set", "cs_ratio=0.25", "--set", "seed=3"]) == 0
    assert cli.main(["sense", "--set", f"phi={phi}",
                     "--set", f"image={img_path}", "--set", f"out={y}"]) == 0
    return {"root": root, "phi": phi, "y": y, "image": img_path}


# ---------------------------------------------------------------------------
# artifact pipeline
# ---------------------------------------------------------------------------

def test_gen_phi_artifact_and_manifest(ws, tmp_path):
    phi = formats.load_tensor(ws["phi"])
    assert phi.shape == (64, 256)  # cs_ratio 0.25 of a 16x16 block
    doc = formats.read_manifest(ws["phi"] + ".manifest.json")
    assert doc["config"]["cs_ratio"] == 0.25
    assert doc["seed"] == 3
    assert doc["m"] == 64 and doc["n"] == 256
    # determinism: same seed gives a byte-identical matrix
    again = str(tmp_path / "phi2.dtn")
    assert cli.main(["gen-phi", "--set", f"out={again}",
                     "--set", "cs_ratio=0.25", "--set", "seed=3"]) == 0
    import pathlib
    assert (pathlib.Path(again).read_bytes()
            == pathlib.Path(ws["phi"]).read_bytes())


def test_sense_measurements_match_direct_product(ws):
    phi = formats.load_tensor(ws["phi"])
    img = formats.load_pgm(ws["image"])
    scheme = sensing.BlockScheme(16, 32, 32)
    xb = sensing.partition_blocks(img, scheme)
    y = formats.load_tensor(ws["y"])
    assert y.shape == (4, 64)
    np.testing.assert_array_equal(
        y, np.stack([phi @ xb[i] for i in range(4)]))


def test_reconstruct_adjoint_matches_manual(ws, tmp_path):
    out = str(tmp_path / "rec.dtn")
    code = cli.main(["reconstruct", "--set", "algo=adjoint",
                     "--set", f"phi={ws['phi']}", "--set", f"y={ws['y']}",
                     "--set", "height=32", "--set", "width=32",
                     "--set", f"out={out}"])
    assert code == 0
    phi = formats.load_tensor(ws["phi"])
    y = formats.load_tensor(ws["y"])
    scheme = sensing.BlockScheme(16, 32, 32)
    want = sensing.merge_blocks(
        np.stack([phi.T @ y[i] for i in range(4)]), scheme)
    np.testing.assert_array_equal(formats.load_tensor(out), want)


def test_reconstruct_amp_runs_and_writes_pgm(ws, tmp_path):
    out = str(tmp_path / "rec.dtn")
    pgm = str(tmp_path / "rec.pgm")
    code = cli.main(["reconstruct", "--set", "algo=amp",
                     "--set", f"phi={ws['phi']}", "--set", f"y={ws['y']}",
                     "--set", "height=32", "--set", "width=32",
                     "--set", "iters=5", "--set", "denoiser=soft:0.05",
                     "--set", f"out={out}", "--set", f"out_pgm={pgm}"])
    assert code == 0
    rec = formats.load_tensor(out)
    assert rec.shape == (32, 32) and np.all(np.isfinite(rec))
    assert formats.load_pgm(pgm).shape == (32, 32)


def test_reconstruct_oracle_dmp_recovers_and_eval_reports(ws, tmp_path,
                                                          capsys):
    pgm = str(tmp_path / "rec.pgm")
    code = cli.main(["reconstruct", "--set", "algo=dmp",
                     "--set", f"phi={ws['phi']}", "--set", f"y={ws['y']}",
                     "--set", "height=32", "--set", "width=32",
                     "--set", f"truth={ws['image']}",
                     "--set", f"out={tmp_path / 'rec.dtn'}",
                     "--set", f"out_pgm={pgm}"])
    assert code == 0
    # exact-oracle pipeline on noiseless data reproduces the image, so the
    # quantized reconstruction is bit-identical to the quantized reference
    out = str(tmp_path / "scores.csv")
    code, stdout, _ = run(["eval", "--set", f"ref={ws['image']}",
                           "--set", f"rec={pgm}", "--set", f"out={out}"],
                          capsys)
    assert code == 0
    assert "psnr=inf" in stdout and "ssim=1.000000" in stdout
    doc = formats.read_manifest(out + ".manifest.json")
    assert doc["ssim"] == pytest.approx(1.0)


def test_reconstruct_dmp_requires_truth(ws, tmp_path, capsys):
    code, _, err = run(["reconstruct", "--set", "algo=dmp",
                        "--set", f"phi={ws['phi']}", "--set", f"y={ws['y']}",
                        "--set", "height=32", "--set", "width=32",
                        "--set", f"out={tmp_path / 'r.dtn'}"], capsys)
    assert code == 1
    assert "truth" in err


def test_qq_dump(tmp_path):
    src = str(tmp_path / "noise.dtn")
    rng = np.random.Generator(np.random.PCG64(0))
    formats.save_tensor(src, rng.standard_normal(4096))
    out = str(tmp_path / "qq.csv")
    assert cli.main(["qq-dump", "--set", f"input={src}",
                     "--set", f"out={out}", "--set", "n_points=32"]) == 0
    lines = open(out).read().strip().splitlines()
    assert lines[0] == "normal_q,empirical_q"
    assert len(lines) == 33
    doc = formats.read_manifest(out + ".manifest.json")
    assert doc["pearson"] > 0.99


def test_se_sim_amp_csv(tmp_path):
    out = str(tmp_path / "se.csv")
    code = cli.main(["se-sim", "--set", "algo=amp", "--set", f"out={out}",
                     "--set", "n=256", "--set", "n_seeds=2",
                     "--set", "iters=4", "--set", "prior=bg:0.1"])
    assert code == 0
    lines = open(out).read().strip().splitlines()
    assert lines[0] == "predicted,empirical"
    assert len(lines) == 5  # header + one row per iteration
    predicted = [float(l.split(",")[0]) for l in lines[1:]]
    want = solver.amp_se_predict("bg:0.1", 0.5,
                                 solver.prior_second_moment("bg:0.1"), 4)
    np.testing.assert_allclose(predicted, want, rtol=1e-12)


def test_se_sim_dmp_csv(tmp_path):
    out = str(tmp_path / "sedmp.csv")
    code = cli.main(["se-sim", "--set", "algo=dmp", "--set", f"out={out}",
                     "--set", "n=256", "--set", "stride=50",
                     "--set", "n_mc=10000"])
    assert code == 0
    lines = open(out).read().strip().splitlines()
    assert len(lines) == 3  # header + one row per subsequence step


def test_flops_csv_and_stdout(tmp_path, capsys):
    out = str(tmp_path / "flops.csv")
    code, stdout, _ = run(["flops", "--set", f"out={out}"], capsys)
    assert code == 0
    assert "total=" in stdout and "total_mc_sure=" in stdout
    lines = open(out).read().strip().splitlines()
    assert lines[0] == "component,macs"
    names = [l.split(",")[0] for l in lines[1:]]
    assert "step_resblock" in names and "mc_sure_alternative" in names


# ---------------------------------------------------------------------------
# training workflow (micro scale)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus16):
    root = tmp_path_factory.mktemp("train")
    ckpt = str(root / "model.ckp")
    log = str(root / "train.csv")
    code = cli.main(["train", "--set", f"dataset={corpus16}",
                     "--set", f"out={ckpt}", "--set", f"log={log}",
                     "--set", "epochs=1", "--set", "crop_size=16",
                     "--set", "channels=4", "--set", "reverse_width=6",
                     "--set", "seed=5"])
    assert code == 0
    return {"ckpt": ckpt, "log": log, "root": root}


def test_train_outputs(trained):
    params, meta = formats.load_checkpoint(trained["ckpt"])
    assert "phi" in params and any(k.startswith("rm.") for k in params)
    assert meta["config"]["epochs"] == 1
    assert "best_val_psnr" in formats.read_manifest(
        trained["ckpt"] + ".manifest.json")
    lines = open(trained["log"]).read().strip().splitlines()
    assert lines[0] == "epoch,batch,loss,lr,val_psnr"
    assert len(lines) > 1


def test_reconstruct_dun_from_checkpoint(trained, tmp_path, corpus16):
    # the checkpoint's own Phi overrides the one on disk, so measure with it
    params, _ = formats.load_checkpoint(trained["ckpt"])
    import pathlib
    img_path = str(next(pathlib.Path(corpus16).glob("*.pgm")))
    img = formats.load_pgm(img_path)
    scheme = sensing.BlockScheme(16, 16, 16)
    xb = sensing.partition_blocks(img, scheme)
    y = np.stack([params["phi"] @ xb[i] for i in range(xb.shape[0])])
    y_path = str(tmp_path / "y.dtn")
    formats.save_tensor(y_path, y)
    phi_path = str(tmp_path / "phi.dtn")
    formats.save_tensor(phi_path, params["phi"])
    out = str(tmp_path / "rec.dtn")
    code = cli.main(["reconstruct", "--set", "algo=dun",
                     "--set", f"phi={phi_path}", "--set", f"y={y_path}",
                     "--set", "height=16", "--set", "width=16",
                     "--set", f"checkpoint={trained['ckpt']}",
                     "--set", f"out={out}"])
    assert code == 0
    rec = formats.load_tensor(out)
    assert rec.shape == (16, 16) and np.all(np.isfinite(rec))


def test_pretrain_then_train_init(trained, corpus16, tmp_path, capsys):
    rm_ckpt = str(tmp_path / "rm.ckp")
    code, stdout, _ = run(["pretrain", "--set", f"dataset={corpus16}",
                           "--set", f"out={rm_ckpt}", "--set", "epochs=1",
                           "--set", "crop_size=16", "--set", "channels=4",
                           "--set", "reverse_width=6"], capsys)
    assert code == 0
    assert "holdout_loss" in stdout
    params, meta = formats.load_checkpoint(rm_ckpt)
    assert all(k.startswith("rm.") for k in params)
    assert len(meta["holdout_loss"]) == 2
    out = str(tmp_path / "warm.ckp")
    code = cli.main(["train", "--set", f"dataset={corpus16}",
                     "--set", f"out={out}", "--set", "epochs=1",
                     "--set", "crop_size=16", "--set", "channels=4",
                     "--set", "reverse_width=6",
                     "--set", f"init_rm={rm_ckpt}",
                     "--set", "freeze_diffusion=true"])
    assert code == 0
    warm, _ = formats.load_checkpoint(out)
    for k, v in params.items():  # frozen at the pretrained values
        np.testing.assert_array_equal(warm[k].reshape(v.shape), v)


# ---------------------------------------------------------------------------
# config handling and exit codes
# ---------------------------------------------------------------------------

def test_config_file_with_set_override(tmp_path, ws):
    cfg_file = tmp_path / "cfg.json"
    out = str(tmp_path / "phi.dtn")
    cfg_file.write_text(json.dumps(
        {"out": out, "cs_ratio": 0.25, "seed": 1}))
    assert cli.main(["gen-phi", "--config", str(cfg_file),
                     "--set", "seed=7"]) == 0
    doc = formats.read_manifest(out + ".manifest.json")
    assert doc["seed"] == 7          # override wins
    assert doc["config"]["cs_ratio"] == 0.25  # file value kept


def test_unknown_key_rejected(tmp_path, capsys):
    code, _, err = run(["gen-phi", "--set", f"out={tmp_path / 'p.dtn'}",
                        "--set", "bogus=1"], capsys)
    assert code == 1
    assert "bogus" in err


def test_missing_required_key(capsys):
    code, _, err = run(["gen-phi"], capsys)
    assert code == 1
    assert "out" in err


def test_bad_set_and_bad_json(tmp_path, capsys):
    assert run(["gen-phi", "--set", "noequals"], capsys)[0] == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["gen-phi", "--config", str(bad)], capsys)[0] == 1
    lst = tmp_path / "list.json"
    lst.write_text("[1, 2]")
    assert run(["gen-phi", "--config", str(lst)], capsys)[0] == 1


def test_wrong_type_rejected(tmp_path, capsys):
    code, _, err = run(["gen-phi", "--set", f"out={tmp_path / 'p.dtn'}",
                        "--set", "block_size=hello"], capsys)
    assert code == 1
    assert "block_size" in err


def test_unknown_subcommand_and_no_command(capsys):
    assert run(["frobnicate"], capsys)[0] == 1
    assert run([], capsys)[0] == 1


def test_runtime_failure_exits_2(tmp_path, capsys):
    code, _, err = run(["sense", "--set", "phi=/nonexistent.dtn",
                        "--set", "image=/nonexistent.pgm",
                        "--set", f"out={tmp_path / 'y.dtn'}"], capsys)
    assert code == 2
    assert "runtime error" in err


def test_unknown_algo_is_validation_error(ws, tmp_path, capsys):
    code, _, err = run(["reconstruct", "--set", "algo=warp",
                        "--set", f"phi={ws['phi']}", "--set", f"y={ws['y']}",
                        "--set", "height=32", "--set", "width=32",
                        "--set", f"out={tmp_path / 'r.dtn'}"], capsys)
    assert code == 1
    assert "warp" in err
