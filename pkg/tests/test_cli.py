"""End-to-end command-line runs at miniature scale."""

import json
import os

import numpy as np
import pytest

from rsddpm.checkpoint import load as load_ckpt
from rsddpm.cli import load_dataset, run, save_dataset
from rsddpm.data import ShapeSceneSpec, make_dataset
from rsddpm.metrics import read_csv


def write_config(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


TINY_SEG = """\
mode: segmentation
seed: 77
T: 8
image_size: 8
data: {train: 6, val: 2, test: 2}
model: {base_channels: 4, time_embed_dim: 8, e2e_channels: 4}
train_e2e: {steps: 8, batch_size: 4, lr: 0.001}
train_diffusion: {steps: 8, batch_size: 4, lr: 0.001}
"""

TINY_REST = """\
mode: restoration
seed: 78
T: 8
image_size: 8
data: {train: 6, val: 2, test: 2}
model: {base_channels: 4, time_embed_dim: 8}
train_diffusion: {steps: 8, batch_size: 4, lr: 0.001}
"""


@pytest.fixture(scope="module")
def seg_run(tmp_path_factory):
    """One tiny segmentation pipeline: train-e2e, train-diffusion, eval, infer."""
    root = tmp_path_factory.mktemp("seg")
    cfgp = write_config(root, "cfg.yaml", TINY_SEG)
    out = str(root / "out")
    assert run(["train-e2e", "--config", cfgp, "--out", out]) == 0
    e2e = os.path.join(out, "e2e.ckpt")
    assert run(["train-diffusion", "--config", cfgp, "--out", out, "--ckpt", e2e]) == 0
    den = os.path.join(out, "denoiser.ckpt")
    assert run(["eval", "--config", cfgp, "--out", out, "--ckpt", e2e,
                "--ckpt", den, "--split", "test"]) == 0
    return {"root": root, "cfg": cfgp, "out": out, "e2e": e2e, "den": den}


class TestTrainE2E:
    def test_outputs(self, seg_run):
        out = seg_run["out"]
        ck = load_ckpt(seg_run["e2e"])
        assert ck.role == "e2e"
        assert ck.seed == 77
        assert ck.precision == "float32"
        log = open(os.path.join(out, "train_e2e_log.csv")).read().splitlines()
        assert log[0] == "step,loss,wall_seconds"
        assert len(log) == 1 + 8
        steps = [int(ln.split(",")[0]) for ln in log[1:]]
        assert steps == list(range(1, 9))
        losses = [float(ln.split(",")[1]) for ln in log[1:]]
        assert all(np.isfinite(losses))
        man = json.load(open(os.path.join(out, "train_e2e_manifest.json")))
        assert man["seed"] == 77
        assert man["digest"] == ck.digest

    def test_rejected_in_restoration_mode(self, tmp_path, capsys):
        cfgp = write_config(tmp_path, "r.yaml", TINY_REST)
        assert run(["train-e2e", "--config", cfgp, "--out", str(tmp_path / "o")]) == 2
        assert "restoration" in capsys.readouterr().err


class TestTrainDiffusion:
    def test_outputs(self, seg_run):
        ck = load_ckpt(seg_run["den"])
        assert ck.role == "denoiser"
        assert ck.schedule == {"T": 8, "algorithm": "linear-eq24"}
        assert ck.config["model"]["base_channels"] == 4
        log = open(os.path.join(seg_run["out"], "train_diffusion_log.csv")).read().splitlines()
        assert len(log) == 9 and log[0] == "step,loss,wall_seconds"

    def test_segmentation_requires_e2e_ckpt(self, seg_run, capsys):
        assert run(["train-diffusion", "--config", seg_run["cfg"],
                    "--out", seg_run["out"]]) == 2
        assert "train-e2e produces it" in capsys.readouterr().err

    def test_restoration_rejects_ckpt(self, tmp_path, seg_run, capsys):
        cfgp = write_config(tmp_path, "r.yaml", TINY_REST)
        assert run(["train-diffusion", "--config", cfgp, "--out", str(tmp_path / "o"),
                    "--ckpt", seg_run["e2e"]]) == 2
        assert "does not use" in capsys.readouterr().err

    def test_restoration_trains_without_ckpt(self, tmp_path):
        cfgp = write_config(tmp_path, "r.yaml", TINY_REST)
        out = str(tmp_path / "o")
        assert run(["train-diffusion", "--config", cfgp, "--out", out]) == 0
        ck = load_ckpt(os.path.join(out, "denoiser.ckpt"))
        assert ck.config["mode"] == "restoration"

    def test_deterministic_checkpoint_digest(self, tmp_path, seg_run):
        # two runs into different directories: the digest must not know where
        # the checkpoint landed, or reruns could never match it
        outs = []
        for sub in ("a", "b"):
            out = str(tmp_path / sub)
            assert run(["train-diffusion", "--config", seg_run["cfg"], "--out", out,
                        "--ckpt", seg_run["e2e"]]) == 0
            ck = load_ckpt(os.path.join(out, "denoiser.ckpt"))
            assert "out_dir" not in ck.config
            outs.append(ck.digest)
        assert outs[0] == outs[1]

    def test_seed_override_changes_digest(self, tmp_path, seg_run):
        out = str(tmp_path / "c")
        assert run(["train-diffusion", "--config", seg_run["cfg"], "--out", out,
                    "--seed", "91", "--ckpt", seg_run["e2e"]]) == 0
        ck = load_ckpt(os.path.join(out, "denoiser.ckpt"))
        assert ck.seed == 91
        assert ck.digest != load_ckpt(seg_run["den"]).digest


class TestEval:
    def test_metrics_csv(self, seg_run):
        rows = read_csv(os.path.join(seg_run["out"], "metrics_test.csv"))
        assert [r["method"] for r in rows] == ["e2e", "diffusion", "ensemble"]
        assert all(r["split"] == "test" for r in rows)
        assert all(r["n_images"] == 2 for r in rows)
        for r in rows:
            assert 0.0 <= r["iou"] <= 1.0
            assert 0.0 <= r["dice"] <= 1.0
            assert r["mse"] >= 0.0

    def test_per_image_csv(self, seg_run):
        lines = open(os.path.join(seg_run["out"],
                                  "metrics_test_per_image.csv")).read().splitlines()
        assert lines[0] == "method,index,iou,dice,mse,psnr"
        assert len(lines) == 1 + 3 * 2  # 3 methods x 2 test images

    def test_manifest_records_seed(self, seg_run):
        man = json.load(open(os.path.join(seg_run["out"], "eval_test_manifest.json")))
        assert man["seed"] == 77 and man["split"] == "test"

    def test_eval_deterministic(self, tmp_path, seg_run):
        out = str(tmp_path / "again")
        assert run(["eval", "--config", seg_run["cfg"], "--out", out,
                    "--ckpt", seg_run["e2e"], "--ckpt", seg_run["den"],
                    "--split", "test"]) == 0
        a = open(os.path.join(seg_run["out"], "metrics_test.csv")).read()
        b = open(os.path.join(out, "metrics_test.csv")).read()
        assert a == b

    def test_missing_denoiser_ckpt(self, seg_run, capsys):
        assert run(["eval", "--config", seg_run["cfg"], "--out", seg_run["out"],
                    "--ckpt", seg_run["e2e"]]) == 2
        assert "denoiser" in capsys.readouterr().err


class TestInfer:
    def test_outputs_per_input(self, tmp_path, seg_run):
        imgs = []
        rng = np.random.default_rng(5)
        for i in range(2):
            p = tmp_path / f"img{i}.npy"
            np.save(p, rng.random((8, 8), dtype=np.float32))
            imgs.append(str(p))
        out = str(tmp_path / "inf")
        assert run(["infer", "--config", seg_run["cfg"], "--out", out,
                    "--ckpt", seg_run["e2e"], "--ckpt", seg_run["den"], *imgs]) == 0
        for i in range(2):
            for tag in ("xhat0", "xbar0", "combined"):
                arr = np.load(os.path.join(out, f"img{i}_{tag}.npy"))
                assert arr.shape == (1, 8, 8)
            assert os.path.isfile(os.path.join(out, f"img{i}_combined.png"))
            assert os.path.isfile(os.path.join(out, f"img{i}_mask.png"))
        man = json.load(open(os.path.join(out, "infer_manifest.json")))
        assert man["seed"] == 77
        assert len(man["outputs"]) == 6
        # combined is the elementwise mean of the two members
        xh = np.load(os.path.join(out, "img0_xhat0.npy"))
        xb = np.load(os.path.join(out, "img0_xbar0.npy"))
        cm = np.load(os.path.join(out, "img0_combined.npy"))
        np.testing.assert_allclose(cm, (xh + xb) / 2, atol=1e-6)

    def test_rejects_mixed_shapes(self, tmp_path, seg_run, capsys):
        a, b = tmp_path / "a.npy", tmp_path / "b.npy"
        np.save(a, np.zeros((8, 8), dtype=np.float32))
        np.save(b, np.zeros((12, 12), dtype=np.float32))
        assert run(["infer", "--config", seg_run["cfg"], "--out", str(tmp_path / "o"),
                    "--ckpt", seg_run["e2e"], "--ckpt", seg_run["den"],
                    str(a), str(b)]) == 2
        assert "share one shape" in capsys.readouterr().err

    def test_rejects_bad_rank(self, tmp_path, seg_run, capsys):
        a = tmp_path / "a.npy"
        np.save(a, np.zeros((3, 8, 8), dtype=np.float32))
        assert run(["infer", "--config", seg_run["cfg"], "--out", str(tmp_path / "o"),
                    "--ckpt", seg_run["e2e"], "--ckpt", seg_run["den"], str(a)]) == 2
        assert "expected a" in capsys.readouterr().err


class TestErrorPaths:
    def test_unknown_config_key_exit_2(self, tmp_path, capsys):
        cfgp = write_config(tmp_path, "bad.yaml", "banana: 1\n")
        assert run(["verify", "--config", cfgp]) == 2
        assert "banana" in capsys.readouterr().err

    def test_missing_config_file_exit_2(self, tmp_path, capsys):
        assert run(["train-e2e", "--config", str(tmp_path / "no.yaml")]) == 2
        assert "not found" in capsys.readouterr().err

    def test_missing_dataset_dir_exit_2(self, tmp_path, capsys):
        cfgp = write_config(tmp_path, "d.yaml",
                            TINY_SEG + "\n")
        cfgp2 = write_config(tmp_path, "d2.yaml",
                             TINY_SEG.replace("data: {train: 6, val: 2, test: 2}",
                                              "data: {source: /nope/nowhere, train: 6, val: 2, test: 2}"))
        assert run(["train-e2e", "--config", cfgp2, "--out", str(tmp_path / "o")]) == 2
        assert "does not exist" in capsys.readouterr().err

    def test_duplicate_role_exit_2(self, seg_run, capsys):
        assert run(["eval", "--config", seg_run["cfg"], "--out", seg_run["out"],
                    "--ckpt", seg_run["den"], "--ckpt", seg_run["den"]]) == 2
        assert "role" in capsys.readouterr().err

    def test_corrupt_ckpt_exit_2(self, tmp_path, seg_run, capsys):
        bad = tmp_path / "bad.ckpt"
        blob = bytearray(open(seg_run["den"], "rb").read())
        blob[-1] ^= 1
        bad.write_bytes(bytes(blob))
        assert run(["train-diffusion", "--config", seg_run["cfg"],
                    "--out", str(tmp_path / "o"), "--ckpt", str(bad)]) == 2
        assert "corrupt" in capsys.readouterr().err


class TestDatasetRoundTrip:
    def test_save_load(self, tmp_path):
        spec = ShapeSceneSpec(image_size=(8, 8), seed=3)
        ds = make_dataset(spec, 4, 2, 2, mode="segmentation")
        d = str(tmp_path / "data")
        save_dataset(d, ds)
        back = load_dataset(d)
        assert {k: len(v) for k, v in back.splits.items()} == \
               {"train": 4, "val": 2, "test": 2}
        for (a, b), (c, e) in zip(ds.split("val"), back.split("val")):
            assert a.tobytes() == c.tobytes()
            assert b.tobytes() == e.tobytes()

    def test_load_from_config_source(self, tmp_path):
        spec = ShapeSceneSpec(image_size=(8, 8), seed=4)
        d = str(tmp_path / "data")
        save_dataset(d, make_dataset(spec, 6, 2, 2, mode="segmentation"))
        cfg = TINY_SEG.replace("data: {train: 6, val: 2, test: 2}",
                               f"data: {{source: {d}, train: 6, val: 2, test: 2}}")
        cfgp = write_config(tmp_path, "src.yaml", cfg)
        out = str(tmp_path / "o")
        assert run(["train-e2e", "--config", cfgp, "--out", out]) == 0

    def test_corrupt_file_detected(self, tmp_path):
        spec = ShapeSceneSpec(image_size=(8, 8), seed=5)
        d = str(tmp_path / "data")
        save_dataset(d, make_dataset(spec, 2, 1, 1, mode="restoration"))
        target = os.path.join(d, "val_input.npy")
        blob = bytearray(open(target, "rb").read())
        blob[-1] ^= 1
        open(target, "wb").write(bytes(blob))
        from rsddpm.cli import CliError
        with pytest.raises(CliError, match="digest mismatch"):
            load_dataset(d)
