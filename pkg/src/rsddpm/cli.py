"""Command-line entry point.

Verbs:
    train-e2e        train the end-to-end learner, write e2e.ckpt
    train-diffusion  train the noise predictor, write denoiser.ckpt
    infer            run the reverse chain + ensemble on .npy images
    eval             score e2e / diffusion / ensemble on a dataset split
    verify           run the analytic self-check suite

Exit codes: 0 success, 1 check or metric failure, 2 usage/config error.
Every command takes --seed (overrides the config) and records the seed in
its output manifest; RSDDPM_THREADS caps BLAS parallelism (applied by the
launcher before numpy loads).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import checkpoint, metrics, pipeline, verify
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config
from .data import ShapeSceneSpec, encode_mask, make_dataset
from .models import Denoiser, E2EModel, FitConfig, freeze, load_state, state, train_e2e
from .numeric import Rng, Tensor
from .schedule import make_schedule


class CliError(ValueError):
    """Usage error outside argparse's own checks."""


def _load_cfg(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def _dtype(cfg: RunConfig):
    return np.float32 if cfg.precision == "float32" else np.float64


def _spec(cfg: RunConfig) -> ShapeSceneSpec:
    d = cfg.data
    return ShapeSceneSpec(
        image_size=(cfg.image_size, cfg.image_size), num_shapes=d.num_shapes,
        fg_intensity=d.fg_intensity, bg_intensity=d.bg_intensity, noise=d.noise,
        fg_bounds=d.fg_bounds, corruption=d.corruption, seed=cfg.seed)


def _dataset(cfg: RunConfig) -> pipeline.Dataset:
    if cfg.data.source == "generate":
        return make_dataset(_spec(cfg), cfg.data.train, cfg.data.val, cfg.data.test, cfg.mode)
    if not os.path.isdir(cfg.data.source):
        raise CliError(
            f"dataset directory {cfg.data.source!r} does not exist and generation is "
            "disabled (data.source is a path; set it to 'generate' to synthesize)")
    return load_dataset(cfg.data.source)


def _encoded_split(cfg: RunConfig, ds: pipeline.Dataset, split: str) -> list:
    items = ds.split(split)
    if cfg.mode == "segmentation":
        return [(a, encode_mask(b)) for a, b in items]
    return items


def save_dataset(path, ds: pipeline.Dataset) -> None:
    """Directory of raw .npy tensors plus a manifest with content digests."""
    os.makedirs(path, exist_ok=True)
    manifest = {"splits": {}, "files": {}}
    for name in ds.splits:
        items = ds.split(name)
        xs = np.stack([a for a, _ in items])
        ys = np.stack([b for _, b in items])
        for tag, arr in (("input", xs), ("target", ys)):
            fname = f"{name}_{tag}.npy"
            np.save(os.path.join(path, fname), arr)
            with open(os.path.join(path, fname), "rb") as f:
                manifest["files"][fname] = hashlib.sha256(f.read()).hexdigest()
        manifest["splits"][name] = len(items)
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_dataset(path) -> pipeline.Dataset:
    mpath = os.path.join(path, "manifest.json")
    if not os.path.isfile(mpath):
        raise CliError(f"{path!r} has no manifest.json; not a dataset directory")
    with open(mpath, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    for fname, want in manifest["files"].items():
        fpath = os.path.join(path, fname)
        if not os.path.isfile(fpath):
            raise CliError(f"dataset file missing: {fpath}")
        with open(fpath, "rb") as f:
            got = hashlib.sha256(f.read()).hexdigest()
        if got != want:
            raise CliError(f"dataset file corrupt (digest mismatch): {fpath}")
    items, splits, at = [], {}, 0
    for name in sorted(manifest["splits"]):
        xs = np.load(os.path.join(path, f"{name}_input.npy"))
        ys = np.load(os.path.join(path, f"{name}_target.npy"))
        splits[name] = list(range(at, at + xs.shape[0]))
        items.extend((xs[i], ys[i]) for i in range(xs.shape[0]))
        at += xs.shape[0]
    return pipeline.Dataset(items=items, splits=splits)


def _write_log(path, records) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,loss,wall_seconds\n")
        for step, loss, wall in records:
            f.write(f"{step},{loss:.8e},{wall:.3f}\n")


def _write_manifest(out_dir, name, payload) -> None:
    with open(os.path.join(out_dir, name), "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)


def _fit(section) -> FitConfig:
    return FitConfig(steps=section.steps, batch_size=section.batch_size, lr=section.lr,
                     val_every=section.val_every, patience=section.patience)


def _cfg_snapshot(cfg) -> dict:
    # the snapshot baked into a checkpoint describes the training recipe;
    # out_dir is a filesystem detail, and keeping it would make the digest
    # depend on where the run happened to write its outputs
    snap = cfg.to_dict()
    snap.pop("out_dir", None)
    return snap


def _partition_ckpts(paths, cfg) -> dict:
    """Load, digest-verify and role-sort checkpoint files."""
    out = {}
    for p in paths or []:
        ck = checkpoint.load(p, expect_precision=cfg.precision)
        if ck.role in out:
            raise CliError(f"two checkpoints with role {ck.role!r} given")
        out[ck.role] = ck
    return out


def _denoiser_from(ck, rng) -> Denoiser:
    try:
        m = ck.config["model"]
        den = Denoiser(rng, in_channels=2, out_channels=1,
                       base_channels=m["base_channels"], time_embed_dim=m["time_embed_dim"],
                       dtype=np.dtype(ck.precision))
    except KeyError as e:
        raise CheckpointError(f"denoiser checkpoint config lacks key {e}")
    load_state(den, ck.blocks)
    return den


def _e2e_from(ck, rng) -> E2EModel:
    try:
        m = ck.config["model"]
        e2e = E2EModel(rng, in_channels=1, out_channels=1,
                       base_channels=m["e2e_channels"], dtype=np.dtype(ck.precision))
    except KeyError as e:
        raise CheckpointError(f"e2e checkpoint config lacks key {e}")
    load_state(e2e, ck.blocks)
    return freeze(e2e)


def cmd_train_e2e(args) -> int:
    cfg = _load_cfg(args)
    if cfg.mode != "segmentation":
        raise CliError("train-e2e only applies to segmentation mode; "
                       "restoration mode has no end-to-end learner")
    os.makedirs(cfg.out_dir, exist_ok=True)
    ds = _dataset(cfg)
    root = Rng(cfg.seed)
    model = E2EModel(root.child(1), base_channels=cfg.model.e2e_channels, dtype=_dtype(cfg))
    records = train_e2e(model, _encoded_split(cfg, ds, "train"), _fit(cfg.train_e2e),
                        root.child(2), val_items=_encoded_split(cfg, ds, "val"))
    ckpt_path = os.path.join(cfg.out_dir, "e2e.ckpt")
    digest = checkpoint.save(ckpt_path, role="e2e", precision=cfg.precision, seed=cfg.seed,
                             config=_cfg_snapshot(cfg), T=cfg.T, params=state(model))
    _write_log(os.path.join(cfg.out_dir, "train_e2e_log.csv"), records)
    _write_manifest(cfg.out_dir, "train_e2e_manifest.json", {
        "command": "train-e2e", "seed": cfg.seed, "checkpoint": ckpt_path,
        "digest": digest, "steps_run": len(records), "final_loss": records[-1][1]})
    print(f"trained e2e for {len(records)} steps, final loss {records[-1][1]:.6f}")
    print(f"wrote {ckpt_path} (sha256 {digest})")
    return 0


def cmd_train_diffusion(args) -> int:
    cfg = _load_cfg(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    ckpts = _partition_ckpts(args.ckpt, cfg)
    e2e = None
    if cfg.mode == "segmentation":
        if "e2e" not in ckpts:
            raise CliError("segmentation mode trains against a frozen pretrained "
                           "end-to-end model: pass its checkpoint with --ckpt "
                           "(train-e2e produces it)")
        e2e = _e2e_from(ckpts["e2e"], Rng(cfg.seed).child(1))
    elif ckpts:
        raise CliError("restoration mode does not use an end-to-end checkpoint")
    ds = _dataset(cfg)
    root = Rng(cfg.seed)
    den = Denoiser(root.child(3), base_channels=cfg.model.base_channels,
                   time_embed_dim=cfg.model.time_embed_dim, dtype=_dtype(cfg))
    sched = make_schedule(cfg.T)
    records = pipeline.train_diffusion(
        den, e2e, _encoded_split(cfg, ds, "train"), sched, _fit(cfg.train_diffusion),
        root.child(4), val_items=_encoded_split(cfg, ds, "val"))
    ckpt_path = os.path.join(cfg.out_dir, "denoiser.ckpt")
    digest = checkpoint.save(ckpt_path, role="denoiser", precision=cfg.precision,
                             seed=cfg.seed, config=_cfg_snapshot(cfg), T=cfg.T, params=state(den))
    _write_log(os.path.join(cfg.out_dir, "train_diffusion_log.csv"), records)
    _write_manifest(cfg.out_dir, "train_diffusion_manifest.json", {
        "command": "train-diffusion", "seed": cfg.seed, "mode": cfg.mode,
        "checkpoint": ckpt_path, "digest": digest, "steps_run": len(records),
        "final_loss": records[-1][1]})
    print(f"trained denoiser for {len(records)} steps, final loss {records[-1][1]:.6f}")
    print(f"wrote {ckpt_path} (sha256 {digest})")
    return 0


def _load_models(cfg, ckpts):
    if "denoiser" not in ckpts:
        raise CliError("need a denoiser checkpoint (--ckpt)")
    rng = Rng(0)
    den = _denoiser_from(ckpts["denoiser"], rng.child(0))
    e2e = None
    if cfg.mode == "segmentation":
        if "e2e" not in ckpts:
            raise CliError("segmentation mode needs the e2e checkpoint too (--ckpt)")
        e2e = _e2e_from(ckpts["e2e"], rng.child(1))
    return den, e2e


def _to_u8(img: np.ndarray, lo: float, hi: float) -> np.ndarray:
    x = (np.clip(img, lo, hi) - lo) / (hi - lo)
    return np.round(255.0 * x).astype(np.uint8)


def _save_png(path, u8: np.ndarray) -> None:
    from PIL import Image
    Image.fromarray(u8, mode="L").save(path)


def cmd_infer(args) -> int:
    cfg = _load_cfg(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    den, e2e = _load_models(cfg, _partition_ckpts(args.ckpt, cfg))
    arrays, stems = [], []
    for p in args.inputs:
        arr = np.load(p).astype(_dtype(cfg))
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[0] != 1:
            raise CliError(f"{p}: expected a (H, W) or (1, H, W) image, got {arr.shape}")
        arrays.append(arr)
        stems.append(os.path.splitext(os.path.basename(p))[0])
    if len(set(a.shape for a in arrays)) != 1:
        raise CliError("all input images must share one shape")
    sched = make_schedule(cfg.T)
    out = pipeline.infer(den, e2e, Tensor(np.stack(arrays)), sched,
                         Rng(cfg.seed).child(5), mode=cfg.mode)
    # encoded masks live in [-1,1] with decision boundary 0; raw images in [0,1]
    lo, hi = (-1.0, 1.0) if cfg.mode == "segmentation" else (0.0, 1.0)
    thresh = 0.0 if cfg.mode == "segmentation" else 0.5
    files = {}
    for i, stem in enumerate(stems):
        for tag, tensor in (("xhat0", out.x_hat0), ("xbar0", out.x_bar0),
                            ("combined", out.combined)):
            fp = os.path.join(cfg.out_dir, f"{stem}_{tag}.npy")
            np.save(fp, tensor.data[i])
            files[os.path.basename(fp)] = hashlib.sha256(tensor.data[i].tobytes()).hexdigest()
        _save_png(os.path.join(cfg.out_dir, f"{stem}_combined.png"),
                  _to_u8(out.combined.data[i, 0], lo, hi))
        mask = (out.combined.data[i, 0] > thresh).astype(np.uint8) * 255
        _save_png(os.path.join(cfg.out_dir, f"{stem}_mask.png"), mask)
    _write_manifest(cfg.out_dir, "infer_manifest.json", {
        "command": "infer", "seed": cfg.seed, "mode": cfg.mode,
        "inputs": list(args.inputs), "outputs": files})
    print(f"wrote outputs for {len(stems)} image(s) to {cfg.out_dir}")
    return 0


def _eval_batches(cfg, den, e2e, items, rng):
    """Predictions for each method over a split, batched; returns dict of lists."""
    sched = make_schedule(cfg.T)
    preds = {"e2e": [], "diffusion": [], "ensemble": []}
    trues = []
    batch = 32
    for bi, i in enumerate(range(0, len(items), batch)):
        chunk = items[i:i + batch]
        i0 = np.stack([a for a, _ in chunk]).astype(_dtype(cfg), copy=False)
        out = pipeline.infer(den, e2e, Tensor(i0), sched, rng.child(bi), mode=cfg.mode)
        preds["e2e"].extend(out.x_hat0.data[j] for j in range(len(chunk)))
        preds["diffusion"].extend(out.x_bar0.data[j] for j in range(len(chunk)))
        preds["ensemble"].extend(out.combined.data[j] for j in range(len(chunk)))
        trues.extend(b for _, b in chunk)
    return preds, trues


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    den, e2e = _load_models(cfg, _partition_ckpts(args.ckpt, cfg))
    ds = _dataset(cfg)
    items = _encoded_split(cfg, ds, args.split)
    preds, trues = _eval_batches(cfg, den, e2e, items, Rng(cfg.seed).child(6))
    # iou/dice threshold at 0; shift restoration images so 0 is the midpoint
    shift = 0.0 if cfg.mode == "segmentation" else 0.5
    peak = 2.0 if cfg.mode == "segmentation" else 1.0
    reports = [metrics.evaluate(method, args.split,
                                [p - shift for p in preds[method]],
                                [t - shift for t in trues], peak=peak)
               for method in ("e2e", "diffusion", "ensemble")]
    # mse/psnr must be in the unshifted space; shifting changes neither
    csv_path = os.path.join(cfg.out_dir, f"metrics_{args.split}.csv")
    metrics.write_csv(csv_path, reports)
    per_path = os.path.join(cfg.out_dir, f"metrics_{args.split}_per_image.csv")
    with open(per_path, "w", encoding="utf-8") as f:
        f.write("method,index,iou,dice,mse,psnr\n")
        for r in reports:
            for idx, row in enumerate(r.per_image):
                f.write(f"{r.method},{idx},{row['iou']:.8f},{row['dice']:.8f},"
                        f"{row['mse']:.8e},{row['psnr']}\n")
    _write_manifest(cfg.out_dir, f"eval_{args.split}_manifest.json", {
        "command": "eval", "seed": cfg.seed, "mode": cfg.mode, "split": args.split,
        "n_images": len(trues), "csv": csv_path})
    for r in reports:
        print(f"{r.method:<10} iou {r.iou:.4f}  dice {r.dice:.4f}  mse {r.mse:.6f}  "
              f"psnr {r.psnr if r.psnr == float('inf') else round(r.psnr, 2)}")
    print(f"wrote {csv_path}")
    return 0


def cmd_verify(args) -> int:
    _load_cfg(args)  # validates the config file if one is given
    results = verify.run_all()
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsddpm",
        description="Residual-ensemble denoising diffusion: train, infer, eval, verify.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the config output directory")
        p.add_argument("--mode", choices=["segmentation", "restoration"],
                       help="override the config mode")
        p.add_argument("--ckpt", action="append", default=[],
                       help="checkpoint file (repeatable)")

    p = sub.add_parser("train-e2e", help="train the end-to-end learner")
    common(p)
    p.set_defaults(fn=cmd_train_e2e)

    p = sub.add_parser("train-diffusion", help="train the noise predictor")
    common(p)
    p.set_defaults(fn=cmd_train_diffusion)

    p = sub.add_parser("infer", help="reverse chain + ensemble on .npy images")
    common(p)
    p.add_argument("inputs", nargs="+", help=".npy image files")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="score e2e / diffusion / ensemble on a split")
    common(p)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", help="run the analytic self-check suite")
    common(p)
    p.set_defaults(fn=cmd_verify)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, ConfigError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
