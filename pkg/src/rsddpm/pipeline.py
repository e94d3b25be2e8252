"""Residual-ensemble construction plus the training and inference loops.

The frozen end-to-end model's output x_hat0 misses the ground truth x0 by a
residual R = x_hat0 - x0. The diffusion model is trained to produce the
reflection of x_hat0 about the ground truth,

    x_bar0 = x0 - R = 2*x0 - x_hat0,

so that averaging the two estimates cancels the residual:

    combine(x_bar0, x_hat0) = (x_bar0 + x_hat0) / 2 = x0.

At inference the diffusion output carries its own error e, and the combined
error is exactly e/2: the ensemble can only halve the diffusion model's
mistakes, never amplify them, for a fixed x_hat0.

Restoration mode drops the end-to-end model: the residual is the corruption
itself, R = I0 - x0, and I0 stands in for x_hat0 in the combination (since
x0 + R = I0).
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass

import numpy as np

from . import diffusion, numeric
from .models import Denoiser, E2EModel, FitConfig, e2e_forward
from .numeric import Rng, Tensor
from .schedule import Schedule

MODES = ("segmentation", "restoration")


@dataclass
class Dataset:
    """(input, target) pairs with disjoint named splits (indices into items)."""

    items: list
    splits: dict

    def __post_init__(self):
        seen = {}
        for name, idx in self.splits.items():
            for i in idx:
                if not 0 <= i < len(self.items):
                    raise ValueError(f"dataset split {name!r}: index {i} out of range")
                if i in seen:
                    raise ValueError(
                        f"dataset item {i} appears in splits {seen[i]!r} and {name!r}")
                seen[i] = name

    def split(self, name: str) -> list:
        if name not in self.splits:
            raise KeyError(f"unknown split {name!r}; have {sorted(self.splits)}")
        return [self.items[i] for i in self.splits[name]]


@dataclass
class ResidualSample:
    """One training example with its residual geometry, all in encoded space."""

    i0: np.ndarray
    x0: np.ndarray
    x_hat0: np.ndarray
    r: np.ndarray
    x_bar0: np.ndarray


@dataclass
class EnsembleOutput:
    x_hat0: Tensor
    x_bar0: Tensor
    combined: Tensor


def _check_pair(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def residual(x_hat0: Tensor, x0: Tensor) -> Tensor:
    """R = x_hat0 - x0, the end-to-end model's signed error."""
    _check_pair(x_hat0, x0, "residual")
    return numeric.sub(x_hat0, x0)


def residual_target(x0: Tensor, r: Tensor) -> Tensor:
    """x_bar0 = x0 - R, the reflection of x_hat0 about the ground truth."""
    _check_pair(x0, r, "residual_target")
    return numeric.sub(x0, r)


def combine(x_bar0: Tensor, x_hat0: Tensor) -> Tensor:
    """Elementwise average of the two ensemble members."""
    _check_pair(x_bar0, x_hat0, "combine")
    return numeric.scale(numeric.add(x_bar0, x_hat0), 0.5)


def direct_residual(i0: Tensor, x0: Tensor) -> Tensor:
    """Restoration-mode residual: the corruption itself, R = I0 - x0."""
    _check_pair(i0, x0, "direct_residual")
    return numeric.sub(i0, x0)


def residual_sample(i0: np.ndarray, x0: np.ndarray, x_hat0: np.ndarray) -> ResidualSample:
    r = x_hat0 - x0
    return ResidualSample(i0=i0, x0=x0, x_hat0=x_hat0, r=r, x_bar0=x0 - r)


class E2ECache:
    """Digest-keyed cache of frozen end-to-end outputs (pure, so cacheable)."""

    def __init__(self, model: E2EModel):
        self.model = model
        self._store = {}
        self.hits = 0
        self.misses = 0

    @staticmethod
    def _key(arr: np.ndarray) -> bytes:
        return hashlib.sha256(arr.tobytes()).digest()

    def batch(self, i0: np.ndarray) -> np.ndarray:
        """x_hat0 for a (B, C, H, W) batch, computing only unseen items."""
        keys = [self._key(i0[i]) for i in range(i0.shape[0])]
        todo = [i for i, k in enumerate(keys) if k not in self._store]
        self.hits += i0.shape[0] - len(todo)
        self.misses += len(todo)
        if todo:
            with numeric.no_grad():
                out = e2e_forward(self.model, Tensor(i0[todo])).data
            for j, i in enumerate(todo):
                self._store[keys[i]] = out[j].copy()
        return np.stack([self._store[k] for k in keys])

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


def _diffusion_batch_loss(den: Denoiser, i0b, xbar0b, t, eps, sched) -> Tensor:
    x_t = diffusion.q_sample_closed(Tensor(xbar0b), t, Tensor(eps), sched)
    eps_pred = den.forward(x_t, Tensor(i0b), t)
    return diffusion.training_loss(Tensor(eps), eps_pred)


def _val_diffusion_loss(den, e2e, cache, items, sched, rng, batch: int = 64) -> float:
    xs = np.stack([a for a, _ in items]).astype(np.float32, copy=False)
    ys = np.stack([b for _, b in items]).astype(np.float32, copy=False)
    total = 0.0
    with numeric.no_grad():
        for i in range(0, xs.shape[0], batch):
            i0b, x0b = xs[i:i + batch], ys[i:i + batch]
            xhat = cache.batch(i0b) if e2e is not None else i0b
            xbar0 = 2.0 * x0b - xhat
            t = rng.integers(1, sched.T, size=i0b.shape[0])
            eps = rng.normal(xbar0.shape, dtype=np.float32)
            loss = _diffusion_batch_loss(den, i0b, xbar0, t, eps, sched)
            total += float(loss.data) * i0b.shape[0]
    return total / xs.shape[0]


def train_diffusion(den: Denoiser, e2e: E2EModel | None, items, sched: Schedule,
                    cfg: FitConfig, rng: Rng, val_items=None, cache: E2ECache | None = None) -> list:
    """Train the noise predictor on reflected targets.

    With an end-to-end model (segmentation mode) targets are
    x_bar0 = 2*x0 - x_hat0 with x_hat0 served from a digest cache; without one
    (restoration mode) they are x_bar0 = 2*x0 - I0. Per-sample timestep and
    noise draws. Returns (step, loss, wall seconds) records.
    """
    if not items:
        raise ValueError("train_diffusion: empty dataset")
    if e2e is not None and not e2e.frozen:
        raise ValueError("train_diffusion: end-to-end model must be frozen first")
    if e2e is not None and cache is None:
        cache = E2ECache(e2e)
    xs = np.stack([a for a, _ in items]).astype(np.float32, copy=False)
    ys = np.stack([b for _, b in items]).astype(np.float32, copy=False)
    n = xs.shape[0]
    opt = numeric.Adam(den.params(), lr=cfg.lr)
    records = []
    best, bad = math.inf, 0
    t0 = time.monotonic()
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, n - 1, size=cfg.batch_size)
        i0b, x0b = xs[idx], ys[idx]
        xhat = cache.batch(i0b) if e2e is not None else i0b
        xbar0 = 2.0 * x0b - xhat
        t = rng.integers(1, sched.T, size=cfg.batch_size)
        eps = rng.normal(xbar0.shape, dtype=np.float32)
        loss = _diffusion_batch_loss(den, i0b, xbar0, t, eps, sched)
        opt.zero_grad()
        numeric.backward(loss)
        opt.step()
        records.append((step, float(loss.data), time.monotonic() - t0))
        if cfg.val_every and val_items and step % cfg.val_every == 0:
            v = _val_diffusion_loss(den, e2e, cache, val_items, sched, rng.child(step))
            if v < best - 1e-6:
                best, bad = v, 0
            else:
                bad += 1
                if cfg.patience and bad >= cfg.patience:
                    break
    return records


def infer(den: Denoiser, e2e: E2EModel | None, i0: Tensor, sched: Schedule,
          rng: Rng, mode: str = "segmentation") -> EnsembleOutput:
    """Full reverse chain plus the ensemble combination for a batch of inputs."""
    if mode not in MODES:
        raise ValueError(f"infer: unknown mode {mode!r}; expected one of {MODES}")
    if mode == "segmentation":
        if e2e is None:
            raise ValueError("infer: segmentation mode needs an end-to-end model")
        with numeric.no_grad():
            x_hat0 = e2e_forward(e2e, i0)
    else:
        x_hat0 = Tensor(i0.data.copy())
    x_bar0 = diffusion.sample(den.forward, i0, sched, rng, out_channels=den.out_channels)
    return EnsembleOutput(x_hat0=x_hat0, x_bar0=x_bar0, combined=combine(x_bar0, x_hat0))
