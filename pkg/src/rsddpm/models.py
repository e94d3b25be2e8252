"""The conditional noise predictor and the frozen end-to-end learner.

Both nets are small encoder-decoders built from conv / group-norm / silu
blocks on the numeric core. The noise predictor ``Denoiser`` sees the noisy
target stacked channel-wise with the conditioning image plus a sinusoidal
time embedding injected as a per-channel bias; the ``E2EModel`` maps the
input image straight to a mask likelihood in [-1, 1] through a tanh head.

Masks are encoded {0,1} -> {-1,+1} upstream, so both nets regress signals
centered on zero.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import numeric
from .numeric import Rng, Tensor, nnops

Item = "tuple[np.ndarray, np.ndarray]"  # (input image, target), each (C, H, W)


def time_embedding(t, dim: int, batch: int, dtype=np.float32) -> Tensor:
    """Sinusoidal embedding of timestep(s) t as a (batch, dim) tensor.

    t is a positive int applied to the whole batch or a (batch,) int array.
    """
    if dim < 2 or dim % 2 != 0:
        raise ValueError(f"time_embedding: dim must be even and >= 2, got {dim}")
    tv = np.asarray(t, dtype=np.float64)
    if tv.ndim == 0:
        tv = np.full((batch,), float(tv))
    elif tv.shape != (batch,):
        raise ValueError(f"time_embedding: t must be scalar or ({batch},), got shape {tv.shape}")
    if tv.min() < 1:
        raise ValueError("time_embedding: timesteps are 1-based")
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    ang = tv[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    return Tensor(emb.astype(dtype))


def _init(rng: Rng, shape: tuple[int, ...], fan_in: int, dtype) -> Tensor:
    w = rng.normal(shape, dtype=np.float64) * math.sqrt(2.0 / fan_in)
    return Tensor(w.astype(dtype), requires_grad=True)


class Conv2d:
    """3x3 same-padding convolution layer."""

    def __init__(self, cin: int, cout: int, rng: Rng, dtype=np.float32, k: int = 3):
        self.w = _init(rng, (cout, cin, k, k), cin * k * k, dtype)
        self.b = Tensor(np.zeros((cout,), dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return nnops.conv2d(x, self.w, self.b)

    def named_params(self):
        return [("w", self.w), ("b", self.b)]


class Linear:
    def __init__(self, fin: int, fout: int, rng: Rng, dtype=np.float32):
        self.w = _init(rng, (fin, fout), fin, dtype)
        self.b = Tensor(np.zeros((fout,), dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return nnops.row_bias(numeric.matmul(x, self.w), self.b)

    def named_params(self):
        return [("w", self.w), ("b", self.b)]


class GroupNorm:
    def __init__(self, channels: int, dtype=np.float32):
        self.groups = 4 if channels % 4 == 0 else 1
        self.gamma = Tensor(np.ones((channels,), dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros((channels,), dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return nnops.group_norm(x, self.gamma, self.beta, self.groups)

    def named_params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]


class Block:
    """conv -> norm -> silu, optional time bias, conv -> norm -> silu."""

    def __init__(self, cin: int, cout: int, temb_dim: int | None, rng: Rng, dtype=np.float32):
        self.c1 = Conv2d(cin, cout, rng, dtype)
        self.g1 = GroupNorm(cout, dtype)
        self.tp = Linear(temb_dim, cout, rng, dtype) if temb_dim else None
        self.c2 = Conv2d(cout, cout, rng, dtype)
        self.g2 = GroupNorm(cout, dtype)

    def __call__(self, x: Tensor, temb: Tensor | None = None) -> Tensor:
        h = numeric.silu(self.g1(self.c1(x)))
        if self.tp is not None:
            h = nnops.channel_bias(h, self.tp(temb))
        return numeric.silu(self.g2(self.c2(h)))

    def named_params(self):
        parts = [("c1", self.c1), ("g1", self.g1), ("c2", self.c2), ("g2", self.g2)]
        if self.tp is not None:
            parts.insert(2, ("tp", self.tp))
        return [(f"{p}.{n}", t) for p, sub in parts for n, t in sub.named_params()]


def _collect(named: Sequence[tuple[str, object]]):
    return [(f"{prefix}.{n}", t) for prefix, sub in named for n, t in sub.named_params()]


class Denoiser:
    """Conditional noise predictor: (noisy target, conditioning image, t) -> eps.

    Two-level encoder-decoder with skip connections; the conditioning image
    is concatenated channel-wise at the input, the time embedding enters
    every block as a learned per-channel bias. Spatial dims must be
    divisible by 4 (two 2x downsamples).
    """

    def __init__(self, rng: Rng, in_channels: int = 2, out_channels: int = 1,
                 base_channels: int = 16, time_embed_dim: int = 32, dtype=np.float32):
        f, d = base_channels, time_embed_dim
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.base_channels = f
        self.time_embed_dim = d
        self.dtype = np.dtype(dtype)
        self.temb_lin = Linear(d, d, rng, dtype)
        self.stem = Conv2d(in_channels, f, rng, dtype)
        self.enc1 = Block(f, f, d, rng, dtype)
        self.enc2 = Block(f, 2 * f, d, rng, dtype)
        self.mid = Block(2 * f, 2 * f, d, rng, dtype)
        self.dec2 = Block(4 * f, 2 * f, d, rng, dtype)
        self.dec1 = Block(3 * f, f, d, rng, dtype)
        self.head = Conv2d(f, out_channels, rng, dtype)

    def named_params(self):
        return _collect([
            ("temb_lin", self.temb_lin), ("stem", self.stem),
            ("enc1", self.enc1), ("enc2", self.enc2), ("mid", self.mid),
            ("dec2", self.dec2), ("dec1", self.dec1), ("head", self.head),
        ])

    def params(self) -> list[Tensor]:
        return [t for _, t in self.named_params()]

    def forward(self, x_t: Tensor, i0: Tensor, t) -> Tensor:
        if x_t.data.ndim != 4 or i0.data.ndim != 4:
            raise ValueError("denoiser_forward: inputs must be (B, C, H, W)")
        b, cx, h, w = x_t.data.shape
        if i0.data.shape[0] != b or i0.data.shape[2:] != (h, w):
            raise ValueError(
                f"denoiser_forward: batch/spatial mismatch {x_t.data.shape} vs {i0.data.shape}")
        if cx + i0.data.shape[1] != self.in_channels:
            raise ValueError(
                f"denoiser_forward: got {cx}+{i0.data.shape[1]} input channels, "
                f"model expects {self.in_channels}")
        if h % 4 != 0 or w % 4 != 0:
            raise ValueError(f"denoiser_forward: H and W must be divisible by 4, got {h}x{w}")
        temb = numeric.silu(self.temb_lin(time_embedding(t, self.time_embed_dim, b, self.dtype)))
        h0 = self.stem(numeric.concat_channels(x_t, i0))
        h1 = self.enc1(h0, temb)
        h2 = self.enc2(nnops.avg_pool2(h1), temb)
        m = self.mid(nnops.avg_pool2(h2), temb)
        u2 = self.dec2(numeric.concat_channels(nnops.upsample_nearest2(m), h2), temb)
        u1 = self.dec1(numeric.concat_channels(nnops.upsample_nearest2(u2), h1), temb)
        return self.head(u1)


class E2EModel:
    """Direct image -> mask-likelihood net with a tanh head (range [-1, 1])."""

    def __init__(self, rng: Rng, in_channels: int = 1, out_channels: int = 1,
                 base_channels: int = 8, dtype=np.float32):
        f = base_channels
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.base_channels = f
        self.dtype = np.dtype(dtype)
        self.frozen = False
        self.stem = Conv2d(in_channels, f, rng, dtype)
        self.enc1 = Block(f, f, None, rng, dtype)
        self.mid = Block(f, 2 * f, None, rng, dtype)
        self.dec1 = Block(3 * f, f, None, rng, dtype)
        self.head = Conv2d(f, out_channels, rng, dtype)

    def named_params(self):
        return _collect([
            ("stem", self.stem), ("enc1", self.enc1), ("mid", self.mid),
            ("dec1", self.dec1), ("head", self.head),
        ])

    def params(self) -> list[Tensor]:
        return [t for _, t in self.named_params()]

    def forward(self, i0: Tensor) -> Tensor:
        if i0.data.ndim != 4:
            raise ValueError("e2e_forward: input must be (B, C, H, W)")
        if i0.data.shape[1] != self.in_channels:
            raise ValueError(
                f"e2e_forward: got {i0.data.shape[1]} channels, model expects {self.in_channels}")
        if i0.data.shape[2] % 2 != 0 or i0.data.shape[3] % 2 != 0:
            raise ValueError("e2e_forward: H and W must be even")
        h1 = self.enc1(self.stem(i0))
        m = self.mid(nnops.avg_pool2(h1))
        u1 = self.dec1(numeric.concat_channels(nnops.upsample_nearest2(m), h1))
        return numeric.tanh(self.head(u1))


def denoiser_forward(d: Denoiser, x_t: Tensor, i0: Tensor, t) -> Tensor:
    return d.forward(x_t, i0, t)


def e2e_forward(m: E2EModel, i0: Tensor) -> Tensor:
    return m.forward(i0)


def freeze(m: E2EModel) -> E2EModel:
    """Make the model inert: no gradients flow and parameter data is locked."""
    for p in m.params():
        p.requires_grad = False
        p.grad = None
        p.data.setflags(write=False)
    m.frozen = True
    return m


def param_count(model) -> int:
    return sum(t.data.size for t in model.params())


def state(model) -> list[tuple[str, np.ndarray]]:
    """Named parameter arrays, copied, in stable declaration order."""
    return [(n, t.data.copy()) for n, t in model.named_params()]


def load_state(model, blocks: dict[str, np.ndarray]) -> None:
    """Copy arrays into the model's parameters; names/shapes/dtypes must match."""
    pairs = model.named_params()
    names = [n for n, _ in pairs]
    missing = [n for n in names if n not in blocks]
    extra = [n for n in blocks if n not in set(names)]
    if missing or extra:
        raise ValueError(f"load_state: missing={missing} extra={extra}")
    for n, t in pairs:
        arr = blocks[n]
        if arr.shape != t.data.shape:
            raise ValueError(f"load_state: {n} shape {arr.shape} != {t.data.shape}")
        if arr.dtype != t.data.dtype:
            raise ValueError(f"load_state: {n} dtype {arr.dtype} != {t.data.dtype}")
        t.data[...] = arr


@dataclass
class FitConfig:
    """Budget and optimizer settings shared by both training loops."""

    steps: int
    batch_size: int
    lr: float
    val_every: int = 0  # 0 disables validation / early stop
    patience: int = 0   # plateaus tolerated before stopping (0 = never stop early)


Record = "tuple[int, float, float]"  # (step, loss, wall seconds)


def _stack(items) -> tuple[np.ndarray, np.ndarray]:
    xs = np.stack([a for a, _ in items]).astype(np.float32, copy=False)
    ys = np.stack([b for _, b in items]).astype(np.float32, copy=False)
    return xs, ys


def _val_loss(forward: Callable[[Tensor], Tensor], items, batch: int = 64) -> float:
    xs, ys = _stack(items)
    total, n = 0.0, xs.shape[0]
    with numeric.no_grad():
        for i in range(0, n, batch):
            pred = forward(Tensor(xs[i:i + batch]))
            d = pred.data - ys[i:i + batch]
            total += float(np.sum(d * d))
    return total / ys.size


def train_e2e(m: E2EModel, items, cfg: FitConfig, rng: Rng, val_items=None) -> list:
    """Per-pixel regression of the encoded mask; returns (step, loss, wall) records."""
    if not items:
        raise ValueError("train_e2e: empty dataset")
    if m.frozen:
        raise ValueError("train_e2e: model is frozen")
    xs, ys = _stack(items)
    n = xs.shape[0]
    opt = numeric.Adam(m.params(), lr=cfg.lr)
    records = []
    best, bad = math.inf, 0
    t0 = time.monotonic()
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, n - 1, size=cfg.batch_size)
        pred = m.forward(Tensor(xs[idx]))
        d = numeric.sub(pred, Tensor(ys[idx]))
        loss = numeric.mean_all(numeric.mul(d, d))
        opt.zero_grad()
        numeric.backward(loss)
        opt.step()
        records.append((step, float(loss.data), time.monotonic() - t0))
        if cfg.val_every and val_items and step % cfg.val_every == 0:
            v = _val_loss(m.forward, val_items)
            if v < best - 1e-6:
                best, bad = v, 0
            else:
                bad += 1
                if cfg.patience and bad >= cfg.patience:
                    break
    return records
