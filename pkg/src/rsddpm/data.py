"""Deterministic synthetic scenes: shapes on noisy backgrounds.

Every item is a pure function of (spec, index): generation draws only from a
child stream keyed by the item index, so regenerating any item after a
process restart is byte-identical and splits can be materialized lazily.

Segmentation items are (image in [0,1], binary mask in {0,1}); restoration
items are (corrupted image, clean image) with an additive corruption that is
exactly recoverable as I0 - x0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numeric import Rng
from .pipeline import Dataset

KINDS = ("disk", "rectangle", "triangle")
MIN_IMAGE = 8
MAX_SCENE_TRIES = 200


@dataclass(frozen=True)
class ShapeSceneSpec:
    """Everything that determines a scene distribution, including the seed."""

    image_size: tuple = (16, 16)
    num_shapes: tuple = (1, 3)
    kinds: tuple = KINDS
    fg_intensity: tuple = (0.5, 0.9)
    bg_intensity: tuple = (0.1, 0.5)
    noise: float = 0.08
    fg_bounds: tuple = (0.05, 0.60)
    corruption: float = 0.25
    seed: int = 0

    def __post_init__(self):
        h, w = self.image_size
        if h < MIN_IMAGE or w < MIN_IMAGE:
            raise ValueError(
                f"image_size {self.image_size} is below the {MIN_IMAGE}px minimum shape scale")
        for k in self.kinds:
            if k not in KINDS:
                raise ValueError(f"unknown shape kind {k!r}; expected subset of {KINDS}")
        if not 0.0 <= self.fg_bounds[0] < self.fg_bounds[1] <= 1.0:
            raise ValueError(f"fg_bounds must be an increasing pair in [0,1], got {self.fg_bounds}")


def _uniform(rng: Rng, lo: float, hi: float) -> float:
    return lo + (hi - lo) * float(rng.uniform((), dtype=np.float64))


def _paint_disk(rng: Rng, img, mask, h, w, intensity):
    r = _uniform(rng, 1.5, max(2.0, min(h, w) / 3.0))
    cy, cx = _uniform(rng, r, h - r), _uniform(rng, r, w - r)
    yy, xx = np.mgrid[0:h, 0:w]
    hit = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    img[hit] = intensity
    mask[hit] = 1.0


def _paint_rectangle(rng: Rng, img, mask, h, w, intensity):
    y0 = int(rng.integers(0, h - 3))
    x0 = int(rng.integers(0, w - 3))
    y1 = int(rng.integers(y0 + 2, min(h - 1, y0 + h // 2 + 2)))
    x1 = int(rng.integers(x0 + 2, min(w - 1, x0 + w // 2 + 2)))
    img[y0:y1 + 1, x0:x1 + 1] = intensity
    mask[y0:y1 + 1, x0:x1 + 1] = 1.0


def _paint_triangle(rng: Rng, img, mask, h, w, intensity):
    for _ in range(20):
        ys = rng.integers(0, h - 1, size=3).astype(np.float64)
        xs = rng.integers(0, w - 1, size=3).astype(np.float64)
        area2 = abs((xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0]))
        if area2 >= 8:
            break
    yy, xx = np.mgrid[0:h, 0:w]

    def edge(i, j):
        return (xx - xs[i]) * (ys[j] - ys[i]) - (yy - ys[i]) * (xs[j] - xs[i])

    e0, e1, e2 = edge(0, 1), edge(1, 2), edge(2, 0)
    hit = ((e0 >= 0) & (e1 >= 0) & (e2 >= 0)) | ((e0 <= 0) & (e1 <= 0) & (e2 <= 0))
    img[hit] = intensity
    mask[hit] = 1.0


_PAINTERS = {"disk": _paint_disk, "rectangle": _paint_rectangle, "triangle": _paint_triangle}


def _scene(spec: ShapeSceneSpec, rng: Rng):
    """One shapes-on-background scene; retries until the foreground fraction
    lands inside spec.fg_bounds."""
    h, w = spec.image_size
    lo, hi = spec.fg_bounds
    for _ in range(MAX_SCENE_TRIES):
        img = np.full((h, w), _uniform(rng, *spec.bg_intensity), dtype=np.float64)
        mask = np.zeros((h, w), dtype=np.float64)
        k = int(rng.integers(spec.num_shapes[0], spec.num_shapes[1]))
        for _ in range(k):
            kind = spec.kinds[int(rng.integers(0, len(spec.kinds) - 1))]
            _PAINTERS[kind](rng, img, mask, h, w, _uniform(rng, *spec.fg_intensity))
        frac = float(mask.mean())
        if lo <= frac <= hi:
            return img, mask
    raise RuntimeError(
        f"could not hit foreground bounds {spec.fg_bounds} in {MAX_SCENE_TRIES} tries; "
        "spec shape/image sizes are inconsistent")


def seg_item(spec: ShapeSceneSpec, index: int):
    """Segmentation pair (I0, x0): noisy image in [0,1], mask in {0,1}.

    Pure function of (spec, index). Shapes are (1, H, W) float32.
    """
    rng = Rng(spec.seed).child(0, index)
    img, mask = _scene(spec, rng)
    img = img + spec.noise * rng.normal(img.shape, dtype=np.float64)
    img = np.clip(img, 0.0, 1.0)
    return (img[None].astype(np.float32), mask[None].astype(np.float32))


def rest_item(spec: ShapeSceneSpec, index: int):
    """Restoration pair (I0 = x0 + c, x0) with additive Gaussian corruption.

    The stored corruption is I0 - x0 evaluated in float32, so the residual
    identity R == c holds bit-exactly; ``rest_corruption`` regenerates it.
    """
    rng = Rng(spec.seed).child(1, index)
    img, _ = _scene(spec, rng)
    x0 = np.clip(img + spec.noise * rng.normal(img.shape, dtype=np.float64), 0.0, 1.0)
    x0 = x0[None].astype(np.float32)
    c = (spec.corruption * rng.normal(x0.shape, dtype=np.float64)).astype(np.float32)
    i0 = x0 + c
    return (i0, x0)


def rest_corruption(spec: ShapeSceneSpec, index: int) -> np.ndarray:
    i0, x0 = rest_item(spec, index)
    return i0 - x0


def gen_segmentation(spec: ShapeSceneSpec, n: int, start_index: int = 0) -> list:
    if n < 1:
        raise ValueError("gen_segmentation: n must be >= 1")
    return [seg_item(spec, start_index + i) for i in range(n)]


def gen_restoration(spec: ShapeSceneSpec, n: int, start_index: int = 0) -> list:
    if n < 1:
        raise ValueError("gen_restoration: n must be >= 1")
    return [rest_item(spec, start_index + i) for i in range(n)]


def encode_mask(mask01: np.ndarray) -> np.ndarray:
    """{0,1} mask -> {-1,+1} signal the models regress."""
    return (2.0 * mask01 - 1.0).astype(mask01.dtype)


def decode_mask(x: np.ndarray) -> np.ndarray:
    """Encoded-space signal -> {0,1} mask (decision boundary at 0)."""
    return (x > 0).astype(np.float32)


def make_dataset(spec: ShapeSceneSpec, n_train: int, n_val: int, n_test: int,
                 mode: str = "segmentation") -> Dataset:
    """Disjoint train/val/test splits from consecutive item indices."""
    gen = gen_segmentation if mode == "segmentation" else gen_restoration
    n = n_train + n_val + n_test
    items = gen(spec, n)
    return Dataset(items=items, splits={
        "train": list(range(0, n_train)),
        "val": list(range(n_train, n_train + n_val)),
        "test": list(range(n_train + n_val, n)),
    })
