"""Run configuration: a strict, fully serializable description of a run.

Configs are YAML mappings with a closed schema; unknown keys are rejected
with their dotted path so a typo can never silently fall back to a default
and quietly change what a "reproducible" run means.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import yaml

MODES = ("segmentation", "restoration")
PRECISIONS = ("float32", "float64")


class ConfigError(ValueError):
    """Invalid configuration; message carries the offending field path."""


def _ctx(path, key):
    return f"{path}.{key}" if path else key


class _Section:
    """Dict view that tracks consumed keys and complains about leftovers."""

    def __init__(self, raw: dict, path: str, source: str):
        if not isinstance(raw, dict):
            raise ConfigError(f"{source}: {path or 'top level'} must be a mapping, got {type(raw).__name__}")
        self.raw = dict(raw)
        self.path = path
        self.source = source

    def take(self, key, kind, default=..., check=None):
        if key in self.raw:
            val = self.raw.pop(key)
        elif default is not ...:
            val = default
        else:
            raise ConfigError(f"{self.source}: missing required key {_ctx(self.path, key)!r}")
        if kind is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if not isinstance(val, kind) or isinstance(val, bool) and kind is not bool:
            raise ConfigError(
                f"{self.source}: {_ctx(self.path, key)!r} must be {kind.__name__}, "
                f"got {type(val).__name__} ({val!r})")
        if check is not None:
            err = check(val)
            if err:
                raise ConfigError(f"{self.source}: {_ctx(self.path, key)!r} {err}")
        return val

    def pair(self, key, kind, default):
        val = self.raw.pop(key, list(default))
        if (not isinstance(val, (list, tuple)) or len(val) != 2
                or not all(isinstance(v, kind) or kind is float and isinstance(v, int) for v in val)):
            raise ConfigError(
                f"{self.source}: {_ctx(self.path, key)!r} must be a pair of {kind.__name__}, got {val!r}")
        return (kind(val[0]), kind(val[1]))

    def sub(self, key) -> "_Section":
        return _Section(self.raw.pop(key, {}), _ctx(self.path, key), self.source)

    def done(self):
        if self.raw:
            bad = ", ".join(repr(_ctx(self.path, k)) for k in sorted(self.raw))
            raise ConfigError(f"{self.source}: unknown key(s) {bad}")


@dataclass
class DataConfig:
    source: str = "generate"  # "generate" or a dataset directory path
    train: int = 2048
    val: int = 256
    test: int = 256
    num_shapes: tuple = (1, 3)
    fg_intensity: tuple = (0.5, 0.9)
    bg_intensity: tuple = (0.1, 0.5)
    noise: float = 0.08
    fg_bounds: tuple = (0.05, 0.60)
    corruption: float = 0.25


@dataclass
class ModelConfig:
    base_channels: int = 16
    time_embed_dim: int = 32
    e2e_channels: int = 8


@dataclass
class FitSection:
    steps: int = 400
    batch_size: int = 16
    lr: float = 1e-3
    val_every: int = 0
    patience: int = 0


@dataclass
class RunConfig:
    mode: str = "segmentation"
    seed: int = 0
    precision: str = "float32"
    T: int = 100
    image_size: int = 16
    out_dir: str = "runs/out"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train_e2e: FitSection = field(default_factory=FitSection)
    # diffusion training needs a longer default budget than the e2e learner
    train_diffusion: FitSection = field(default_factory=lambda: FitSection(steps=600))

    def to_dict(self) -> dict:
        d = asdict(self)
        for sec in ("data",):
            for k, v in d[sec].items():
                if isinstance(v, tuple):
                    d[sec][k] = list(v)
        return d


def _fit_section(sec: _Section, defaults: FitSection) -> FitSection:
    pos = lambda v: None if v >= 1 else "must be >= 1"
    nonneg = lambda v: None if v >= 0 else "must be >= 0"
    out = FitSection(
        steps=sec.take("steps", int, defaults.steps, pos),
        batch_size=sec.take("batch_size", int, defaults.batch_size, pos),
        lr=sec.take("lr", float, defaults.lr, lambda v: None if v > 0 else "must be > 0"),
        val_every=sec.take("val_every", int, defaults.val_every, nonneg),
        patience=sec.take("patience", int, defaults.patience, nonneg),
    )
    sec.done()
    return out


def from_dict(raw: dict, source: str = "<config>") -> RunConfig:
    top = _Section(raw, "", source)
    mode = top.take("mode", str, "segmentation",
                    lambda v: None if v in MODES else f"must be one of {MODES}")
    seed = top.take("seed", int, 0, lambda v: None if 0 <= v < 2**64 else "must fit in 64 bits")
    precision = top.take("precision", str, "float32",
                         lambda v: None if v in PRECISIONS else f"must be one of {PRECISIONS}")
    t_steps = top.take("T", int, 100, lambda v: None if v >= 2 else "must be >= 2")
    image_size = top.take("image_size", int, 16,
                          lambda v: None if v >= 8 and v % 4 == 0 else "must be >= 8 and divisible by 4")
    out_dir = top.take("out_dir", str, "runs/out")

    ds = top.sub("data")
    pos = lambda v: None if v >= 1 else "must be >= 1"
    data = DataConfig(
        source=ds.take("source", str, "generate"),
        train=ds.take("train", int, 2048, pos),
        val=ds.take("val", int, 256, pos),
        test=ds.take("test", int, 256, pos),
        num_shapes=ds.pair("num_shapes", int, (1, 3)),
        fg_intensity=ds.pair("fg_intensity", float, (0.5, 0.9)),
        bg_intensity=ds.pair("bg_intensity", float, (0.1, 0.5)),
        noise=ds.take("noise", float, 0.08, lambda v: None if v >= 0 else "must be >= 0"),
        fg_bounds=ds.pair("fg_bounds", float, (0.05, 0.60)),
        corruption=ds.take("corruption", float, 0.25, lambda v: None if v >= 0 else "must be >= 0"),
    )
    ds.done()
    if data.num_shapes[0] < 1 or data.num_shapes[1] < data.num_shapes[0]:
        raise ConfigError(f"{source}: 'data.num_shapes' must be 1 <= lo <= hi, got {data.num_shapes}")

    ms = top.sub("model")
    model = ModelConfig(
        base_channels=ms.take("base_channels", int, 16, pos),
        time_embed_dim=ms.take("time_embed_dim", int, 32,
                               lambda v: None if v >= 2 and v % 2 == 0 else "must be even and >= 2"),
        e2e_channels=ms.take("e2e_channels", int, 8, pos),
    )
    ms.done()

    cfg = RunConfig(
        mode=mode, seed=seed, precision=precision, T=t_steps, image_size=image_size,
        out_dir=out_dir, data=data, model=model,
        train_e2e=_fit_section(top.sub("train_e2e"), FitSection(steps=400, batch_size=16, lr=1e-3)),
        train_diffusion=_fit_section(top.sub("train_diffusion"), FitSection(steps=600, batch_size=16, lr=1e-3)),
    )
    top.done()
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML: {e}")
    if raw is None:
        raw = {}
    return from_dict(raw, source=str(path))
