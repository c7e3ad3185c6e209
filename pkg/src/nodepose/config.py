"""Run configuration and its plain-text ``key = value`` file format.

Blank lines and ``#`` comments are ignored. Keys are RunConfig field names;
``edges`` takes ``a-b`` pairs separated by commas. Unknown keys are an error.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .codec import GncConfig
from .model import ModelDims
from .objective import LossConfig
from .skeleton import CANONICAL_EDGES, SkeletonGraph, build_adjacency
from .synth import MotionConfig


@dataclass
class RunConfig:
    # model / grid dimensions
    D: int = 32
    C_q: int = 32
    F: int = 64
    F_t: int = 64
    F_g: int = 32
    H: int = 64
    W: int = 48
    C: int = 16
    J: int = 15
    sigma: float = 3.0
    edges: tuple = CANONICAL_EDGES
    # seeds
    seed: int = 0
    data_seed: int = 1
    eval_seed: int = 2
    # data
    train_clips: int = 256
    val_clips: int = 64
    eval_clips: int = 64
    mode: str = "constant_velocity"
    speed_min: float = 0.0
    speed_max: float = 3.0
    occlusion_prob: float = 0.3
    noise_amp: float = 0.2
    drop_prob: float = 0.15
    shift_prob: float = 0.1
    shift_px: float = 3.0
    # optimization
    optimizer: str = "adam"
    step_size: float = 1e-2
    lr_schedule: str = "constant"
    warmup_steps: int = 0
    grad_clip: float = 1.0
    ema_decay: float = 0.98  # > 0: log and save an exponential moving average of the weights
    steps: int = 500
    batch_size: int = 256
    log_every: int = 50
    huber_delta: float = 0.05
    dtype: str = "float32"
    # outputs
    out: str = "runs/default"
    dump_images: bool = False

    def dims(self) -> ModelDims:
        return ModelDims(self.D, self.C_q, self.F, self.F_t, self.F_g, self.C, self.J, self.H, self.W)

    def gnc(self) -> GncConfig:
        return GncConfig(H=self.H, W=self.W, sigma=self.sigma)

    def skeleton(self) -> SkeletonGraph:
        return build_adjacency(self.edges, self.J)

    def motion(self, corrupted: bool = True) -> MotionConfig:
        kw = dict(mode=self.mode, speed_min=self.speed_min, speed_max=self.speed_max, shift_px=self.shift_px)
        if corrupted:
            kw.update(occlusion_prob=self.occlusion_prob, noise_amp=self.noise_amp,
                      drop_prob=self.drop_prob, shift_prob=self.shift_prob)
        return MotionConfig(**kw)

    def loss(self) -> LossConfig:
        return LossConfig(huber_delta=self.huber_delta)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def _parse_edges(text: str) -> tuple:
    pairs = []
    for item in text.replace(" ", "").split(","):
        if item:
            a, b = item.split("-")
            pairs.append((int(a), int(b)))
    return tuple(pairs)


def _coerce(f: dataclasses.Field, raw: str):
    kind = type(f.default)
    if f.name == "edges":
        return _parse_edges(raw)
    if kind is bool:
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{f.name}: expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    return kind(raw)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        updates[key] = _coerce(known[key], raw)
    return dataclasses.replace(base or RunConfig(), **updates)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "edges":
            v = ",".join(f"{a}-{b}" for a, b in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
