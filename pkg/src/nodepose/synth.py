"""Seeded synthetic 3-frame clips and their binary file format.

Features are an explicit stand-in for backbone features: per-joint-group
Gaussian blobs, two normalized coordinate ramps, an occluder channel, and
seeded noise channels. Occluded joints move their blob from the group channel
to the occluder channel, so occlusion is visible in the features while a
weakened or shifted heatmap peak is not.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .codec import GncConfig, decode_heatmap
from .skeleton import SkeletonGraph

T_FRAMES = 3

# person's left is +x; pixels relative to the pelvis at 64 px crop height
BASE_POSE = np.array([
    [0.0, -22.0],   # head
    [0.0, -16.0],   # neck
    [5.0, -15.0],   # l_shoulder
    [-5.0, -15.0],  # r_shoulder
    [7.0, -8.0],    # l_elbow
    [-7.0, -8.0],   # r_elbow
    [8.0, -1.0],    # l_wrist
    [-8.0, -1.0],   # r_wrist
    [4.0, 1.0],     # l_hip
    [-4.0, 1.0],    # r_hip
    [4.0, 11.0],    # l_knee
    [-4.0, 11.0],   # r_knee
    [4.0, 20.0],    # l_ankle
    [-4.0, 20.0],   # r_ankle
    [0.0, 0.0],     # pelvis
])

JOINT_GROUPS = (0, 0, 1, 2, 1, 2, 1, 2, 3, 4, 3, 4, 3, 4, 5)
N_GROUPS = 6
FEATURE_SIGMA = 2.0
GROUP_NOISE = 0.02
NOISE_CHANNEL_STD = 0.5
OCCLUDER_CHANNEL = N_GROUPS + 2
OCCLUDER_STREAM = 7
BORDER_MARGIN = 2.0

CLIP_MAGIC = b"NPCLIP01"
CLIP_VERSION = 1


class ClipFormatError(ValueError):
    pass


@dataclass(frozen=True)
class MotionConfig:
    speed_min: float = 0.0
    speed_max: float = 3.0
    mode: Literal["constant_velocity", "accelerating", "jitter"] = "constant_velocity"
    occlusion_prob: float = 0.0
    noise_amp: float = 0.0
    drop_prob: float = 0.0
    shift_prob: float = 0.0
    shift_px: float = 3.0
    joint_speed_std: float = 0.3
    accel_max: float = 1.0
    jitter_px: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.speed_min <= self.speed_max <= 20.0:
            raise ValueError("speed range must lie within [0, 20]")
        probs = (self.occlusion_prob, self.drop_prob, self.shift_prob)
        if any(not 0.0 <= p <= 1.0 for p in probs) or sum(probs) > 1.0:
            raise ValueError("corruption probabilities must lie in [0, 1] and sum to at most 1")
        if self.noise_amp < 0:
            raise ValueError("noise_amp must be nonnegative")
        if self.mode not in ("constant_velocity", "accelerating", "jitter"):
            raise ValueError(f"unknown motion mode {self.mode!r}")


@dataclass
class ClipSample:
    heatmaps: np.ndarray  # (T, J, H, W) float32
    features: np.ndarray  # (T, C, H, W) float32
    gt_nodes: np.ndarray  # (T, J, 3) float32
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        T, J, H, W = self.heatmaps.shape
        if T < T_FRAMES:
            raise ValueError("a clip needs at least three frames")
        if self.features.shape[0] != T or self.features.shape[2:] != (H, W):
            raise ValueError("features do not match the heatmap grid")
        if self.gt_nodes.shape != (T, J, 3):
            raise ValueError("gt_nodes must be (T, J, 3)")

    @property
    def shape(self):
        T, J, H, W = self.heatmaps.shape
        return T, J, self.features.shape[1], H, W

    def equals(self, other: "ClipSample") -> bool:
        return (
            self.heatmaps.dtype == other.heatmaps.dtype
            and np.array_equal(self.heatmaps, other.heatmaps)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.gt_nodes, other.gt_nodes)
            and self.meta == other.meta
        )


def _trajectory(rng: np.random.Generator, base: np.ndarray, motion: MotionConfig) -> np.ndarray:
    """(T, J, 2) pixel positions starting from base."""
    J = base.shape[0]
    speed = rng.uniform(motion.speed_min, motion.speed_max)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    v = np.array([math.cos(angle), math.sin(angle)]) * speed + rng.normal(0.0, motion.joint_speed_std, (J, 2))
    accel_dir = rng.uniform(0.0, 2.0 * math.pi)
    accel = np.array([math.cos(accel_dir), math.sin(accel_dir)]) * rng.uniform(0.0, motion.accel_max)
    jitter = rng.normal(0.0, motion.jitter_px, (T_FRAMES, J, 2))

    p0 = base
    p1 = p0 + v
    if motion.mode == "accelerating":
        p1 = p1 + 0.5 * accel
        p2 = p0 + 2.0 * v + 2.0 * accel
    else:
        p2 = p1 + (p1 - p0)
    traj = np.stack([p0, p1, p2])
    if motion.mode == "jitter":
        traj = traj + jitter
    return traj


def _blobs(nodes: np.ndarray, H: int, W: int) -> np.ndarray:
    """(..., J, 3) nodes -> (..., J, H, W) unit-height feature blobs."""
    return decode_heatmap(np.concatenate([nodes[..., :2], np.ones_like(nodes[..., :1])], axis=-1),
                          GncConfig(H=H, W=W, sigma=FEATURE_SIGMA, epsilon=0.0))


def generate_clip(
    seed: int,
    motion: MotionConfig,
    skel: SkeletonGraph,
    cfg: GncConfig,
    channels: int = 16,
) -> ClipSample:
    if skel.J != BASE_POSE.shape[0]:
        raise ValueError(f"generator poses are defined for {BASE_POSE.shape[0]} joints")
    if channels < N_GROUPS + 2:
        raise ValueError(f"need at least {N_GROUPS + 2} feature channels")
    H, W = cfg.H, cfg.W
    rng = np.random.default_rng(seed)
    scale = rng.uniform(0.8, 1.0) * H / 64.0
    pose = BASE_POSE * scale + rng.normal(0.0, 0.7, BASE_POSE.shape) * scale

    traj = None
    for _ in range(100):
        cand = _trajectory(rng, pose, motion)
        lo = cand.min(axis=(0, 1))
        hi = cand.max(axis=(0, 1))
        room = np.array([W - 1.0, H - 1.0]) - 2 * BORDER_MARGIN - (hi - lo)
        if np.all(room >= 0):
            offset = BORDER_MARGIN - lo + rng.uniform(0.0, 1.0, 2) * room
            traj = cand + offset
            break
    if traj is None:
        raise ValueError("motion config pushes the skeleton out of the grid")

    gt = np.empty((T_FRAMES, skel.J, 3))
    gt[..., 0] = traj[..., 0] / W
    gt[..., 1] = traj[..., 1] / H
    gt[..., 2] = 1.0
    gt = gt.astype(np.float32)

    heatmaps = decode_heatmap(gt.astype(np.float64), cfg).astype(np.float32)

    feats = np.zeros((T_FRAMES, channels, H, W))
    blobs = _blobs(gt.astype(np.float64), H, W)
    for j, g in enumerate(JOINT_GROUPS):
        feats[:, g] += blobs[:, j]
    feats[:, :N_GROUPS] += rng.normal(0.0, GROUP_NOISE, (T_FRAMES, N_GROUPS, H, W))
    feats[:, N_GROUPS] = np.arange(W)[None, None, :] / W
    feats[:, N_GROUPS + 1] = np.arange(H)[None, :, None] / H
    feats[:, N_GROUPS + 2 :] = rng.normal(0.0, NOISE_CHANNEL_STD, (T_FRAMES, channels - N_GROUPS - 2, H, W))
    if channels > OCCLUDER_CHANNEL:
        # separate stream so the remaining noise channels keep their values
        occ_rng = np.random.default_rng([seed, OCCLUDER_STREAM])
        feats[:, OCCLUDER_CHANNEL] = occ_rng.normal(0.0, GROUP_NOISE, (T_FRAMES, H, W))

    meta = {"seed": int(seed), "motion": asdict(motion), "sigma": cfg.sigma, "corruption": None}
    return ClipSample(heatmaps, feats.astype(np.float32), gt, meta)


def corrupt_clip(c: ClipSample, motion: MotionConfig, seed: int) -> ClipSample:
    """Occlude, weaken, shift and add noise to the current frame of a clip.

    Per joint, one of: full suppression (heatmap removed, feature blob moved
    to the occluder channel, gt vis set to 0), peak drop (scaled into
    [0.05, 0.3], below the 0.35 visibility threshold, vis kept), or a shifted
    apparent peak. Drop and shift leave the features alone. Uniform noise in
    [0, noise_amp) is then added to every current-frame heatmap.
    """
    T, J, C, H, W = c.shape
    t = T - 1
    rng = np.random.default_rng(seed)
    u = rng.random(J)
    factors = rng.uniform(0.05, 0.3, J)
    angles = rng.uniform(0.0, 2.0 * math.pi, J)
    noise = rng.uniform(0.0, 1.0, (J, H, W)) * motion.noise_amp

    hm = c.heatmaps.astype(np.float64)
    feats = c.features.astype(np.float64)
    gt = c.gt_nodes.copy()
    blobs = _blobs(gt[t].astype(np.float64), H, W)
    cfg = GncConfig(H=H, W=W, sigma=float(c.meta.get("sigma", 3.0)))
    p_occ, p_drop, p_shift = motion.occlusion_prob, motion.drop_prob, motion.shift_prob
    touched = motion.noise_amp > 0
    for j in range(J):
        if u[j] < p_occ:
            hm[t, j] = 0.0
            gt[t, j, 2] = 0.0
            feats[t, JOINT_GROUPS[j]] -= blobs[j]
            if C > OCCLUDER_CHANNEL:
                feats[t, OCCLUDER_CHANNEL] += blobs[j]
        elif u[j] < p_occ + p_drop:
            hm[t, j] *= factors[j]
        elif u[j] < p_occ + p_drop + p_shift:
            x = min(max(gt[t, j, 0] * W + motion.shift_px * math.cos(angles[j]), 0.0), W - 1.0)
            y = min(max(gt[t, j, 1] * H + motion.shift_px * math.sin(angles[j]), 0.0), H - 1.0)
            hm[t, j] = decode_heatmap(np.array([x / W, y / H, 1.0]), cfg)
        else:
            continue
        touched = True
    if motion.noise_amp > 0:
        hm[t] += noise

    if not touched:
        return ClipSample(c.heatmaps.copy(), c.features.copy(), gt, dict(c.meta))
    meta = dict(c.meta)
    meta["corruption"] = {"seed": int(seed), "motion": asdict(motion)}
    return ClipSample(hm.astype(np.float32), feats.astype(np.float32), gt, meta)


def dataset_seeds(seed: int, n: int, stream: int = 0) -> list[int]:
    state = np.random.SeedSequence([int(seed), int(stream)]).generate_state(n, dtype=np.uint64)
    return [int(s) for s in state]


def generate_dataset(
    n: int,
    seed: int,
    motion: MotionConfig,
    skel: SkeletonGraph,
    cfg: GncConfig,
    channels: int = 16,
    corrupt: bool = True,
) -> list[ClipSample]:
    clip_seeds = dataset_seeds(seed, n, 0)
    corrupt_seeds = dataset_seeds(seed, n, 1)
    clips = []
    for s, cs in zip(clip_seeds, corrupt_seeds):
        clip = generate_clip(s, motion, skel, cfg, channels)
        clips.append(corrupt_clip(clip, motion, cs) if corrupt else clip)
    return clips


# --- binary clip files -------------------------------------------------------
# header (16 B): magic "NPCLIP01" | u16 version | u16 reserved | u32 clip count
# geometry (12 B): u16 T, J, C, H, W, reserved
# per clip: float32 heatmaps (T,J,H,W), features (T,C,H,W), gt_nodes (T,J,3); all little-endian
# sidecar <path>.json: per-clip metadata (seeds, motion and corruption settings)

_HEADER = struct.Struct("<8sHHI")
_GEOMETRY = struct.Struct("<6H")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_clips(path, clips: list[ClipSample]) -> None:
    if not clips:
        raise ValueError("nothing to save")
    shape = clips[0].shape
    if any(c.shape != shape for c in clips):
        raise ValueError("all clips in a file must share one geometry")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CLIP_MAGIC, CLIP_VERSION, 0, len(clips)))
        fh.write(_GEOMETRY.pack(*shape, 0))
        for c in clips:
            for arr in (c.heatmaps, c.features, c.gt_nodes):
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    side = {"format": CLIP_MAGIC.decode(), "version": CLIP_VERSION, "clips": [c.meta for c in clips]}
    sidecar_path(path).write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")


def load_clips(path) -> list[ClipSample]:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size + _GEOMETRY.size:
        raise ClipFormatError(f"{path}: truncated header")
    magic, version, _, n = _HEADER.unpack_from(data, 0)
    if magic != CLIP_MAGIC:
        raise ClipFormatError(f"{path}: bad magic {magic!r}")
    if version != CLIP_VERSION:
        raise ClipFormatError(f"{path}: unsupported version {version}")
    T, J, C, H, W, _ = _GEOMETRY.unpack_from(data, _HEADER.size)
    sizes = [T * J * H * W, T * C * H * W, T * J * 3]
    per_clip = 4 * sum(sizes)
    offset = _HEADER.size + _GEOMETRY.size
    expected = offset + n * per_clip
    if len(data) < expected:
        raise ClipFormatError(f"{path}: truncated payload ({len(data)} of {expected} bytes)")
    if len(data) > expected:
        raise ClipFormatError(f"{path}: {len(data) - expected} trailing bytes")

    metas = [{} for _ in range(n)]
    side = sidecar_path(path)
    if side.exists():
        doc = json.loads(side.read_text())
        if doc.get("version") != CLIP_VERSION or len(doc.get("clips", [])) != n:
            raise ClipFormatError(f"{side}: sidecar does not match {path}")
        metas = doc["clips"]

    clips = []
    for i in range(n):
        arrs = []
        for size, shape in zip(sizes, [(T, J, H, W), (T, C, H, W), (T, J, 3)]):
            arrs.append(np.frombuffer(data, dtype="<f4", count=size, offset=offset).reshape(shape).astype(np.float32))
            offset += 4 * size
        clips.append(ClipSample(*arrs, meta=metas[i]))
    return clips
