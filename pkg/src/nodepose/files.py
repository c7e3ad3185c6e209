"""Checkpoint and grayscale image files."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

from .model import ModelDims, NodePoseHead, flatten_params, unflatten_params

CKPT_MAGIC = b"NPCKPT01"
CKPT_VERSION = 1

# header (16 B): magic | u16 version | u16 reserved | u32 parameter count
# dims (20 B): u16 D, C_q, F, F_t, F_g, C, J, H, W, reserved
# payload: float64 little-endian flattened parameters (stable named_parameters order)
_HEADER = struct.Struct("<8sHHI")
_DIMS = struct.Struct("<10H")
_DIM_ORDER = ("D", "C_q", "F", "F_t", "F_g", "C", "J", "H", "W")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: NodePoseHead) -> None:
    flat = flatten_params(model).numpy().astype("<f8")
    dims = [getattr(model.dims, k) for k in _DIM_ORDER]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, 0, flat.size))
        fh.write(_DIMS.pack(*dims, 0))
        fh.write(flat.tobytes())


def load_checkpoint(path, dtype=torch.float64) -> NodePoseHead:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + _DIMS.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, _, n = _HEADER.unpack_from(data, 0)
    if magic != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    dims = ModelDims(*_DIMS.unpack_from(data, _HEADER.size)[:9])
    offset = _HEADER.size + _DIMS.size
    if len(data) != offset + 8 * n:
        raise CheckpointError(f"{path}: payload has {len(data) - offset} bytes, expected {8 * n}")
    model = NodePoseHead(dims).to(dtype)
    flat = torch.from_numpy(np.frombuffer(data, dtype="<f8", offset=offset).astype(np.float64))
    try:
        unflatten_params(model, flat)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return model


def write_pgm(path, img: np.ndarray, vmax: float | None = None) -> None:
    """Binary 8-bit PGM (P5); values scaled so vmax maps to 255."""
    img = np.asarray(img, dtype=np.float64)
    top = float(img.max()) if vmax is None else vmax
    scaled = np.zeros_like(img) if top <= 0 else np.clip(img / top, 0.0, 1.0)
    raster = np.round(scaled * 255).astype(np.uint8)
    H, W = raster.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
        fh.write(raster.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, size, depth, raster = data.split(b"\n", 3)
    if magic != b"P5" or int(depth) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    W, H = (int(v) for v in size.split())
    return np.frombuffer(raster, dtype=np.uint8, count=H * W).reshape(H, W)
