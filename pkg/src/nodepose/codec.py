"""Geometric node codec: single-peak Gaussian heatmaps <-> (x_norm, y_norm, vis) nodes.

Grid convention: cell (h, w) sits at coordinate (w, h), so the argmax of a decoded
map is the cell nearest to (x_norm * W, y_norm * H).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Node:
    x_norm: float
    y_norm: float
    vis: float

    def __post_init__(self):
        for name in ("x_norm", "y_norm", "vis"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"Node.{name}={v} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.x_norm, self.y_norm, self.vis])


@dataclass(frozen=True)
class GncConfig:
    H: int = 64
    W: int = 48
    sigma: float = 3.0
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.H < 8 or self.W < 8:
            raise ValueError("heatmap must be at least 8x8")


def argmax_cell(hm: np.ndarray) -> tuple[int, int]:
    """Row-major first occurrence of the maximum, as (h, w)."""
    idx = int(np.argmax(hm))
    return divmod(idx, hm.shape[-1])


def encode_node(hm: np.ndarray, vis_flag: int) -> Node:
    if hm.size == 0:
        raise ValueError("empty heatmap")
    if vis_flag not in (0, 1):
        raise ValueError("vis_flag must be 0 or 1")
    H, W = hm.shape
    h, w = argmax_cell(hm)
    return Node(w / W, h / H, float(vis_flag))


def decode_heatmap(n: Node | np.ndarray, cfg: GncConfig) -> np.ndarray:
    """Render one node; accepts a Node or any array whose last axis is (x, y, vis).

    Array input is broadcast, so an (..., 3) stack yields an (..., H, W) stack.
    """
    arr = n.as_array() if isinstance(n, Node) else np.asarray(n, dtype=np.float64)
    cx = arr[..., 0, None, None] * cfg.W
    cy = arr[..., 1, None, None] * cfg.H
    vis = arr[..., 2, None, None]
    xs = np.arange(cfg.W, dtype=np.float64)
    ys = np.arange(cfg.H, dtype=np.float64)[:, None]
    energy = ((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * cfg.sigma**2 + cfg.epsilon)
    return vis * np.exp(-energy)
