"""Joint descriptors from past heatmaps, velocity extrapolation, and descriptor embedders."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .codec import argmax_cell

VIS_THRESHOLD = 0.35


@dataclass(frozen=True)
class SubPixelPeak:
    x: float
    y: float
    peak_value: float
    refined: bool


@dataclass(frozen=True)
class JointDescriptor:
    x_norm: float
    y_norm: float
    v_peak: float
    v_vis: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_norm, self.y_norm, self.v_peak, self.v_vis])


@dataclass(frozen=True)
class JointVelocity:
    dx: float
    dy: float

    @property
    def speed(self) -> float:
        return math.hypot(self.dx, self.dy)


def taylor_refine(hm: np.ndarray, peak: tuple[int, int] | None = None) -> SubPixelPeak:
    """Second-order Taylor step on the 3x3 window around the integer peak.

    Falls back to the integer peak at borders, for near-singular Hessians and
    for non-finite solves. Each offset component is clamped to [-1, 1].
    """
    H, W = hm.shape
    h0, w0 = argmax_cell(hm) if peak is None else peak
    value = float(hm[h0, w0])
    fallback = SubPixelPeak(float(w0), float(h0), value, False)
    if h0 <= 0 or w0 <= 0 or h0 >= H - 1 or w0 >= W - 1:
        return fallback

    f = hm[h0 - 1 : h0 + 2, w0 - 1 : w0 + 2].astype(np.float64)
    gx = (f[1, 2] - f[1, 0]) / 2.0
    gy = (f[2, 1] - f[0, 1]) / 2.0
    hxx = f[1, 2] - 2.0 * f[1, 1] + f[1, 0]
    hyy = f[2, 1] - 2.0 * f[1, 1] + f[0, 1]
    hxy = (f[2, 2] - f[2, 0] - f[0, 2] + f[0, 0]) / 4.0
    det = hxx * hyy - hxy * hxy
    if not np.isfinite(det) or abs(det) < 1e-10:
        return fallback
    # closed-form inverse of the symmetric 2x2 Hessian
    dx = -(hyy * gx - hxy * gy) / det
    dy = -(hxx * gy - hxy * gx) / det
    if not (np.isfinite(dx) and np.isfinite(dy)):
        return fallback
    dx = min(max(dx, -1.0), 1.0)
    dy = min(max(dy, -1.0), 1.0)
    return SubPixelPeak(w0 + dx, h0 + dy, value, True)


def descriptor_from_peak(peak: SubPixelPeak, H: int, W: int, thresh: float = VIS_THRESHOLD) -> JointDescriptor:
    v_peak = min(max(peak.peak_value, 0.0), 1.0)
    return JointDescriptor(peak.x / W, peak.y / H, v_peak, 1.0 if v_peak >= thresh else 0.0)


def build_past_descriptor(hm: np.ndarray, thresh: float = VIS_THRESHOLD) -> JointDescriptor:
    H, W = hm.shape
    return descriptor_from_peak(taylor_refine(hm), H, W, thresh)


def extrapolate_current(
    p_prev2: SubPixelPeak,
    p_prev1: SubPixelPeak,
    d_prev1: JointDescriptor,
    H: int,
    W: int,
) -> tuple[JointDescriptor, JointVelocity, tuple[float, float]]:
    """Constant-velocity guess for frame t from frames t-2 and t-1.

    The predicted center is clamped into the grid before normalization; the
    descriptor reuses the previous frame's peak score and visibility.
    """
    vel = JointVelocity(p_prev1.x - p_prev2.x, p_prev1.y - p_prev2.y)
    cx = min(max(p_prev1.x + vel.dx, 0.0), W - 1.0)
    cy = min(max(p_prev1.y + vel.dy, 0.0), H - 1.0)
    desc = JointDescriptor(cx / W, cy / H, d_prev1.v_peak, d_prev1.v_vis)
    return desc, vel, (cx, cy)


class JointEmbedder(nn.Module):
    """Two-layer ReLU MLP, 4 -> D -> D, shared across joints."""

    def __init__(self, dim: int = 32):
        super().__init__()
        self.fc1 = nn.Linear(4, dim)
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, d: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(d)))


def embed_descriptor(d: JointDescriptor | np.ndarray | torch.Tensor, params: JointEmbedder) -> torch.Tensor:
    if isinstance(d, JointDescriptor):
        d = d.as_array()
    if not isinstance(d, torch.Tensor):
        d = torch.as_tensor(d, dtype=params.fc1.weight.dtype)
    return params(d)
