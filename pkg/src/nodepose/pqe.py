"""Pose-query encoder: joint-conditioned masked attention over frame features."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
import torch
from torch import nn

R_MIN = 3
R_MAX = 15
PAST_RADII = (3, 6)
MASK_PENALTY = 1e4
TAU_FLOOR = 1e-6

FrameRole = Literal["past2", "past1", "current"]


@dataclass(frozen=True)
class AttnMask:
    values: np.ndarray
    center: tuple[int, int]  # (x, y) cell
    radius: int


def motion_radius(speed: float) -> int:
    if speed < 0:
        raise ValueError("speed must be nonnegative")
    return int(math.ceil(min(max(speed, R_MIN), R_MAX)))


def mask_radii(frame_role: FrameRole, speed: float = 0.0) -> tuple[int, int]:
    """(local, global) half-widths. The global window is 4 cells wider than the local one."""
    if frame_role == "current":
        r = motion_radius(speed)
        return r, r + 2
    if frame_role in ("past2", "past1"):
        return PAST_RADII
    raise ValueError(f"unknown frame role {frame_role!r}")


def center_cell(center: tuple[float, float], H: int, W: int) -> tuple[int, int]:
    cx = min(max(int(math.floor(center[0] + 0.5)), 0), W - 1)
    cy = min(max(int(math.floor(center[1] + 0.5)), 0), H - 1)
    return cx, cy


def window_mask(center: tuple[int, int], radius: int, H: int, W: int) -> np.ndarray:
    m = np.zeros((H, W), dtype=np.float64)
    cx, cy = center
    m[max(cy - radius, 0) : cy + radius + 1, max(cx - radius, 0) : cx + radius + 1] = 1.0
    return m


def build_masks(
    frame_role: FrameRole, center: tuple[float, float], speed: float, H: int, W: int
) -> tuple[AttnMask, AttnMask]:
    cell = center_cell(center, H, W)
    r_loc, r_glob = mask_radii(frame_role, speed)
    return (
        AttnMask(window_mask(cell, r_loc, H, W), cell, r_loc),
        AttnMask(window_mask(cell, r_glob, H, W), cell, r_glob),
    )


def window_masks_torch(cells: torch.Tensor, radii: torch.Tensor, H: int, W: int) -> torch.Tensor:
    """Batched square windows. cells (..., 2) integer (x, y); radii (...). Returns (..., H*W) in {0, 1}."""
    xs = torch.arange(W).view(*([1] * radii.dim()), 1, W)
    ys = torch.arange(H).view(*([1] * radii.dim()), H, 1)
    cx = cells[..., 0, None, None]
    cy = cells[..., 1, None, None]
    r = radii[..., None, None]
    inside = ((xs - cx).abs() <= r) & ((ys - cy).abs() <= r)
    return inside.flatten(-2)


class PoseQueryEncoder(nn.Module):
    """Single-head attention with learnable temperature; shared by the local and global masks."""

    def __init__(self, query_dim: int = 32, feat_channels: int = 16, attn_dim: int = 32, out_dim: int = 64):
        super().__init__()
        self.W_Q = nn.Parameter(torch.empty(query_dim, attn_dim))
        self.W_K = nn.Parameter(torch.empty(feat_channels, attn_dim))
        self.W_V = nn.Parameter(torch.empty(feat_channels, attn_dim))
        self.W_O = nn.Parameter(torch.empty(attn_dim, out_dim))
        self.b_O = nn.Parameter(torch.empty(out_dim))
        self.tau = nn.Parameter(torch.ones(()))

    def temperature(self) -> torch.Tensor:
        return torch.clamp(self.tau, min=TAU_FLOOR)

    def forward(self, q: torch.Tensor, feat: torch.Tensor, bias: torch.Tensor, index: torch.Tensor | None = None):
        """Batched attention.

        q: (..., J, D) joint queries; feat: (..., C, HW) flattened features;
        bias: (..., M, J, HW) additive mask-plus-prior term for M masks.
        Returns node embeddings (..., M, J, F) and attention weights (..., M, J, HW).

        With ``index`` (..., J, K) the softmax runs over K gathered cells per joint
        and bias is (..., M, J, K); cells left out must be ones whose full-grid
        weight underflows to zero, so both forms agree.
        """
        # <qW_Q, F^T W_K> = <q W_Q W_K^T, F>: contract over C rather than C_q on the big grid
        Qf = (q @ self.W_Q) @ self.W_K.transpose(0, 1)
        if index is None:
            logits = (Qf @ feat) / self.temperature()
            a = torch.softmax(logits.unsqueeze(-3) + bias, dim=-1)
            c = (a @ feat.transpose(-1, -2).unsqueeze(-3)) @ self.W_V
            return c @ self.W_O + self.b_O, a
        Fw = gather_cells(feat, index)  # (..., J, K, C)
        logits = (Fw @ Qf.unsqueeze(-1)).squeeze(-1) / self.temperature()
        a = torch.softmax(logits.unsqueeze(-3) + bias, dim=-1)
        c = (a.unsqueeze(-2) @ Fw.unsqueeze(-4)).squeeze(-2) @ self.W_V
        return c @ self.W_O + self.b_O, a


def gather_cells(feat: torch.Tensor, index: torch.Tensor) -> torch.Tensor:
    """feat (..., C, HW), index (..., J, K) -> (..., J, K, C)."""
    *lead, J, K = index.shape
    C = feat.shape[-2]
    flat = index.reshape(*lead, J * K, 1).expand(*lead, J * K, C)
    return torch.gather(feat.transpose(-1, -2), -2, flat).view(*lead, J, K, C)


def window_cells(cells: torch.Tensor, radii: torch.Tensor, H: int, W: int):
    """Square neighbourhoods sized by the widest radius.

    cells (..., 2) integer (x, y); radii (..., M). Returns flat cell indices
    (..., K) and membership (..., M, K) for each radius. Off-grid slots point
    at the center cell and are marked outside every window.
    """
    R = int(radii.max())
    d = torch.arange(-R, R + 1)
    dy, dx = torch.meshgrid(d, d, indexing="ij")
    dx, dy = dx.flatten(), dy.flatten()
    x = cells[..., 0, None] + dx
    y = cells[..., 1, None] + dy
    on_grid = (x >= 0) & (x < W) & (y >= 0) & (y < H)
    idx = torch.where(on_grid, y * W + x, (cells[..., 1] * W + cells[..., 0])[..., None])
    reach = torch.maximum(dx.abs(), dy.abs())
    inside = (reach <= radii[..., None]) & on_grid.unsqueeze(-2)
    return idx, inside


def attention_bias(mask: torch.Tensor, prior: torch.Tensor | None) -> torch.Tensor:
    bias = -MASK_PENALTY * (1.0 - mask.to(prior.dtype if prior is not None else torch.get_default_dtype()))
    return bias if prior is None else bias + prior


def pose_query_attention(
    q: torch.Tensor,
    feat: np.ndarray | torch.Tensor,
    hm_prior: np.ndarray | torch.Tensor | None,
    mask: AttnMask | np.ndarray,
    params: PoseQueryEncoder,
    return_weights: bool = False,
):
    """One (frame, joint) call: q (D,), feat (C, H, W), optional prior (H, W), mask (H, W)."""
    dtype = params.W_Q.dtype
    feat = torch.as_tensor(feat, dtype=dtype)
    m = torch.as_tensor(mask.values if isinstance(mask, AttnMask) else mask, dtype=dtype)
    if feat.dim() != 3 or feat.shape[0] != params.W_K.shape[0]:
        raise ValueError(f"feature map shape {tuple(feat.shape)} does not match {params.W_K.shape[0]} channels")
    if m.shape != feat.shape[1:]:
        raise ValueError(f"mask shape {tuple(m.shape)} != feature grid {tuple(feat.shape[1:])}")
    if q.shape != (params.W_Q.shape[0],):
        raise ValueError(f"query shape {tuple(q.shape)} != ({params.W_Q.shape[0]},)")
    prior = None
    if hm_prior is not None:
        prior = torch.as_tensor(hm_prior, dtype=dtype)
        if prior.shape != m.shape:
            raise ValueError("heatmap prior shape does not match the mask")
        prior = prior.flatten()
    bias = attention_bias(m.flatten(), prior).to(dtype)
    z, a = params(q[None, :], feat.flatten(1), bias[None, None, :])
    z, a = z[0, 0], a[0, 0]
    return (z, a) if return_weights else z
