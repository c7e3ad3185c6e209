"""Clip -> node predictions, in the fixed order embed, attend, graph, fuse, render.

Only frames t-2, t-1, t of a clip are ever indexed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .codec import GncConfig, decode_heatmap
from .model import NodePoseHead
from .pqe import MASK_PENALTY, center_cell, mask_radii, window_cells, window_masks_torch
from .skeleton import SkeletonGraph
from .synth import ClipSample
from .vtvje import descriptor_from_peak, extrapolate_current, taylor_refine


@dataclass
class PreparedClip:
    desc: np.ndarray     # (3, J, 4)
    cells: np.ndarray    # (3, J, 2) int mask centers (x, y)
    radii: np.ndarray    # (3, J, 2) int (local, global)
    speed: np.ndarray    # (J,) extrapolation speed in px/frame
    prior: np.ndarray    # (3, J, H*W)
    feat: np.ndarray     # (3, C, H*W)
    gt: np.ndarray       # (J, 3) current-frame ground truth


def causal_window(clip: ClipSample, t: int = 2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if t < 2:
        raise ValueError("the current frame needs two past frames")
    sl = slice(t - 2, t + 1)
    return clip.heatmaps[sl], clip.features[sl], clip.gt_nodes[sl]


def prepare_clip(clip: ClipSample, t: int = 2) -> PreparedClip:
    hms, feats, gt = causal_window(clip, t)
    _, J, H, W = hms.shape
    desc = np.zeros((3, J, 4))
    cells = np.zeros((3, J, 2), dtype=np.int64)
    radii = np.zeros((3, J, 2), dtype=np.int64)
    speed = np.zeros(J)
    for j in range(J):
        peaks = []
        for k, role in ((0, "past2"), (1, "past1")):
            pk = taylor_refine(hms[k, j].astype(np.float64))
            d = descriptor_from_peak(pk, H, W)
            desc[k, j] = d.as_array()
            cells[k, j] = center_cell((pk.x, pk.y), H, W)
            radii[k, j] = mask_radii(role)
            peaks.append((pk, d))
        d_cur, vel, center = extrapolate_current(peaks[0][0], peaks[1][0], peaks[1][1], H, W)
        desc[2, j] = d_cur.as_array()
        cells[2, j] = center_cell(center, H, W)
        radii[2, j] = mask_radii("current", vel.speed)
        speed[j] = vel.speed
    return PreparedClip(
        desc=desc,
        cells=cells,
        radii=radii,
        speed=speed,
        prior=hms.reshape(3, J, H * W).astype(np.float64),
        feat=feats.reshape(3, -1, H * W).astype(np.float64),
        gt=gt[2].astype(np.float64),
    )


@dataclass
class Batch:
    desc: torch.Tensor
    cells: torch.Tensor
    radii: torch.Tensor
    prior: torch.Tensor
    feat: torch.Tensor
    gt: torch.Tensor
    H: int
    W: int
    cached_windows: tuple[torch.Tensor, torch.Tensor] | None = None

    def __len__(self):
        return self.desc.shape[0]

    def subset(self, idx) -> "Batch":
        cache = None if self.cached_windows is None else tuple(w[idx] for w in self.cached_windows)
        return Batch(self.desc[idx], self.cells[idx], self.radii[idx], self.prior[idx],
                     self.feat[idx], self.gt[idx], self.H, self.W, cache)

    def cache_windows(self) -> "Batch":
        self.cached_windows = self.windows()
        return self

    def bias(self) -> torch.Tensor:
        """(B, 3, 2, J, HW): -1e4 outside each window plus the heatmap prior."""
        cells = self.cells[:, :, :, None, :].expand(-1, -1, -1, 2, -1)
        masks = window_masks_torch(cells, self.radii, self.H, self.W)  # (B, 3, J, 2, HW)
        masks = masks.permute(0, 1, 3, 2, 4).to(self.prior.dtype)
        return -MASK_PENALTY * (1.0 - masks) + self.prior[:, :, None]

    def windows(self) -> tuple[torch.Tensor, torch.Tensor]:
        """Gathered form of bias(): cell indices (B, 3, J, K) and bias (B, 3, 2, J, K).

        Cells more than the global radius away from the center are dropped; on the
        full grid their weight is exp(-1e4) relative to the window, i.e. exactly 0.
        """
        if self.cached_windows is not None:
            return self.cached_windows
        idx, inside = window_cells(self.cells, self.radii, self.H, self.W)
        prior = torch.gather(self.prior, -1, idx)
        bias = torch.where(inside.transpose(-2, -3), prior.unsqueeze(2), float("-inf"))
        return idx, bias.to(self.prior.dtype)


def collate(prepared: list[PreparedClip], H: int, W: int, dtype=torch.float64) -> Batch:
    def stack(name, dt=dtype):
        return torch.as_tensor(np.stack([getattr(p, name) for p in prepared]), dtype=dt)

    return Batch(stack("desc"), stack("cells", torch.long), stack("radii", torch.long), stack("prior"),
                 stack("feat"), stack("gt"), H, W)


def forward_batch(batch: Batch, model: NodePoseHead, skel: SkeletonGraph, full_grid: bool = False):
    """full_grid=True runs the softmax over all H*W cells (reference path, slow)."""
    if full_grid:
        return model(batch.desc, batch.feat, batch.bias(), skel)
    idx, bias = batch.windows()
    return model(batch.desc, batch.feat, bias, skel, index=idx)


def forward_pipeline(
    clip: ClipSample,
    params: NodePoseHead,
    skel: SkeletonGraph,
    t: int = 2,
    gnc: GncConfig | None = None,
):
    """Returns (u_f (J, 3) tensor, rendered (J, H, W) heatmaps, intermediates)."""
    _, J, H, W = clip.heatmaps.shape
    if J != params.dims.J or clip.features.shape[1] != params.dims.C:
        raise ValueError("clip geometry does not match the model dimensions")
    prep = prepare_clip(clip, t)
    dtype = next(params.parameters()).dtype
    batch = collate([prep], H, W, dtype)
    u_f, inter = forward_batch(batch, params, skel)
    u_f = u_f[0]
    gnc = gnc or GncConfig(H=H, W=W)
    rendered = decode_heatmap(u_f.detach().to(torch.float64).numpy(), gnc)
    inter["prepared"] = prep
    return u_f, rendered, inter
