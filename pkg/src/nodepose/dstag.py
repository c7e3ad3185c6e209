"""Dual-branch decoupled spatio-temporal graph attention.

Each branch runs a causal temporal GAT per joint, summarizes the two past
steps with a small self-attention encoder, fuses that memory into the
current step, and then applies a spatial GAT on its skeleton adjacency
(1-hop for the local branch, 2-hop for the global one). A bi-directional
cross-branch attention couples the two results.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .skeleton import SkeletonGraph, build_adjacency, canonical_skeleton  # noqa: F401

LEAKY_SLOPE = 0.2


def causal_chain_adjacency(T: int = 3) -> torch.Tensor:
    """Row i lists the sources node i aggregates from: itself and i-1."""
    return (torch.eye(T) + torch.diag(torch.ones(T - 1), -1)).bool()


def gat_attention(Wh: torch.Tensor, a: torch.Tensor, adj: torch.Tensor, slope: float = LEAKY_SLOPE):
    """Single-head GAT coefficients. Wh (..., N, F); a (2F,); adj (N, N) bool, row = target.

    Returns (aggregated (..., N, F), alpha (..., N, N)).
    """
    fo = Wh.shape[-1]
    s_dst = Wh @ a[:fo]
    s_src = Wh @ a[fo:]
    e = F.leaky_relu(s_dst[..., :, None] + s_src[..., None, :], slope)
    e = e.masked_fill(~adj, float("-inf"))
    alpha = torch.softmax(e, dim=-1)
    return alpha @ Wh, alpha


class GatLayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, slope: float = LEAKY_SLOPE):
        super().__init__()
        self.W = nn.Parameter(torch.empty(in_dim, out_dim))
        self.a = nn.Parameter(torch.empty(2 * out_dim))
        self.slope = slope

    def forward(self, h: torch.Tensor, adj: torch.Tensor):
        return gat_attention(h @ self.W, self.a, adj, self.slope)


def temporal_gat(Z: torch.Tensor, params: GatLayer, return_alpha: bool = False):
    """Z (..., T, J, F) -> (..., T, J, F_t); each joint is a forward chain over T."""
    adj = causal_chain_adjacency(Z.shape[-3]).to(Z.device)
    h = Z.transpose(-3, -2)
    out, alpha = params(h, adj)
    out = out.transpose(-3, -2)
    return (out, alpha) if return_alpha else out


class PastEncoder(nn.Module):
    """One single-head self-attention + feed-forward block over the past steps."""

    def __init__(self, dim: int):
        super().__init__()
        self.Wq = nn.Linear(dim, dim, bias=False)
        self.Wk = nn.Linear(dim, dim, bias=False)
        self.Wv = nn.Linear(dim, dim, bias=False)
        self.Wo = nn.Linear(dim, dim, bias=False)
        self.ff1 = nn.Linear(dim, dim)
        self.ff2 = nn.Linear(dim, dim)

    def forward(self, past: torch.Tensor) -> torch.Tensor:
        """past (..., S, J, F) -> summary (..., J, F), mean over the S encoded steps."""
        x = past.transpose(-3, -2)
        scores = self.Wq(x) @ self.Wk(x).transpose(-1, -2) / math.sqrt(x.shape[-1])
        x = x + self.Wo(torch.softmax(scores, dim=-1) @ self.Wv(x))
        x = x + self.ff2(torch.relu(self.ff1(x)))
        return x.mean(dim=-2)


class FusionMLP(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.fc1 = nn.Linear(2 * dim, dim)
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, f_curr: torch.Tensor, summary: torch.Tensor) -> torch.Tensor:
        return f_curr + self.fc2(torch.relu(self.fc1(torch.cat([f_curr, summary], dim=-1))))


@dataclass
class BranchState:
    feat_temp: torch.Tensor
    f_curr: torch.Tensor
    summary: torch.Tensor | None = None
    f_temp: torch.Tensor | None = None


class DstagBranch(nn.Module):
    def __init__(self, in_dim: int = 64, dim: int = 64):
        super().__init__()
        self.temporal = GatLayer(in_dim, dim)
        self.encoder = PastEncoder(dim)
        self.fuse = FusionMLP(dim)
        self.spatial = GatLayer(dim, dim)


def past_memory_fuse(state: BranchState, params: DstagBranch) -> torch.Tensor:
    """Fills state.summary (past steps only) and state.f_temp; returns f_temp."""
    state.summary = params.encoder(state.feat_temp[..., :-1, :, :])
    state.f_temp = params.fuse(state.f_curr, state.summary)
    return state.f_temp


def spatial_gat(f_temp: torch.Tensor, A, params: GatLayer, return_alpha: bool = False):
    """Residual GAT over the joints: f + sum_k alpha_jk W f_k on the nonzeros of A."""
    adj = torch.as_tensor(np.asarray(A) if not isinstance(A, torch.Tensor) else A) != 0
    msg, alpha = params(f_temp, adj.to(f_temp.device))
    out = f_temp + msg
    return (out, alpha) if return_alpha else out


def run_branch(Z: torch.Tensor, A, params: DstagBranch) -> tuple[torch.Tensor, BranchState]:
    feat_temp = temporal_gat(Z, params.temporal)
    state = BranchState(feat_temp=feat_temp, f_curr=feat_temp[..., -1, :, :])
    past_memory_fuse(state, params)
    return spatial_gat(state.f_temp, A, params.spatial), state


class CrossAttention(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.Wq = nn.Linear(dim, dim, bias=False)
        self.Wk = nn.Linear(dim, dim, bias=False)
        self.Wv = nn.Linear(dim, dim, bias=False)

    def forward(self, query: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        scores = self.Wq(query) @ self.Wk(context).transpose(-1, -2) / math.sqrt(query.shape[-1])
        return query + torch.softmax(scores, dim=-1) @ self.Wv(context)


class CrossBranch(nn.Module):
    def __init__(self, dim: int = 64):
        super().__init__()
        self.local_from_global = CrossAttention(dim)
        self.global_from_local = CrossAttention(dim)


def cross_branch_attention(z_local: torch.Tensor, z_global: torch.Tensor, params: CrossBranch):
    if z_local.shape != z_global.shape:
        raise ValueError("branch embeddings must have equal shapes")
    return params.local_from_global(z_local, z_global), params.global_from_local(z_global, z_local)


class Dstag(nn.Module):
    def __init__(self, in_dim: int = 64, dim: int = 64):
        super().__init__()
        self.local = DstagBranch(in_dim, dim)
        self.glob = DstagBranch(in_dim, dim)
        self.cross = CrossBranch(dim)

    def forward(self, Z_local: torch.Tensor, Z_global: torch.Tensor, skel: SkeletonGraph):
        z_l, st_l = run_branch(Z_local, skel.A1, self.local)
        z_g, st_g = run_branch(Z_global, skel.A2, self.glob)
        zt_l, zt_g = cross_branch_attention(z_l, z_g, self.cross)
        return zt_l, zt_g, {"local": st_l, "global": st_g, "z_local": z_l, "z_global": z_g}
