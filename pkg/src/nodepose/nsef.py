"""Two-expert fusion in normalized node space."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class ExpertHead(nn.Module):
    """F_t -> F_t -> 3, sigmoid on every channel so rows are valid nodes."""

    def __init__(self, dim: int = 64, hidden: int | None = None):
        super().__init__()
        hidden = hidden or dim
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, 3)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.fc2(torch.relu(self.fc1(z))))


class Gate(nn.Module):
    def __init__(self, dim: int = 64, hidden: int = 32):
        super().__init__()
        self.norm = nn.LayerNorm(2 * dim)
        self.W1 = nn.Parameter(torch.empty(2 * dim, hidden))
        self.b1 = nn.Parameter(torch.empty(hidden))
        self.W2 = nn.Parameter(torch.empty(hidden, 2))
        self.b2 = nn.Parameter(torch.empty(2))

    def scores(self, z_local: torch.Tensor, z_global: torch.Tensor) -> torch.Tensor:
        h = self.norm(torch.cat([z_local, z_global], dim=-1))
        return torch.relu(h @ self.W1 + self.b1) @ self.W2 + self.b2


def _log_softplus(x: torch.Tensor) -> torch.Tensor:
    # softplus(x) ~ exp(x) below -20; stays finite where softplus underflows to 0
    sp = F.softplus(torch.clamp(x, min=-20.0))
    return torch.where(x < -20.0, x, torch.log(sp))


def gate_weights(scores: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """alpha = sp(s0) / (sp(s0) + sp(s1)), evaluated as a logistic of log-softplus differences."""
    la = _log_softplus(scores[..., 0])
    lb = _log_softplus(scores[..., 1])
    alpha = torch.sigmoid(la - lb)
    beta = torch.sigmoid(lb - la)
    return alpha, beta


def expert_heads(z_local, z_global, head_local: ExpertHead, head_global: ExpertHead):
    if z_local.shape != z_global.shape:
        raise ValueError("branch embeddings must have equal shapes")
    return head_local(z_local), head_global(z_global)


def fuse_experts(u_local: torch.Tensor, u_global: torch.Tensor, alpha: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    # alpha weights the global expert, beta the local one
    u = alpha[..., None] * u_global + beta[..., None] * u_local
    # rounding can leave the sum an ulp outside the experts' box; strict compares keep ties on u's own gradient
    lo, hi = torch.minimum(u_local, u_global), torch.maximum(u_local, u_global)
    return torch.where(u < lo, lo, torch.where(u > hi, hi, u))


def gate_fuse(z_local, z_global, u_local, u_global, params: Gate):
    alpha, beta = gate_weights(params.scores(z_local, z_global))
    return fuse_experts(u_local, u_global, alpha, beta), alpha, beta
