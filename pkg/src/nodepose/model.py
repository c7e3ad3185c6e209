"""Parameter store for the full head, its seeded initialization, and flat views."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .dstag import Dstag, GatLayer
from .nsef import ExpertHead, Gate, expert_heads, gate_fuse
from .pqe import PoseQueryEncoder
from .skeleton import SkeletonGraph
from .vtvje import JointEmbedder


@dataclass(frozen=True)
class ModelDims:
    D: int = 32
    C_q: int = 32
    F: int = 64
    F_t: int = 64
    F_g: int = 32
    C: int = 16
    J: int = 15
    H: int = 64
    W: int = 48

    def __post_init__(self):
        bad = [k for k, v in asdict(self).items() if int(v) <= 0]
        if bad:
            raise ValueError(f"dimensions must be positive: {bad}")


class NodePoseHead(nn.Module):
    """All learnable tensors: embedders, pose-query encoder, both graph branches, experts, gate."""

    def __init__(self, dims: ModelDims = ModelDims()):
        super().__init__()
        self.dims = dims
        self.embed_past = JointEmbedder(dims.D)
        self.embed_current = JointEmbedder(dims.D)
        self.pqe = PoseQueryEncoder(dims.D, dims.C, dims.C_q, dims.F)
        self.dstag = Dstag(dims.F, dims.F_t)
        self.head_local = ExpertHead(dims.F_t)
        self.head_global = ExpertHead(dims.F_t)
        self.gate = Gate(dims.F_t, dims.F_g)

    def forward(self, desc, feat, bias, skel: SkeletonGraph, index=None):
        """desc (B, 3, J, 4); feat (B, 3, C, HW); bias (B, 3, 2, J, HW) for (local, global) masks.

        With index (B, 3, J, K), bias is over the K gathered cells instead.
        """
        q = torch.cat([self.embed_past(desc[:, :-1]), self.embed_current(desc[:, -1:])], dim=1)
        z, attn = self.pqe(q, feat, bias, index)
        Z_local, Z_global = z[:, :, 0], z[:, :, 1]
        zt_l, zt_g, graph = self.dstag(Z_local, Z_global, skel)
        u_l, u_g = expert_heads(zt_l, zt_g, self.head_local, self.head_global)
        u_f, alpha, beta = gate_fuse(zt_l, zt_g, u_l, u_g, self.gate)
        inter = {
            "queries": q, "attention": attn, "Z_local": Z_local, "Z_global": Z_global,
            "z_tilde_local": zt_l, "z_tilde_global": zt_g, "u_local": u_l, "u_global": u_g,
            "alpha": alpha, "beta": beta, **graph,
        }
        return u_f, inter


def _fan_in(module: nn.Module, name: str, p: torch.Tensor) -> int:
    if isinstance(module, nn.Linear):
        return module.in_features
    if isinstance(module, PoseQueryEncoder):
        return module.W_O.shape[0] if name == "b_O" else p.shape[0]
    if isinstance(module, GatLayer):
        return p.shape[0]
    if isinstance(module, Gate):
        return {"W1": module.W1, "b1": module.W1, "W2": module.W2, "b2": module.W2}[name].shape[0]
    raise TypeError(f"no init rule for {type(module).__name__}.{name}")


@torch.no_grad()
def init_params(model: NodePoseHead, seed: int) -> NodePoseHead:
    """uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per tensor, tau = 1, LayerNorm at (1, 0)."""
    g = torch.Generator().manual_seed(int(seed))
    for mod_name, module in model.named_modules():
        for name, p in module.named_parameters(recurse=False):
            if isinstance(module, nn.LayerNorm):
                p.fill_(1.0 if name == "weight" else 0.0)
            elif isinstance(module, PoseQueryEncoder) and name == "tau":
                p.fill_(1.0)
            else:
                s = 1.0 / math.sqrt(_fan_in(module, name, p))
                u = torch.rand(p.shape, generator=g, dtype=torch.float64)
                p.copy_(((2.0 * u - 1.0) * s).to(p.dtype))
    return model


def build_model(dims: ModelDims = ModelDims(), seed: int = 0, dtype=torch.float64) -> NodePoseHead:
    return init_params(NodePoseHead(dims).to(dtype), seed)


@torch.no_grad()
def zero_params(model: NodePoseHead) -> NodePoseHead:
    for p in model.parameters():
        p.zero_()
    return model


def param_index(model: nn.Module) -> dict[str, tuple[int, int, tuple[int, ...]]]:
    """Stable name -> (start, stop, shape) map into the flat vector."""
    out, start = {}, 0
    for name, p in model.named_parameters():
        out[name] = (start, start + p.numel(), tuple(p.shape))
        start += p.numel()
    return out


def flatten_params(model: nn.Module) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1).to(torch.float64) for p in model.parameters()])


@torch.no_grad()
def unflatten_params(model: nn.Module, flat: torch.Tensor) -> nn.Module:
    n = sum(p.numel() for p in model.parameters())
    if flat.numel() != n:
        raise ValueError(f"flat vector has {flat.numel()} entries, model needs {n}")
    start = 0
    for p in model.parameters():
        p.copy_(flat[start : start + p.numel()].view(p.shape).to(p.dtype))
        start += p.numel()
    return model


def flat_grad(model: nn.Module) -> torch.Tensor:
    return torch.cat([
        (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1).to(torch.float64)
        for p in model.parameters()
    ])
