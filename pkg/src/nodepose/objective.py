"""Visibility-aware node loss and desk-scale keypoint metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class LossConfig:
    huber_delta: float = 0.05
    bce_epsilon: float = 1e-7

    def __post_init__(self):
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")


def huber(r: torch.Tensor, delta: float) -> torch.Tensor:
    a = r.abs()
    return torch.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def node_loss(pred, gt, cfg: LossConfig = LossConfig()):
    """Mean Huber on (x, y) over all B*J joints plus mean BCE on visibility.

    Coordinates of invisible joints are supervised too. Returns
    (total, geo, vis) as 0-d tensors.
    """
    pred = torch.as_tensor(pred)
    gt = torch.as_tensor(gt, dtype=pred.dtype)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")
    v_gt = gt[..., 2]
    if not torch.all((v_gt == 0) | (v_gt == 1)):
        raise ValueError("ground-truth visibility must be 0 or 1")
    geo = (huber(pred[..., 0] - gt[..., 0], cfg.huber_delta) + huber(pred[..., 1] - gt[..., 1], cfg.huber_delta)).mean()
    p = torch.clamp(pred[..., 2], cfg.bce_epsilon, 1.0 - cfg.bce_epsilon)
    vis = -(v_gt * torch.log(p) + (1.0 - v_gt) * torch.log1p(-p)).mean()
    return geo + vis, geo, vis


def torso_length(gt_nodes: np.ndarray, H: int, W: int, a: int = 2, b: int = 9) -> np.ndarray:
    """Left-shoulder to right-hip distance in pixels, per sample. gt_nodes (N, J, 3)."""
    d = gt_nodes[:, a, :2] - gt_nodes[:, b, :2]
    return np.hypot(d[:, 0] * W, d[:, 1] * H)


def pixel_errors(pred: np.ndarray, gt: np.ndarray, H: int, W: int) -> np.ndarray:
    """Euclidean pixel error per (sample, joint)."""
    return np.hypot((pred[..., 0] - gt[..., 0]) * W, (pred[..., 1] - gt[..., 1]) * H)


def pck_metric(pred_nodes, gt_nodes, alpha: float, norm, H: int, W: int):
    """Per-joint and mean PCK over visible ground-truth joints.

    A joint with no visible instance gets NaN in the per-joint vector and is left
    out of the mean; the mean pools all visible instances.
    """
    pred_nodes = np.asarray(pred_nodes, dtype=np.float64)
    gt_nodes = np.asarray(gt_nodes, dtype=np.float64)
    norm = np.broadcast_to(np.asarray(norm, dtype=np.float64), (gt_nodes.shape[0],))
    if np.any(norm <= 0):
        raise ValueError("reference length must be positive")
    err = pixel_errors(pred_nodes, gt_nodes, H, W)
    visible = gt_nodes[..., 2] == 1
    correct = (err <= alpha * norm[:, None]) & visible
    n_vis = visible.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_joint = np.where(n_vis > 0, correct.sum(axis=0) / np.maximum(n_vis, 1), np.nan)
    total = visible.sum()
    mean = float(correct.sum() / total) if total else float("nan")
    return per_joint, mean


def mean_localization_error(pred_nodes, gt_nodes, H: int, W: int) -> float:
    """Mean pixel error over visible ground-truth joints."""
    gt_nodes = np.asarray(gt_nodes, dtype=np.float64)
    err = pixel_errors(np.asarray(pred_nodes, dtype=np.float64), gt_nodes, H, W)
    return float(err[gt_nodes[..., 2] == 1].mean())
