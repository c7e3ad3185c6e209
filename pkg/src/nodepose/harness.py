"""Toy training, evaluation and gradient checking on synthetic clips."""
from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch.optim.swa_utils import AveragedModel, get_ema_multi_avg_fn
from torch.overrides import TorchFunctionMode

from .codec import decode_heatmap, encode_node
from .config import RunConfig, format_config
from .files import load_checkpoint, save_checkpoint, write_pgm
from .model import NodePoseHead, build_model, flat_grad, flatten_params, param_index, unflatten_params
from .objective import LossConfig, mean_localization_error, node_loss, pck_metric, torso_length
from .pipeline import Batch, collate, forward_batch, prepare_clip
from .skeleton import JOINT_NAMES, SkeletonGraph
from .synth import ClipSample, generate_dataset

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "loss_total", "loss_geo", "loss_vis", "pck_mean")
DTYPES = {"float32": torch.float32, "float64": torch.float64}


def make_batch(clips: list[ClipSample], dtype=torch.float32, t: int = 2) -> Batch:
    _, _, _, H, W = clips[0].shape
    return collate([prepare_clip(c, t) for c in clips], H, W, dtype).cache_windows()


def build_sets(cfg: RunConfig):
    """Train (corrupted), validation (corrupted) and held-out eval sets, corrupted and clean."""
    skel, gnc = cfg.skeleton(), cfg.gnc()
    motion = cfg.motion(corrupted=True)
    clean = cfg.motion(corrupted=False)
    return {
        "train": generate_dataset(cfg.train_clips, cfg.data_seed, motion, skel, gnc, cfg.C),
        "val": generate_dataset(cfg.val_clips, cfg.data_seed + 1000, motion, skel, gnc, cfg.C),
        "eval_corrupted": generate_dataset(cfg.eval_clips, cfg.eval_seed, motion, skel, gnc, cfg.C),
        "eval_clean": generate_dataset(cfg.eval_clips, cfg.eval_seed, clean, skel, gnc, cfg.C, corrupt=False),
    }


@torch.no_grad()
def predict(model: NodePoseHead, batch: Batch, skel: SkeletonGraph, chunk: int = 64) -> torch.Tensor:
    outs = [forward_batch(batch.subset(slice(i, i + chunk)), model, skel)[0] for i in range(0, len(batch), chunk)]
    return torch.cat(outs)


@torch.no_grad()
def dataset_loss(model, batch: Batch, skel, loss_cfg: LossConfig, chunk: int = 64):
    pred = predict(model, batch, skel, chunk)
    return tuple(float(v) for v in node_loss(pred.to(torch.float64), batch.gt.to(torch.float64), loss_cfg))


def argmax_baseline(clips: list[ClipSample], t: int = 2) -> np.ndarray:
    """Integer argmax of each current-frame heatmap, with the peak passed as visibility."""
    out = []
    for c in clips:
        hm = c.heatmaps[t]
        rows = []
        for j in range(hm.shape[0]):
            n = encode_node(hm[j], 1)
            rows.append((n.x_norm, n.y_norm, min(float(hm[j].max()), 1.0)))
        out.append(rows)
    return np.array(out)


def pck_report(pred: np.ndarray, gt: np.ndarray, H: int, W: int, alphas=(0.1, 0.2)) -> dict:
    norm = torso_length(gt, H, W)
    rep = {"mean_error_px": mean_localization_error(pred, gt, H, W)}
    for a in alphas:
        per_joint, mean = pck_metric(pred, gt, a, norm, H, W)
        rep[f"pck@{a}"] = mean
        rep[f"per_joint@{a}"] = per_joint
    return rep


def _check_finite(model: NodePoseHead, step: int) -> None:
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            raise FloatingPointError(f"step {step}: non-finite values in {name}")


def make_optimizer(cfg: RunConfig, params):
    if cfg.optimizer == "gd":
        return torch.optim.SGD(params, lr=cfg.step_size)
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.step_size)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


def make_schedule(cfg: RunConfig, opt):
    """Step-size multiplier: optional linear warmup, then constant, cosine decay to 0,
    or "step" (x0.1 for the last fifth of training)."""
    if cfg.lr_schedule not in ("constant", "cosine", "step"):
        raise ValueError(f"unknown lr_schedule {cfg.lr_schedule!r}")
    warm = max(int(cfg.warmup_steps), 0)
    if cfg.lr_schedule == "constant" and warm == 0:
        return None

    def factor(k):  # k = number of completed steps
        if k < warm:
            return (k + 1) / warm
        if cfg.lr_schedule == "constant":
            return 1.0
        if cfg.lr_schedule == "step":
            return 1.0 if k < 0.8 * cfg.steps else 0.1
        span = max(cfg.steps - warm, 1)
        return 0.5 * (1.0 + math.cos(math.pi * min(k - warm, span) / span))

    return torch.optim.lr_scheduler.LambdaLR(opt, factor)


@dataclass
class TrainResult:
    model: NodePoseHead
    rows: list[dict]
    checkpoint: Path | None
    metrics_csv: Path | None


def run_train(cfg: RunConfig, out: str | Path | None = None, sets: dict | None = None) -> TrainResult:
    torch.manual_seed(cfg.seed)
    dtype = DTYPES[cfg.dtype]
    skel, loss_cfg = cfg.skeleton(), cfg.loss()
    sets = sets or build_sets(cfg)
    train = make_batch(sets["train"], dtype)
    val = make_batch(sets["val"], dtype)
    model = build_model(cfg.dims(), cfg.seed, dtype)
    opt = make_optimizer(cfg, model.parameters())
    sched = make_schedule(cfg, opt)
    ema = AveragedModel(model, multi_avg_fn=get_ema_multi_avg_fn(cfg.ema_decay)) if cfg.ema_decay > 0 else None
    rng = np.random.default_rng(cfg.seed)

    rows = []

    def trained():
        return model if ema is None else ema.module

    def log_row(step):
        total, geo, vis = dataset_loss(trained(), train, skel, loss_cfg)
        if not math.isfinite(total):
            raise FloatingPointError(f"step {step}: non-finite training loss")
        pred = predict(trained(), val, skel).to(torch.float64).numpy()
        _, pck = pck_metric(pred, val.gt.numpy(), 0.2, torso_length(val.gt.numpy(), cfg.H, cfg.W), cfg.H, cfg.W)
        rows.append({"step": step, "loss_total": total, "loss_geo": geo, "loss_vis": vis, "pck_mean": pck})
        log.info("step %d loss %.5f (geo %.5f vis %.5f) val pck@0.2 %.3f", step, total, geo, vis, pck)

    log_row(0)
    order = np.array([], dtype=np.int64)
    for step in range(1, cfg.steps + 1):
        if order.size < cfg.batch_size:
            order = np.concatenate([order, rng.permutation(len(train))])
        idx, order = order[: cfg.batch_size], order[cfg.batch_size :]
        mb = train.subset(torch.as_tensor(idx))
        opt.zero_grad()
        u_f, _ = forward_batch(mb, model, skel)
        loss, _, _ = node_loss(u_f, mb.gt, loss_cfg)
        if not torch.isfinite(loss):
            raise FloatingPointError(f"step {step}: non-finite minibatch loss")
        loss.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()
        if sched is not None:
            sched.step()
        _check_finite(model, step)
        if ema is not None:
            ema.update_parameters(model)
        if step % cfg.log_every == 0 or step == cfg.steps:
            log_row(step)

    ckpt = csv_path = None
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "checkpoint.bin"
        csv_path = out / "metrics.csv"
        save_checkpoint(ckpt, trained())
        write_metrics(csv_path, rows)
        (out / "config.txt").write_text(format_config(cfg))
    return TrainResult(trained(), rows, ckpt, csv_path)


def write_metrics(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (r[k] if k == "step" else repr(float(r[k]))) for k in METRIC_FIELDS})


def run_eval(cfg: RunConfig, checkpoint, out: str | Path | None = None, sets: dict | None = None) -> dict:
    """PCK@{0.1,0.2} and mean pixel error for the model, the raw argmax baseline and a constant-center guess."""
    model = checkpoint if isinstance(checkpoint, NodePoseHead) else load_checkpoint(checkpoint)
    if model.dims != cfg.dims():
        raise ValueError(f"checkpoint dims {model.dims} do not match config {cfg.dims()}")
    skel = cfg.skeleton()
    sets = sets or build_sets(cfg)
    dtype = next(model.parameters()).dtype
    report = {}
    for name in ("eval_corrupted", "eval_clean"):
        clips = sets[name]
        batch = make_batch(clips, dtype)
        gt = batch.gt.to(torch.float64).numpy()
        center = np.tile([0.5, 0.5, 0.5], gt.shape[:2] + (1,))
        pred = predict(model, batch, skel).to(torch.float64).numpy()
        report[name] = {
            "model": pck_report(pred, gt, cfg.H, cfg.W),
            "argmax": pck_report(argmax_baseline(clips), gt, cfg.H, cfg.W),
            "center": pck_report(center, gt, cfg.H, cfg.W),
        }
        if out is not None and cfg.dump_images and name == "eval_corrupted":
            dump_heatmaps(Path(out) / "images", pred[0], clips[0], cfg)
    if out is not None:
        write_eval(Path(out), report)
    return report


def write_eval(out: Path, report: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval_metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["set", "predictor", "pck@0.1", "pck@0.2", "mean_error_px"])
        for set_name, preds in report.items():
            for pname, rep in preds.items():
                w.writerow([set_name, pname, repr(rep["pck@0.1"]), repr(rep["pck@0.2"]), repr(rep["mean_error_px"])])
    with open(out / "per_joint.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["set", "predictor", "joint", "pck@0.1", "pck@0.2"])
        for set_name, preds in report.items():
            for pname, rep in preds.items():
                for j, jn in enumerate(JOINT_NAMES[: len(rep["per_joint@0.1"])]):
                    w.writerow([set_name, pname, jn, repr(float(rep["per_joint@0.1"][j])),
                                repr(float(rep["per_joint@0.2"][j]))])


def dump_heatmaps(folder: Path, nodes: np.ndarray, clip: ClipSample, cfg: RunConfig) -> list[Path]:
    """Rendered prediction, input current-frame heatmap, per joint, as PGM files."""
    folder.mkdir(parents=True, exist_ok=True)
    rendered = decode_heatmap(nodes, cfg.gnc())
    paths = []
    for j in range(rendered.shape[0]):
        for tag, img in (("pred", rendered[j]), ("input", clip.heatmaps[2, j])):
            p = folder / f"joint{j:02d}_{tag}.pgm"
            write_pgm(p, img, vmax=1.0)
            paths.append(p)
    return paths


# --- gradient checking -------------------------------------------------------

_ACTIVATIONS = {torch.relu, torch.nn.functional.relu, torch.Tensor.relu, torch.nn.functional.leaky_relu}
_COMPARISONS = {torch.Tensor.le, torch.Tensor.lt, torch.Tensor.ge, torch.Tensor.gt,
                torch.Tensor.__le__, torch.Tensor.__lt__, torch.Tensor.__ge__, torch.Tensor.__gt__}
_CLAMPS = {torch.clamp, torch.Tensor.clamp}


class BranchRecorder(TorchFunctionMode):
    """Logs the branch every piecewise op takes (ReLU side, comparison result, clamp side).

    Two forward passes with equal logs lie on the same smooth piece of the loss.
    """

    def __init__(self):
        super().__init__()
        self.log: list[torch.Tensor] = []

    def __torch_function__(self, func, types, args=(), kwargs=None):
        kwargs = kwargs or {}
        out = func(*args, **kwargs)
        if func in _ACTIVATIONS:
            self.log.append(args[0].detach() > 0)
        elif func in _COMPARISONS and isinstance(out, torch.Tensor):
            self.log.append(out.detach().clone())
        elif func in _CLAMPS:
            self.log.append(out.detach() != args[0].detach())
        return out


def _same_branches(a: list, b: list) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and torch.equal(x, y) for x, y in zip(a, b))


@dataclass
class GradCheckResult:
    indices: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    steps: np.ndarray  # relative step actually used per coordinate
    kinked: np.ndarray  # stencil still straddled a kink at the smallest step tried

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_error.max())


def _loss_closure(model: NodePoseHead, batch: Batch, skel, loss_cfg: LossConfig):
    def loss_at(flat: torch.Tensor, branches: list | None = None) -> float:
        unflatten_params(model, flat)
        with torch.no_grad():
            if branches is None:
                u_f, _ = forward_batch(batch, model, skel)
                total, _, _ = node_loss(u_f, batch.gt, loss_cfg)
            else:
                with BranchRecorder() as rec:
                    u_f, _ = forward_batch(batch, model, skel)
                    total, _, _ = node_loss(u_f, batch.gt, loss_cfg)
                branches.extend(rec.log)
        val = float(total)
        if not math.isfinite(val):
            raise FloatingPointError("non-finite loss during gradient check")
        return val

    return loss_at


def sample_indices(model: NodePoseHead, n: int, seed: int = 0) -> np.ndarray:
    """At least one coordinate from every tensor, the rest uniform over the vector."""
    rng = np.random.default_rng(seed)
    spans = param_index(model).values()
    picks = [int(rng.integers(a, b)) for a, b, _ in spans]
    total = sum(b - a for a, b, _ in spans)
    rest = rng.choice(total, size=max(n - len(picks), 0), replace=False)
    idx = np.unique(np.concatenate([picks, rest]))
    while idx.size < n:
        idx = np.unique(np.concatenate([idx, rng.choice(total, n - idx.size)]))
    return idx[rng.permutation(idx.size)][:n] if idx.size > n else idx


def analytic_grad(model: NodePoseHead, batch: Batch, skel, loss_cfg: LossConfig = LossConfig()) -> torch.Tensor:
    model.zero_grad()
    u_f, _ = forward_batch(batch, model, skel)
    total, _, _ = node_loss(u_f, batch.gt, loss_cfg)
    if not torch.isfinite(total):
        raise FloatingPointError("non-finite loss during gradient check")
    total.backward()
    return flat_grad(model)


def central_difference(loss_at, flat: torch.Tensor, i: int, h: float, branches: tuple | None = None) -> float:
    """(L(x+s) - L(x-s)) / 2s with s = h * max(1, |x_i|); fills branches=(plus, minus) if given."""
    step = h * max(1.0, abs(float(flat[i])))
    plus, minus = flat.clone(), flat.clone()
    plus[i] += step
    minus[i] -= step
    bp, bm = branches if branches is not None else (None, None)
    return (loss_at(plus, bp) - loss_at(minus, bm)) / (2.0 * step)


def smooth_difference(loss_at, flat, i: int, h: float, base: list, shrink: float = 10.0, tries: int = 3):
    """Central difference at step h, shrunk while the stencil crosses a ReLU/Huber/clamp kink.

    Returns (estimate, step used, still_kinked).
    """
    for k in range(tries + 1):
        plus, minus = [], []
        est = central_difference(loss_at, flat, i, h, (plus, minus))
        if _same_branches(plus, base) and _same_branches(minus, base):
            return est, h, False
        if k < tries:
            h /= shrink
    return est, h, True


def grad_check(
    params: NodePoseHead,
    clips: list[ClipSample],
    skel: SkeletonGraph,
    indices=None,
    n: int = 200,
    h: float = 1e-4,
    seed: int = 0,
    loss_cfg: LossConfig = LossConfig(),
    floor: float = 1e-6,
) -> GradCheckResult:
    """Autograd gradient vs central differences, in double precision.

    rel_error = |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor sits
    well above the difference quotient's roundoff (about eps * |L| / h). The loss is
    piecewise smooth (ReLU, Huber knee, clamps); a stencil that changes any branch
    is retried at h/10, h/100, h/1000.
    """
    model = copy.deepcopy(params).to(torch.float64)
    batch = make_batch(clips, torch.float64)
    flat = flatten_params(model)
    grad = analytic_grad(model, batch, skel, loss_cfg)
    idx = sample_indices(model, n, seed) if indices is None else np.asarray(indices)
    loss_at = _loss_closure(model, batch, skel, loss_cfg)
    base: list = []
    loss_at(flat, base)
    est = [smooth_difference(loss_at, flat, int(i), h, base) for i in idx]
    unflatten_params(model, flat)
    numeric = np.array([e[0] for e in est])
    analytic = grad[torch.as_tensor(idx)].numpy()
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return GradCheckResult(idx, analytic, numeric, rel, np.array([e[1] for e in est]), np.array([e[2] for e in est]))


def step_halving_ratio(params: NodePoseHead, clips, skel, index: int, h: float = 1e-2,
                       loss_cfg: LossConfig = LossConfig()) -> float:
    """|fd(h) - g| / |fd(h/2) - g| at one coordinate; ~4 for a second-order scheme."""
    model = copy.deepcopy(params).to(torch.float64)
    batch = make_batch(clips, torch.float64)
    flat = flatten_params(model)
    g = float(analytic_grad(model, batch, skel, loss_cfg)[index])
    loss_at = _loss_closure(model, batch, skel, loss_cfg)
    e1 = abs(central_difference(loss_at, flat, index, h) - g)
    e2 = abs(central_difference(loss_at, flat, index, h / 2) - g)
    return e1 / e2
