import csv
import struct

import numpy as np
import pytest
import torch

from nodepose.config import RunConfig, format_config, load_config, parse_config
from nodepose.files import CheckpointError, load_checkpoint, read_pgm, save_checkpoint, write_pgm
from nodepose.harness import (
    METRIC_FIELDS,
    build_sets,
    grad_check,
    make_schedule,
    run_eval,
    run_train,
    sample_indices,
    step_halving_ratio,
)
from nodepose.model import build_model, flatten_params, param_index
from nodepose.synth import ClipSample

TINY = RunConfig(train_clips=8, val_clips=4, eval_clips=4, batch_size=4, steps=3, log_every=1)


@pytest.fixture(scope="module")
def tiny_sets():
    return build_sets(TINY)


def test_zero_step_size_leaves_params(tiny_sets):
    cfg = TINY.replace(optimizer="gd", step_size=0.0, lr_schedule="constant")
    res = run_train(cfg, sets=tiny_sets)
    init = build_model(cfg.dims(), cfg.seed, torch.float32)
    assert torch.equal(flatten_params(res.model), flatten_params(init))
    losses = {r["loss_total"] for r in res.rows}
    assert len(losses) == 1 and len(res.rows) == 4


def test_gd_step_moves_params(tiny_sets):
    res = run_train(TINY.replace(optimizer="gd", step_size=1e-2), sets=tiny_sets)
    init = build_model(TINY.dims(), TINY.seed, torch.float32)
    assert not torch.equal(flatten_params(res.model), flatten_params(init))


def test_training_outputs_bitwise_reproducible(tmp_path, tiny_sets):
    a = run_train(TINY, out=tmp_path / "a", sets=tiny_sets)
    b = run_train(TINY, out=tmp_path / "b", sets=build_sets(TINY))
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
    assert a.metrics_csv.read_bytes() == b.metrics_csv.read_bytes()
    with open(a.metrics_csv) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == METRIC_FIELDS and [r[0] for r in rows[1:]] == ["0", "1", "2", "3"]
    assert load_config(tmp_path / "a" / "config.txt") == TINY


def test_eval_report(tmp_path, tiny_sets):
    res = run_train(TINY, sets=tiny_sets)
    rep = run_eval(TINY.replace(dump_images=True), res.model, out=tmp_path, sets=tiny_sets)
    assert set(rep) == {"eval_corrupted", "eval_clean"}
    for preds in rep.values():
        assert set(preds) == {"model", "argmax", "center"}
        assert 0 <= preds["model"]["pck@0.2"] <= 1
    assert rep["eval_clean"]["argmax"]["pck@0.2"] == 1.0
    assert (tmp_path / "eval_metrics.csv").exists() and (tmp_path / "per_joint.csv").exists()
    assert len(list((tmp_path / "images").glob("*.pgm"))) == 30


def test_schedule_factors():
    opt = torch.optim.SGD([torch.zeros(1, requires_grad=True)], lr=1.0)
    assert make_schedule(RunConfig(lr_schedule="constant"), opt) is None
    sched = make_schedule(RunConfig(lr_schedule="cosine", steps=10, warmup_steps=2), opt)
    lrs = []
    for _ in range(10):
        lrs.append(opt.param_groups[0]["lr"])
        opt.step()
        sched.step()
    assert lrs[0] == 0.5 and lrs[1] == 1.0 and lrs[2] == 1.0
    assert all(x >= y for x, y in zip(lrs[2:], lrs[3:]))
    with pytest.raises(ValueError):
        make_schedule(RunConfig(lr_schedule="linear"), opt)


# --- checkpoints and files -------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    m = build_model(TINY.dims(), seed=4)
    p = tmp_path / "ck.bin"
    save_checkpoint(p, m)
    back = load_checkpoint(p)
    assert back.dims == m.dims
    assert torch.equal(flatten_params(back), flatten_params(m))
    raw = p.read_bytes()
    n = flatten_params(m).numel()
    assert raw[:8] == b"NPCKPT01" and struct.unpack_from("<HHI", raw, 8) == (1, 0, n)
    assert len(raw) == 16 + 20 + 8 * n
    save_checkpoint(tmp_path / "again.bin", back)
    assert (tmp_path / "again.bin").read_bytes() == raw


def test_checkpoint_errors(tmp_path):
    p = tmp_path / "ck.bin"
    save_checkpoint(p, build_model(TINY.dims()))
    raw = bytearray(p.read_bytes())
    bad = bytearray(raw)
    bad[8:10] = struct.pack("<H", 2)
    (tmp_path / "v.bin").write_bytes(bytes(bad))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v.bin")
    bad = bytearray(raw)
    bad[:8] = b"NOTACKPT"
    (tmp_path / "m.bin").write_bytes(bytes(bad))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "m.bin")
    (tmp_path / "t.bin").write_bytes(bytes(raw[:-8]))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "t.bin")


def test_eval_rejects_mismatched_dims(tiny_sets):
    m = build_model(TINY.replace(F=32).dims())
    with pytest.raises(ValueError):
        run_eval(TINY, m, sets=tiny_sets)


def test_pgm_round_trip(tmp_path):
    img = np.linspace(0, 1, 12 * 10).reshape(12, 10)
    p = tmp_path / "a.pgm"
    write_pgm(p, img, vmax=1.0)
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n10 12\n255\n") and len(raw) == len(b"P5\n10 12\n255\n") + 120
    back = read_pgm(p)
    assert back.shape == (12, 10)
    np.testing.assert_array_equal(back, np.round(img * 255).astype(np.uint8))
    write_pgm(p, np.zeros((3, 3)))
    assert not read_pgm(p).any()


# --- config ----------------------------------------------------------------

def test_config_round_trip():
    cfg = RunConfig(seed=9, step_size=3e-3, dump_images=True, edges=((0, 1), (1, 2)), J=3, mode="jitter")
    assert parse_config(format_config(cfg)) == cfg


def test_config_parsing_rules():
    cfg = parse_config("# comment\n\nsteps = 7  # trailing\nlr_schedule = cosine\ndump_images = yes\n")
    assert cfg.steps == 7 and cfg.lr_schedule == "cosine" and cfg.dump_images is True
    with pytest.raises(ValueError, match="unknown key"):
        parse_config("stepz = 3")
    with pytest.raises(ValueError):
        parse_config("steps 3")
    with pytest.raises(ValueError):
        parse_config("dump_images = maybe")


def test_config_derived_objects():
    cfg = RunConfig()
    assert cfg.dims().H == 64 and cfg.gnc().sigma == 3.0 and cfg.skeleton().J == 15
    assert cfg.motion(corrupted=False).occlusion_prob == 0.0
    assert cfg.motion().occlusion_prob == 0.3 and cfg.loss().huber_delta == 0.05


# --- gradient check --------------------------------------------------------

@pytest.fixture(scope="module")
def gc_setup():
    cfg = RunConfig(train_clips=2, val_clips=1, eval_clips=1)
    clips = build_sets(cfg)["train"]
    return cfg, build_model(cfg.dims(), seed=1, dtype=torch.float64), clips


def test_sample_indices_cover_every_tensor(gc_setup):
    _, m, _ = gc_setup
    idx = sample_indices(m, 200, seed=0)
    assert len(idx) == 200 and len(set(idx.tolist())) == 200
    for a, b, _ in param_index(m).values():
        assert np.any((idx >= a) & (idx < b))


def test_grad_check_small(gc_setup):
    cfg, m, clips = gc_setup
    res = grad_check(m, clips, cfg.skeleton(), n=60, seed=3)
    assert res.max_rel_error < 1e-4


def test_zero_gradient_channel(gc_setup):
    cfg, m, clips = gc_setup
    dead = [ClipSample(c.heatmaps, c.features.copy(), c.gt_nodes, c.meta) for c in clips]
    for c in dead:
        c.features[:, -1] = 0.0
    start = param_index(m)["pqe.W_V"][0]
    C_q = m.pqe.W_V.shape[1]
    row = start + (cfg.C - 1) * C_q + 5
    res = grad_check(m, dead, cfg.skeleton(), indices=[row])
    assert abs(res.analytic[0]) <= 1e-8 and abs(res.numeric[0]) <= 1e-8


def test_step_halving_second_order(gc_setup):
    cfg, m, clips = gc_setup
    i = param_index(m)["head_local.fc2.bias"][0]
    ratio = step_halving_ratio(m, clips, cfg.skeleton(), i, h=0.05)
    assert 3.0 < ratio < 5.0


def test_zero_params_match_center_predictor(tiny_sets):
    from nodepose.model import zero_params

    rep = run_eval(TINY, zero_params(build_model(TINY.dims())), sets=tiny_sets)
    for preds in rep.values():
        assert preds["model"]["pck@0.2"] == preds["center"]["pck@0.2"]
        assert preds["model"]["mean_error_px"] == pytest.approx(preds["center"]["mean_error_px"], abs=1e-12)


def test_oracle_predictor_scores_one(tiny_sets):
    from nodepose.harness import pck_report

    gt = np.stack([c.gt_nodes[2] for c in tiny_sets["eval_clean"]]).astype(np.float64)
    rep = pck_report(gt, gt, 64, 48)
    assert rep["pck@0.1"] == rep["pck@0.2"] == 1.0 and rep["mean_error_px"] == 0.0
    assert np.all(rep["per_joint@0.1"] == 1.0)


def test_branch_recorder_sees_relu_and_huber():
    from nodepose.harness import BranchRecorder
    from nodepose.objective import huber

    def run(x):
        with BranchRecorder() as rec:
            torch.relu(x)
            huber(x, 0.05)
        return rec.log

    a, b = run(torch.tensor([0.01, -0.2])), run(torch.tensor([0.02, -0.3]))
    assert len(a) == 2 and all(torch.equal(x, y) for x, y in zip(a, b))
    c = run(torch.tensor([-0.01, -0.2]))
    assert not torch.equal(a[0], c[0])
    d = run(torch.tensor([0.06, -0.2]))
    assert torch.equal(a[0], d[0]) and not torch.equal(a[1], d[1])


def test_smooth_difference_shrinks_across_kink():
    from nodepose.harness import smooth_difference

    from nodepose.harness import BranchRecorder

    # L(x) = relu(x - 0.00005) + x^2 at x = 0: the kink sits inside a 1e-4 stencil
    def loss_at(flat, branches=None):
        with BranchRecorder() as rec:
            val = float(torch.relu(flat[0] - 5e-5) + flat[0] ** 2)
        if branches is not None:
            branches.extend(rec.log)
        return val

    flat = torch.zeros(1, dtype=torch.float64)
    base = []
    loss_at(flat, base)
    est, step, kinked = smooth_difference(loss_at, flat, 0, 1e-4, base)
    assert not kinked and step == pytest.approx(1e-5)
    assert abs(est) < 1e-9
