import math
from collections import deque

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from nodepose.dstag import (
    BranchState,
    CrossBranch,
    DstagBranch,
    GatLayer,
    cross_branch_attention,
    past_memory_fuse,
    run_branch,
    spatial_gat,
    temporal_gat,
)
from nodepose.skeleton import CANONICAL_EDGES, build_adjacency, canonical_skeleton


def lrelu(x, s=0.2):
    return x if x > 0 else s * x


def softmax(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    return [v / sum(e) for v in e]


def randomized(module, seed=0, scale=0.5):
    torch.manual_seed(seed)
    module = module.double()
    with torch.no_grad():
        for p in module.parameters():
            p.uniform_(-scale, scale)
    return module


def bfs_two_hop(edges, J):
    nbrs = {j: set() for j in range(J)}
    for a, b in edges:
        nbrs[a].add(b)
        nbrs[b].add(a)
    A = np.zeros((J, J), dtype=int)
    for s in range(J):
        dist = {s: 0}
        q = deque([s])
        while q:
            u = q.popleft()
            for v in nbrs[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    q.append(v)
        for v, d in dist.items():
            if d <= 2:
                A[s, v] = 1
    return A


# --- adjacency -------------------------------------------------------------

def test_canonical_adjacency_counts():
    g = canonical_skeleton()
    assert len(CANONICAL_EDGES) == 14 and g.J == 15
    assert g.A1.sum() == 14 * 2 + 15
    assert np.array_equal(g.A1, g.A1.T) and np.all(np.diag(g.A1) == 1)
    assert np.all(g.A1 <= g.A2)


def test_two_hop_matches_bfs():
    g = canonical_skeleton()
    ref = bfs_two_hop(CANONICAL_EDGES, 15)
    np.testing.assert_array_equal(g.A2, ref)
    assert g.A2.sum() == ref.sum()


def test_two_joint_chain():
    g = build_adjacency([(0, 1)], 2)
    assert g.A1.tolist() == [[1, 1], [1, 1]] and g.A2.tolist() == [[1, 1], [1, 1]]


def test_adjacency_errors():
    with pytest.raises(ValueError):
        build_adjacency([(0, 15)], 15)
    with pytest.raises(ValueError):
        build_adjacency([(0, 1), (1, 0)], 3)


# --- temporal GAT ----------------------------------------------------------

def test_temporal_equal_features_pass_through():
    gat = randomized(GatLayer(4, 3))
    z = torch.randn(1, 1, 4, dtype=torch.float64).expand(3, 2, 4)
    out = temporal_gat(z, gat)
    torch.testing.assert_close(out, z @ gat.W, atol=1e-12, rtol=0)


def test_temporal_causal():
    gat = randomized(GatLayer(4, 3))
    z = torch.randn(3, 5, 4, dtype=torch.float64)
    z2 = z.clone()
    z2[2] += torch.randn(5, 4, dtype=torch.float64)
    a, b = temporal_gat(z, gat), temporal_gat(z2, gat)
    assert torch.equal(a[:2], b[:2]) and not torch.equal(a[2], b[2])


def test_temporal_scalar_oracle():
    gat = GatLayer(1, 1).double()
    w, a1, a2 = 1.5, 0.8, -1.3
    with torch.no_grad():
        gat.W.fill_(w)
        gat.a.copy_(torch.tensor([a1, a2], dtype=torch.float64))
    zs = [0.4, -0.7, 1.1]
    out, alpha = temporal_gat(torch.tensor(zs, dtype=torch.float64).view(3, 1, 1), gat, return_alpha=True)
    h = [w * z for z in zs]
    expect = [h[0]]
    for i in (1, 2):
        al = softmax([lrelu(a1 * h[i] + a2 * h[i - 1]), lrelu(a1 * h[i] + a2 * h[i])])
        expect.append(al[0] * h[i - 1] + al[1] * h[i])
    assert out.view(3).tolist() == pytest.approx(expect, abs=1e-9)
    assert torch.allclose(alpha.sum(-1), torch.ones(1, 3, dtype=torch.float64), atol=1e-9)


# --- past memory -----------------------------------------------------------

def test_memory_residual_identity():
    br = randomized(DstagBranch(6, 6))
    with torch.no_grad():
        br.fuse.fc2.weight.zero_()
        br.fuse.fc2.bias.zero_()
    st_ = BranchState(feat_temp=torch.zeros(3, 4, 6, dtype=torch.float64), f_curr=torch.randn(4, 6, dtype=torch.float64))
    assert torch.equal(past_memory_fuse(st_, br), st_.f_curr)


def test_memory_joint_permutation_equivariant():
    br = randomized(DstagBranch(6, 6))
    ft = torch.randn(3, 5, 6, dtype=torch.float64)
    perm = torch.tensor([3, 0, 4, 1, 2])
    out = past_memory_fuse(BranchState(ft, ft[-1]), br)
    outp = past_memory_fuse(BranchState(ft[:, perm], ft[-1, perm]), br)
    torch.testing.assert_close(outp, out[perm], atol=1e-12, rtol=0)


def test_memory_summary_ignores_current():
    br = randomized(DstagBranch(6, 6))
    ft = torch.randn(3, 5, 6, dtype=torch.float64)
    s1 = BranchState(ft, ft[-1])
    past_memory_fuse(s1, br)
    ft2 = ft.clone()
    ft2[-1] = torch.randn(5, 6, dtype=torch.float64)
    s2 = BranchState(ft2, ft2[-1])
    past_memory_fuse(s2, br)
    assert torch.equal(s1.summary, s2.summary)
    assert not torch.equal(s1.f_temp, s2.f_temp)


# --- spatial GAT -----------------------------------------------------------

def test_spatial_identity_adjacency():
    gat = randomized(GatLayer(5, 5))
    f = torch.randn(4, 5, dtype=torch.float64)
    out = spatial_gat(f, np.eye(4), gat)
    torch.testing.assert_close(out, f + f @ gat.W, atol=1e-12, rtol=0)


def test_spatial_symmetric_pair():
    gat = randomized(GatLayer(5, 5))
    f = torch.randn(1, 5, dtype=torch.float64).expand(2, 5)
    out = spatial_gat(f, np.ones((2, 2)), gat)
    assert torch.equal(out[0], out[1])


def test_spatial_scalar_oracle_path():
    gat = GatLayer(1, 1).double()
    w, a1, a2 = -0.9, 0.6, 1.7
    with torch.no_grad():
        gat.W.fill_(w)
        gat.a.copy_(torch.tensor([a1, a2], dtype=torch.float64))
    A = build_adjacency([(0, 1), (1, 2)], 3).A1
    f = [0.3, -1.2, 0.8]
    out, alpha = spatial_gat(torch.tensor(f, dtype=torch.float64).view(3, 1), A, gat, return_alpha=True)
    h = [w * x for x in f]
    nbrs = {0: [0, 1], 1: [0, 1, 2], 2: [1, 2]}
    expect = []
    for i in range(3):
        al = softmax([lrelu(a1 * h[i] + a2 * h[j]) for j in nbrs[i]])
        expect.append(f[i] + sum(a * h[j] for a, j in zip(al, nbrs[i])))
    assert out.view(3).tolist() == pytest.approx(expect, abs=1e-9)
    assert alpha[0, 2] == 0 and alpha[2, 0] == 0


def test_spatial_coefficients_normalized_on_canonical_graph():
    g = canonical_skeleton()
    gat = randomized(GatLayer(8, 8), scale=2.0)
    for A in (g.A1, g.A2):
        _, alpha = spatial_gat(torch.randn(15, 8, dtype=torch.float64), A, gat, return_alpha=True)
        assert torch.allclose(alpha.sum(-1), torch.ones(15, dtype=torch.float64), atol=1e-9)
        assert torch.all(alpha[torch.as_tensor(A) == 0] == 0)


# --- cross-branch attention ------------------------------------------------

def test_cross_symmetric_inputs():
    cb = randomized(CrossBranch(6))
    cb.global_from_local.load_state_dict(cb.local_from_global.state_dict())
    z = torch.randn(4, 6, dtype=torch.float64)
    a, b = cross_branch_attention(z, z.clone(), cb)
    assert torch.equal(a, b)


def test_cross_zero_value_is_residual():
    cb = randomized(CrossBranch(6))
    with torch.no_grad():
        cb.local_from_global.Wv.weight.zero_()
        cb.global_from_local.Wv.weight.zero_()
    zl, zg = torch.randn(4, 6, dtype=torch.float64), torch.randn(4, 6, dtype=torch.float64)
    a, b = cross_branch_attention(zl, zg, cb)
    assert torch.equal(a, zl) and torch.equal(b, zg)


def test_cross_scalar_oracle():
    cb = CrossBranch(1).double()
    proj = {"local_from_global": (0.7, -1.1, 0.5), "global_from_local": (1.3, 0.4, -0.8)}
    with torch.no_grad():
        for name, (q, k, v) in proj.items():
            m = getattr(cb, name)
            m.Wq.weight.fill_(q)
            m.Wk.weight.fill_(k)
            m.Wv.weight.fill_(v)
    zl, zg = [0.9, -0.4], [0.2, 1.5]
    a, b = cross_branch_attention(torch.tensor(zl, dtype=torch.float64).view(2, 1),
                                  torch.tensor(zg, dtype=torch.float64).view(2, 1), cb)

    def attend(query, ctx, q, k, v):
        out = []
        for x in query:
            al = softmax([(q * x) * (k * c) for c in ctx])
            out.append(x + sum(w * v * c for w, c in zip(al, ctx)))
        return out

    assert a.view(2).tolist() == pytest.approx(attend(zl, zg, *proj["local_from_global"]), abs=1e-9)
    assert b.view(2).tolist() == pytest.approx(attend(zg, zl, *proj["global_from_local"]), abs=1e-9)


def test_cross_shape_mismatch():
    with pytest.raises(ValueError):
        cross_branch_attention(torch.zeros(3, 4), torch.zeros(2, 4), CrossBranch(4))


# --- branch-level invariants -----------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.permutations(list(range(15))), st.integers(0, 1000))
def test_branch_joint_permutation_equivariance(perm, seed):
    g = canonical_skeleton()
    br = randomized(DstagBranch(6, 6), seed)
    Z = torch.randn(3, 15, 6, dtype=torch.float64)
    p = torch.tensor(perm)
    Ap = g.A2[np.ix_(perm, perm)]
    out, _ = run_branch(Z, g.A2, br)
    outp, _ = run_branch(Z[:, p], Ap, br)
    torch.testing.assert_close(outp, out[p], atol=1e-10, rtol=0)


def test_branch_current_frame_only_changes_current_outputs():
    g = canonical_skeleton()
    br = randomized(DstagBranch(6, 6))
    Z = torch.randn(3, 15, 6, dtype=torch.float64)
    Z2 = Z.clone()
    Z2[2] += 1.0
    _, s1 = run_branch(Z, g.A1, br)
    _, s2 = run_branch(Z2, g.A1, br)
    assert torch.equal(s1.feat_temp[:2], s2.feat_temp[:2])
    assert torch.equal(s1.summary, s2.summary)
