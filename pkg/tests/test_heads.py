import math

import numpy as np
import pytest

from exlm.expansion import layout_for
from exlm.heads import build_adjacency, compute_heads, emissions, heads_backward, transitions

from conftest import random_heads


def test_edge_counts_two_groups_k4():
    lay = layout_for(2, 4)
    dense = build_adjacency(lay, "dense")
    sparse = build_adjacency(lay, "sparse")
    assert dense.count_emitting_edges() == math.comb(8, 2) == 28
    assert sparse.count_emitting_edges() == 28 - 2 * math.comb(4, 2) == 16


@pytest.mark.parametrize("M, k", [(1, 1), (1, 4), (2, 3), (3, 2), (4, 2), (3, 3)])
def test_adjacency_invariants(M, k):
    lay = layout_for(M, k)
    dense = build_adjacency(lay, "dense").allowed
    sparse = build_adjacency(lay, "sparse").allowed
    for a in (dense, sparse):
        assert not np.tril(a).any()
        assert not a[:, 0].any() and not a[-1].any()
    assert not (sparse & ~dense).any()
    g = lay.group_of_node
    assert not (sparse[1:-1, 1:-1] & (g[:, None] == g[None, :])).any()


def test_sparse_is_group_chain():
    lay = layout_for(3, 2)
    a = build_adjacency(lay, "sparse").allowed
    g = np.concatenate([[-1], lay.group_of_node, [3]])
    vs, us = np.nonzero(a)
    assert np.all(g[us] == g[vs] + 1)


def test_k1_single_successor():
    a = build_adjacency(layout_for(4, 1), "dense").allowed
    assert np.all(a[:-1].sum(axis=1) == 1)


def test_transitions_row_stochastic(rng):
    lay = layout_for(3, 3)
    adj = build_adjacency(lay, "dense")
    d = 8
    E, logE = transitions(rng.normal(size=(lay.num_nodes, d)), rng.normal(size=(d, d)), rng.normal(size=(d, d)), adj)
    live = adj.allowed.any(axis=1)
    assert np.allclose(E[live].sum(axis=1), 1.0, atol=1e-12)
    assert not E[~adj.allowed].any()
    assert np.all(np.tril(E) == 0)
    assert np.allclose(np.exp(logE[adj.allowed]), E[adj.allowed], atol=1e-12)


def test_single_node_forced():
    lay = layout_for(1, 1)
    adj = build_adjacency(lay, "dense")
    E, _ = transitions(np.ones((3, 4)), np.eye(4), np.eye(4), adj)
    assert E[0, 1] == 1.0 and E[1, 2] == 1.0


def test_dead_end_detected():
    from exlm.heads import AdjacencyMask

    allowed = np.zeros((4, 4), bool)
    allowed[0, 1] = True
    allowed[0, 2] = True
    allowed[2, 3] = True
    with pytest.raises(ValueError, match="dead-end node 1"):
        transitions(np.ones((4, 2)), np.eye(2), np.eye(2), AdjacencyMask(allowed, "dense"))


def test_emissions(rng):
    P, logP = emissions(rng.normal(size=(5, 6)), rng.normal(size=(9, 6)))
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
    U, _ = emissions(np.zeros((3, 6)), np.zeros((9, 6)))
    assert np.allclose(U, 1 / 9)


def test_dense_sparse_share_scores(rng):
    lay = layout_for(2, 3)
    H = rng.normal(size=(lay.L, 8))
    args = (H, rng.normal(size=8), rng.normal(size=8), rng.normal(size=(8, 8)), rng.normal(size=(8, 8)), rng.normal(size=(5, 8)))
    dh = compute_heads(*args, build_adjacency(lay, "dense"))
    sh = compute_heads(*args, build_adjacency(lay, "sparse"))
    assert np.array_equal(dh.P, sh.P)
    a = sh.adjacency.allowed
    row = 1
    ratio = sh.E[row, a[row]] / dh.E[row, a[row]]
    assert np.allclose(ratio, ratio[0])


def test_heads_backward_matches_finite_differences(rng):
    lay = layout_for(2, 2)
    adj = build_adjacency(lay, "dense")
    d = 6
    params = {
        "H": rng.normal(size=(lay.L, d)),
        "bos": rng.normal(size=d),
        "eos": rng.normal(size=d),
        "W_Q": rng.normal(size=(d, d)),
        "W_K": rng.normal(size=(d, d)),
        "W_P": rng.normal(size=(7, d)),
    }
    RE = np.where(adj.allowed, rng.normal(size=adj.allowed.shape), 0.0)
    RP = rng.normal(size=(lay.L, 7))

    def f():
        h = compute_heads(*params.values(), adj)
        return float((np.where(adj.allowed, h.logE, 0.0) * RE).sum() + (h.logP * RP).sum())

    h = compute_heads(*params.values(), adj)
    g = heads_backward(*params.values(), h, RE, RP)
    key = {"H": "H", "bos": "bos_state", "eos": "eos_state", "W_Q": "W_Q", "W_K": "W_K", "W_P": "W_P"}
    eps = 1e-6
    for name, arr in params.items():
        for flat in range(arr.size):
            old = arr.flat[flat]
            arr.flat[flat] = old + eps
            up = f()
            arr.flat[flat] = old - eps
            down = f()
            arr.flat[flat] = old
            num = (up - down) / (2 * eps)
            assert abs(num - g[key[name]].flat[flat]) <= 1e-6 * max(1.0, abs(num)), name


def test_random_heads_helper(rng):
    lay, adj, logP, logE = random_heads(rng, 2, 2)
    assert logP.shape == (4, 5) and logE.shape == (6, 6)
