import itertools
import json
import math

import numpy as np
import pytest

from exlm.analysis import (
    distribution_entropy,
    entropy_filter,
    export_case,
    repeated_entropy_report,
    repeated_token_entropy,
)
from exlm.expansion import layout_for
from exlm.heads import build_adjacency, compute_heads
from exlm.masking import RepeatedMaskedSample, mask_with_draws, repeat_and_mask, repeat_sequence
from exlm.vocab import build_vocab, TokenSequence


def test_entropy_examples():
    assert distribution_entropy([0.25] * 4) == 2.0
    assert distribution_entropy([0, 1, 0]) == 0.0
    assert distribution_entropy([0.5, 0.25, 0.25]) == pytest.approx(1.5, abs=1e-15)


def test_entropy_validation():
    with pytest.raises(ValueError, match="non-negative"):
        distribution_entropy([1.2, -0.2])
    with pytest.raises(ValueError, match="sum to 1"):
        distribution_entropy([0.5, 0.4])


def test_repeated_token_entropy():
    d = [0.1, 0.2, 0.7]
    assert repeated_token_entropy([d] * 3) == pytest.approx(distribution_entropy(d))
    assert repeated_token_entropy([d]) == distribution_entropy(d)
    assert repeated_token_entropy([[1, 0, 0, 0], [0.25] * 4]) == 1.0


def _rs(base_len, k, masked):
    base = TokenSequence(np.arange(base_len) + 7)
    rep, group_of = repeat_sequence(base, k)
    draws = np.ones(base_len * k)
    draws[list(masked)] = 0.0
    return RepeatedMaskedSample(base, k, mask_with_draws(rep, 0.5, draws), group_of)


def test_filter_cases():
    rs = _rs(3, 1, [0, 2])
    assert entropy_filter(rs).tolist() == [0, 2]
    rs = _rs(2, 2, [0, 2, 3])
    assert entropy_filter(rs).tolist() == [1]


def test_filter_exhaustive_small():
    n, k = 3, 2
    for bits in itertools.product([0, 1], repeat=n * k):
        if not any(bits):
            continue
        rs = _rs(n, k, [i for i, b in enumerate(bits) if b])
        want = [g for g in range(n) if all(bits[g * k : (g + 1) * k])]
        assert entropy_filter(rs).tolist() == want


def test_filter_rate_converges():
    rng = np.random.default_rng(0)
    base = TokenSequence(np.arange(400) + 7)
    sizes = [entropy_filter(repeat_and_mask(base, 2, 0.5, rng)).size / 400 for _ in range(400)]
    se = math.sqrt(0.25 * 0.75 / 400 / 400)
    assert abs(np.mean(sizes) - 0.25) <= 3 * se


def test_report_filters_and_bounds():
    rs = _rs(2, 2, [0, 1, 2])
    probs = np.array([[1.0, 0, 0, 0], [0.25] * 4, [0.5, 0.5, 0, 0]])
    full = repeated_entropy_report(rs, probs)
    assert full.per_token_bits == [1.0] and full.mean_bits == 1.0
    every = repeated_entropy_report(rs, probs, "all_masked_positions")
    assert every.per_token_bits == [1.0, 1.0]
    assert all(0 <= b <= 2 for b in every.per_token_bits)
    with pytest.raises(ValueError):
        repeated_entropy_report(rs, probs, "bogus")


def _heads(rng, M=2, k=3, V=10, variant="dense"):
    lay = layout_for(M, k)
    adj = build_adjacency(lay, variant)
    d = 6
    h = compute_heads(rng.normal(size=(lay.L, d)), rng.normal(size=d), rng.normal(size=d),
                      rng.normal(size=(d, d)), rng.normal(size=(d, d)), rng.normal(size=(V, d)), adj)
    return lay, adj, h


def test_export_case(rng):
    vocab = build_vocab(["a b c"], "text")
    lay, adj, h = _heads(rng, V=len(vocab))
    ex = export_case(h, lay, vocab, top_q=1, edge_min=0.0)
    assert len(ex.nodes) == lay.num_nodes
    for node in ex.nodes[1:-1]:
        (top,) = node["top"]
        row = h.P[node["index"] - 1]
        assert top["id"] == int(row.argmax()) and top["prob"] == row.max()
    assert len(ex.edges) == int(adj.allowed.sum())
    assert all(e["weight"] == h.E[e["from"], e["to"]] for e in ex.edges)
    assert ex.layout["groups"] == lay.group_of_node.tolist()
    assert export_case(h, lay, vocab, 1).to_json() == ex.to_json()
    json.loads(ex.to_json())


def test_export_tie_break_and_threshold(rng):
    vocab = build_vocab(["a b c"], "text")
    lay, adj, h = _heads(rng, M=1, k=2, V=len(vocab))
    P = np.full_like(h.P, 1.0 / h.P.shape[1])
    from dataclasses import replace

    tied = replace(h, P=P)
    ex = export_case(tied, lay, vocab, top_q=3, edge_min=0.0)
    assert [t["id"] for t in ex.nodes[1]["top"]] == [0, 1, 2]
    strong = export_case(h, lay, vocab, top_q=1, edge_min=0.5)
    assert all(e["weight"] >= 0.5 for e in strong.edges)
