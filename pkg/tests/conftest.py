import numpy as np
import pytest

from exlm.expansion import layout_for
from exlm.heads import build_adjacency, log_softmax, masked_softmax


def random_heads(rng, num_groups, k, vocab_size=5, variant="dense", scale=2.0):
    """Random (layout, adjacency, logP, logE) for a lattice of ``num_groups`` masks."""
    layout = layout_for(num_groups, k)
    adj = build_adjacency(layout, variant)
    n = layout.num_nodes
    _, logE = masked_softmax(rng.normal(scale=scale, size=(n, n)), adj.allowed)
    logP = log_softmax(rng.normal(scale=scale, size=(layout.L, vocab_size)))
    return layout, adj, logP, logE


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
