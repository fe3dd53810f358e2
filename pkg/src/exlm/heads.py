"""Transition (DAG edge) and emission heads over the expanded clone states.

Lattice nodes are indexed ``0 .. L+1``: node 0 is BOS, nodes ``1..L`` are the
emitting clone states in layout order and node ``L+1`` is EOS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expansion import LatticeLayout

VARIANTS = ("dense", "sparse")


@dataclass(frozen=True)
class AdjacencyMask:
    allowed: np.ndarray  # (L+2, L+2) bool
    variant: str

    @property
    def emitting(self) -> np.ndarray:
        return self.allowed[1:-1, 1:-1]

    def count_emitting_edges(self) -> int:
        return int(self.emitting.sum())


@dataclass(frozen=True)
class LatticeHeads:
    E: np.ndarray
    logE: np.ndarray
    P: np.ndarray
    logP: np.ndarray
    adjacency: AdjacencyMask


def _path_counts_reachable(allowed: np.ndarray, forward: bool, depth: int) -> np.ndarray:
    """reach[u, c]: some BOS->u (or u->EOS) walk visits exactly c emitting nodes."""
    n = allowed.shape[0]
    reach = np.zeros((n, depth + 1), dtype=bool)
    emits = np.zeros(n, dtype=bool)
    emits[1:-1] = True
    order = range(n) if forward else range(n - 1, -1, -1)
    for u in order:
        if forward:
            if u == 0:
                reach[0, 0] = True
                continue
            prev = reach[allowed[:, u]].any(axis=0)
        else:
            if u == n - 1:
                reach[u, 0] = True
                continue
            prev = reach[allowed[u, :]].any(axis=0)
        if emits[u]:
            reach[u, 1:] = prev[:-1]
        else:
            reach[u] = prev
    return reach


def build_adjacency(
    layout: LatticeLayout, variant: str = "dense", path_length: int | None = None
) -> AdjacencyMask:
    """Edges of the alignment DAG.

    Both variants start from the strict upper triangle over (BOS, nodes, EOS).
    ``sparse`` additionally drops edges inside one mask's clone group. Edges
    that cannot lie on any BOS->EOS path visiting exactly ``path_length``
    emitting nodes (default: one per mask) are then removed, so transition
    mass is never spent on alignments of the wrong length.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown adjacency variant {variant!r}")
    M = layout.num_groups if path_length is None else path_length
    n = layout.num_nodes
    allowed = np.triu(np.ones((n, n), dtype=bool), k=1)
    allowed[0, n - 1] = False
    if variant == "sparse":
        g = layout.group_of_node
        allowed[1:-1, 1:-1] &= g[:, None] != g[None, :]
    fwd = _path_counts_reachable(allowed, True, M)
    bwd = _path_counts_reachable(allowed, False, M)
    on_path = (fwd.astype(np.int64) @ bwd[:, ::-1].T.astype(np.int64)) > 0
    return AdjacencyMask(allowed & on_path, variant)


def masked_softmax(scores: np.ndarray, allowed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row softmax restricted to ``allowed``; returns (probs, log-probs).

    Disallowed entries get probability exactly 0 and log-probability -inf.
    Rows with nothing allowed come back all-zero.
    """
    neg = np.finfo(scores.dtype).min
    s = np.where(allowed, scores, neg)
    m = s.max(axis=1, keepdims=True)
    z = np.where(allowed, s - m, 0.0)
    ex = np.where(allowed, np.exp(z), 0.0)
    tot = ex.sum(axis=1, keepdims=True)
    live = tot > 0
    probs = np.where(live, ex / np.where(live, tot, 1.0), 0.0)
    with np.errstate(divide="ignore"):
        logp = np.where(allowed, z - np.log(np.where(live, tot, 1.0)), -np.inf)
    return probs, logp


def log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def transitions(
    H_nodes: np.ndarray, W_Q: np.ndarray, W_K: np.ndarray, adj: AdjacencyMask
) -> tuple[np.ndarray, np.ndarray]:
    """``H_nodes`` stacks BOS, the L clone states and EOS (L+2 rows)."""
    d = H_nodes.shape[1]
    if H_nodes.shape[0] != adj.allowed.shape[0]:
        raise ValueError("H_nodes must have one row per lattice node")
    has_out = adj.allowed.any(axis=1)
    has_in = adj.allowed.any(axis=0)
    has_in[0] = True
    dead = ~has_out & has_in
    dead[-1] = False
    if dead.any():
        raise ValueError(f"dead-end node {int(np.flatnonzero(dead)[0])}")
    Q = H_nodes @ W_Q
    K = H_nodes @ W_K
    return masked_softmax(Q @ K.T / np.sqrt(d), adj.allowed)


def emissions(H_emit: np.ndarray, W_P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    logP = log_softmax(H_emit @ W_P.T)
    return np.exp(logP), logP


def compute_heads(
    H_emit: np.ndarray,
    bos: np.ndarray,
    eos: np.ndarray,
    W_Q: np.ndarray,
    W_K: np.ndarray,
    W_P: np.ndarray,
    adj: AdjacencyMask,
) -> LatticeHeads:
    H_nodes = np.vstack([bos[None, :], H_emit, eos[None, :]])
    E, logE = transitions(H_nodes, W_Q, W_K, adj)
    P, logP = emissions(H_emit, W_P)
    return LatticeHeads(E, logE, P, logP, adj)


def heads_backward(
    H_emit: np.ndarray,
    bos: np.ndarray,
    eos: np.ndarray,
    W_Q: np.ndarray,
    W_K: np.ndarray,
    W_P: np.ndarray,
    heads: LatticeHeads,
    dlogE: np.ndarray,
    dlogP: np.ndarray,
) -> dict[str, np.ndarray]:
    """Chain loss gradients w.r.t. logE/logP through both softmaxes.

    Returns gradients for the clone states, BOS/EOS vectors and W_Q, W_K, W_P.
    """
    allowed = heads.adjacency.allowed
    d = H_emit.shape[1]
    H_nodes = np.vstack([bos[None, :], H_emit, eos[None, :]])

    g = np.where(allowed, dlogE, 0.0)
    dS = g - heads.E * g.sum(axis=1, keepdims=True)
    dS = np.where(allowed, dS, 0.0) / np.sqrt(d)
    Q = H_nodes @ W_Q
    K = H_nodes @ W_K
    dQ = dS @ K
    dK = dS.T @ Q
    dH_nodes = dQ @ W_Q.T + dK @ W_K.T

    dZ = dlogP - heads.P * dlogP.sum(axis=1, keepdims=True)
    dH_emit = dH_nodes[1:-1] + dZ @ W_P
    return {
        "H": dH_emit,
        "bos_state": dH_nodes[0],
        "eos_state": dH_nodes[-1],
        "W_Q": H_nodes.T @ dQ,
        "W_K": H_nodes.T @ dK,
        "W_P": dZ.T @ H_emit,
    }
