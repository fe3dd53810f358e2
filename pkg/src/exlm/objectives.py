"""Per-sample losses and weight gradients for ExLM and the vanilla MLM baseline."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import encoder
from .alignment import AlignmentLattice, align, best_path
from .encoder import EncoderConfig
from .expansion import ExpandedSequence, LatticeLayout, expand_masks, layout_for
from .heads import AdjacencyMask, LatticeHeads, build_adjacency, compute_heads, heads_backward, log_softmax
from .masking import MaskedSample


@lru_cache(maxsize=256)
def cached_adjacency(num_groups: int, k: int, variant: str) -> tuple[LatticeLayout, AdjacencyMask]:
    layout = layout_for(num_groups, k)
    return layout, build_adjacency(layout, variant)


@dataclass
class ExlmPass:
    expanded: ExpandedSequence
    layout: LatticeLayout
    heads: LatticeHeads
    H: np.ndarray
    cache: dict


def exlm_forward(weights, cfg: EncoderConfig, ms: MaskedSample, k: int, variant: str = "dense", rng=None) -> ExlmPass:
    es = expand_masks(ms, k)
    layout, adj = cached_adjacency(ms.num_masks, k, variant)
    H, cache = encoder.forward(es.ids, es.pos2d, weights, cfg, rng)
    heads = compute_heads(
        H[es.clone_rows],
        weights["bos_state"],
        weights["eos_state"],
        weights["W_Q"],
        weights["W_K"],
        weights["W_P"],
        adj,
    )
    return ExlmPass(es, layout, heads, H, cache)


def exlm_loss_and_grads(
    weights, cfg: EncoderConfig, ms: MaskedSample, k: int, variant: str = "dense",
    scale: float = 1.0, grads=None, rng=None,
) -> tuple[float, dict]:
    """Summed states-alignment loss ``-logZ`` of one sample, with gradients.

    Gradients of ``scale * loss`` are accumulated into ``grads``.
    """
    fp = exlm_forward(weights, cfg, ms, k, variant, rng)
    lattice = align(fp.heads.logP, fp.heads.logE, ms.targets, fp.layout)
    if grads is None:
        grads = encoder.zeros_like_weights(weights)
    dlogP = -scale * lattice.emission_counts(fp.heads.logP.shape[1])
    dlogE = -scale * lattice.transition_counts(fp.heads.logE)
    rows = fp.expanded.clone_rows
    hg = heads_backward(
        fp.H[rows], weights["bos_state"], weights["eos_state"],
        weights["W_Q"], weights["W_K"], weights["W_P"], fp.heads, dlogE, dlogP,
    )
    for name in ("bos_state", "eos_state", "W_Q", "W_K", "W_P"):
        grads[name] += hg[name]
    dH = np.zeros_like(fp.H)
    dH[rows] = hg["H"]
    encoder.backward(dH, fp.cache, weights, cfg, grads)
    return -lattice.logZ, grads


def exlm_lattice(weights, cfg, ms, k, variant="dense") -> tuple[ExlmPass, AlignmentLattice]:
    fp = exlm_forward(weights, cfg, ms, k, variant)
    return fp, align(fp.heads.logP, fp.heads.logE, ms.targets, fp.layout)


def exlm_predict(weights, cfg, ms, k, variant="dense") -> tuple[np.ndarray, ExlmPass]:
    """Decode one token per mask with the best path through the lattice."""
    fp = exlm_forward(weights, cfg, ms, k, variant)
    bp = best_path(fp.heads.logP, fp.heads.logE, None, fp.layout, num_targets=ms.num_masks)
    return bp.tokens, fp


# ---------------------------------------------------------------- MLM baseline


def mlm_loss(H: np.ndarray, W_P: np.ndarray, targets) -> float:
    """Mean negative log-likelihood of ``targets`` under softmax(H W_P^T)."""
    targets = np.asarray(targets, dtype=np.int64)
    logp = log_softmax(H @ W_P.T)
    return float(-logp[np.arange(targets.size), targets].mean())


def mlm_forward(weights, cfg: EncoderConfig, ms: MaskedSample, rng=None):
    # the baseline sees the k=1 expansion, so masks carry clone index 1
    es = expand_masks(ms, 1)
    H, cache = encoder.forward(es.ids, es.pos2d, weights, cfg, rng)
    rows = es.clone_rows
    logp = log_softmax(H[rows] @ weights["W_P"].T)
    return es, H, cache, rows, logp


def mlm_loss_and_grads(
    weights, cfg: EncoderConfig, ms: MaskedSample, scale: float = 1.0, grads=None, rng=None,
) -> tuple[float, dict]:
    """Summed cross-entropy over the masked positions, with gradients."""
    es, H, cache, rows, logp = mlm_forward(weights, cfg, ms, rng)
    idx = np.arange(ms.num_masks)
    loss = float(-logp[idx, ms.targets].sum())
    if grads is None:
        grads = encoder.zeros_like_weights(weights)
    dZ = np.exp(logp)
    dZ[idx, ms.targets] -= 1.0
    dZ *= scale
    grads["W_P"] += dZ.T @ H[rows]
    dH = np.zeros_like(H)
    dH[rows] = dZ @ weights["W_P"]
    encoder.backward(dH, cache, weights, cfg, grads)
    return loss, grads


def mlm_predict(weights, cfg, ms) -> tuple[np.ndarray, np.ndarray]:
    """Argmax tokens and the predictive distributions at the masked positions."""
    *_, logp = mlm_forward(weights, cfg, ms)
    return logp.argmax(axis=1), np.exp(logp)
