"""Prediction-entropy statistics and case-study exports of the clone-state DAG."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .expansion import LatticeLayout
from .heads import LatticeHeads
from .masking import RepeatedMaskedSample
from .vocab import Vocabulary


def distribution_entropy(dist) -> float:
    """Base-2 entropy of a probability vector, with 0 log 0 = 0."""
    dist = np.asarray(dist, dtype=np.float64)
    if np.any(dist < 0):
        raise ValueError("probabilities must be non-negative")
    if abs(dist.sum() - 1.0) > 1e-9:
        raise ValueError("probabilities must sum to 1")
    return float(distribution_entropy_rows(dist[None, :])[0])


def distribution_entropy_rows(P: np.ndarray) -> np.ndarray:
    """Row-wise base-2 entropy of a stack of distributions, no validation."""
    P = np.asarray(P, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log2(P), 0.0)
    return np.maximum(-terms.sum(axis=-1), 0.0)


def repeated_token_entropy(dists) -> float:
    """Mean entropy over the predictions for the k masked copies of one token."""
    return float(np.mean([distribution_entropy(d) for d in dists]))


def entropy_filter(rs: RepeatedMaskedSample) -> np.ndarray:
    """Base-token indices whose every copy is masked."""
    return np.flatnonzero(rs.fully_masked())


@dataclass
class EntropyReport:
    per_token_bits: list[float]
    filter: str = "fully_masked_only"

    @property
    def mean_bits(self) -> float:
        return float(np.mean(self.per_token_bits)) if self.per_token_bits else float("nan")


def repeated_entropy_report(rs: RepeatedMaskedSample, probs: np.ndarray, filter: str = "fully_masked_only") -> EntropyReport:
    """Entropy per base token from predictions over the repeated sequence.

    ``probs`` holds one predictive distribution per masked position of
    ``rs.sample`` in order. With ``fully_masked_only`` a base token is kept
    only if all its copies are masked; its value is the mean over copies.
    """
    masked = rs.sample.masked_positions
    groups = rs.group_of[masked]
    if filter == "fully_masked_only":
        keep = entropy_filter(rs)
    elif filter == "all_masked_positions":
        keep = np.unique(groups)
    else:
        raise ValueError(f"unknown filter {filter!r}")
    bits = distribution_entropy_rows(probs)
    return EntropyReport([float(bits[groups == g].mean()) for g in keep], filter)


def node_entropy(heads: LatticeHeads) -> float:
    """Mean entropy (bits) over the emission rows of every clone state."""
    return float(distribution_entropy_rows(heads.P).mean())


# ---------------------------------------------------------------- case study


@dataclass
class CaseStudyExport:
    nodes: list[dict] = field(default_factory=list)
    edges: list[dict] = field(default_factory=list)
    layout: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"layout": self.layout, "nodes": self.nodes, "edges": self.edges},
            indent=1,
            sort_keys=True,
        ) + "\n"


def _node_label(layout: LatticeLayout, u: int) -> str:
    if u == layout.bos_index:
        return "[BOS]"
    if u == layout.eos_index:
        return "[EOS]"
    g, c = layout.node_origin[u - 1]
    return f"m{int(g)}.{int(c)}"


def export_case(heads: LatticeHeads, layout: LatticeLayout, vocab: Vocabulary, top_q: int = 3, edge_min: float = 0.0) -> CaseStudyExport:
    """Top-``top_q`` tokens of every clone state and the DAG edges.

    Ties in probability are broken by ascending token id. Every allowed edge
    whose transition probability is at least ``edge_min`` is listed.
    """
    V = heads.P.shape[1]
    q = min(top_q, V)
    nodes = [{"index": 0, "label": "[BOS]", "group": None, "top": []}]
    for j in range(layout.L):
        row = heads.P[j]
        order = np.lexsort((np.arange(V), -row))[:q]
        nodes.append(
            {
                "index": j + 1,
                "label": _node_label(layout, j + 1),
                "group": int(layout.group_of_node[j]),
                "clone": int(layout.node_origin[j, 1]),
                "top": [{"token": vocab.tokens[t], "id": int(t), "prob": float(row[t])} for t in order],
            }
        )
    nodes.append({"index": layout.eos_index, "label": "[EOS]", "group": None, "top": []})
    allowed = heads.adjacency.allowed
    edges = [
        {"from": int(v), "to": int(u), "weight": float(heads.E[v, u])}
        for v, u in zip(*np.nonzero(allowed))
        if heads.E[v, u] >= edge_min
    ]
    meta = {
        "L": layout.L,
        "k": layout.k,
        "num_groups": layout.num_groups,
        "groups": [int(g) for g in layout.group_of_node],
        "bos_index": layout.bos_index,
        "eos_index": layout.eos_index,
        "variant": heads.adjacency.variant,
    }
    return CaseStudyExport(nodes, edges, meta)
