"""Mask-state expansion and the lattice node layout built from it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masking import MaskedSample
from .vocab import MASK_ID


@dataclass(frozen=True)
class ExpandedSequence:
    ids: np.ndarray
    pos2d: np.ndarray  # (len, 2): (sequence position, clone index)
    origin: np.ndarray  # expanded index -> original index
    k: int
    masked_positions: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.size)

    @property
    def clone_rows(self) -> np.ndarray:
        """Expanded indices of the clone states, ordered by (mask rank, clone)."""
        return np.flatnonzero(self.pos2d[:, 1] > 0)

    def collapse(self) -> np.ndarray:
        """Undo the expansion: keep one row per original position."""
        keep = self.pos2d[:, 1] <= 1
        return self.ids[keep]


@dataclass(frozen=True)
class LatticeLayout:
    node_origin: np.ndarray  # (L, 2): (mask rank, clone index)
    group_of_node: np.ndarray
    num_groups: int
    k: int

    @property
    def L(self) -> int:
        return int(self.group_of_node.size)

    @property
    def bos_index(self) -> int:
        return 0

    @property
    def eos_index(self) -> int:
        return self.L + 1

    @property
    def num_nodes(self) -> int:
        """Emitting nodes plus the two virtual endpoints."""
        return self.L + 2


def expand_masks(ms: MaskedSample, k: int) -> ExpandedSequence:
    if k < 1:
        raise ValueError("k must be >= 1")
    src = ms.corrupted.ids
    is_mask = np.zeros(src.size, dtype=bool)
    is_mask[ms.masked_positions] = True
    reps = np.where(is_mask, k, 1)
    origin = np.repeat(np.arange(src.size), reps)
    ids = src[origin]
    # clone index counts 1..k inside each mask run, 0 for real tokens
    starts = np.cumsum(reps) - reps
    within = np.arange(origin.size) - starts[origin]
    clone = np.where(is_mask[origin], within + 1, 0)
    pos2d = np.stack([origin, clone], axis=1)
    assert np.all(ids[clone > 0] == MASK_ID)
    return ExpandedSequence(ids, pos2d, origin, k, ms.masked_positions.copy())


def build_layout(es: ExpandedSequence) -> LatticeLayout:
    rows = es.clone_rows
    rank = np.searchsorted(es.masked_positions, es.origin[rows])
    node_origin = np.stack([rank, es.pos2d[rows, 1]], axis=1)
    return LatticeLayout(node_origin, rank, int(es.masked_positions.size), es.k)


def layout_for(num_groups: int, k: int) -> LatticeLayout:
    """Layout of ``num_groups`` masks expanded ``k`` times, without a sequence."""
    if num_groups < 1 or k < 1:
        raise ValueError("num_groups and k must be >= 1")
    rank = np.repeat(np.arange(num_groups), k)
    clone = np.tile(np.arange(1, k + 1), num_groups)
    return LatticeLayout(np.stack([rank, clone], axis=1), rank, num_groups, k)
