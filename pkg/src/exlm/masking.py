"""Bernoulli masking, the repeat-then-mask construction and its corruption statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vocab import MASK_ID, TokenSequence


@dataclass(frozen=True)
class MaskedSample:
    original: TokenSequence
    corrupted: TokenSequence
    masked_positions: np.ndarray
    targets: np.ndarray
    forced: bool = False  # True when the zero-mask draw was overridden

    def __post_init__(self):
        pos = np.asarray(self.masked_positions, dtype=np.int64)
        tgt = np.asarray(self.targets, dtype=np.int64)
        if pos.size < 1:
            raise ValueError("a masked sample needs at least one masked position")
        if np.any(np.diff(pos) <= 0):
            raise ValueError("masked positions must be strictly increasing")
        if tgt.shape != pos.shape:
            raise ValueError("targets must align with masked positions")
        object.__setattr__(self, "masked_positions", pos)
        object.__setattr__(self, "targets", tgt)

    @property
    def num_masks(self) -> int:
        return int(self.masked_positions.size)

    def reconstruct(self) -> np.ndarray:
        ids = self.corrupted.ids.copy()
        ids[self.masked_positions] = self.targets
        return ids


@dataclass(frozen=True)
class RepeatedMaskedSample:
    base: TokenSequence
    k_rep: int
    sample: MaskedSample
    group_of: np.ndarray

    def fully_masked(self) -> np.ndarray:
        """Boolean per base token: every one of its copies is masked."""
        hit = np.zeros(len(self.sample.original), dtype=bool)
        hit[self.sample.masked_positions] = True
        return hit.reshape(len(self.base), self.k_rep).all(axis=1)


def _check_ratio(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise ValueError(f"mask ratio must lie in (0, 1), got {p}")


def mask_with_draws(seq: TokenSequence, p: float, draws: np.ndarray) -> MaskedSample:
    """Mask every position whose uniform draw falls below ``p``."""
    _check_ratio(p)
    draws = np.asarray(draws, dtype=np.float64)
    if draws.shape != seq.ids.shape:
        raise ValueError("one uniform draw per position is required")
    chosen = draws < p
    forced = not chosen.any()
    if forced:
        chosen[0] = True
    positions = np.flatnonzero(chosen)
    corrupted = seq.ids.copy()
    corrupted[positions] = MASK_ID
    return MaskedSample(
        original=seq,
        corrupted=TokenSequence(corrupted, seq.source),
        masked_positions=positions,
        targets=seq.ids[positions].copy(),
        forced=forced,
    )


def apply_mask(seq: TokenSequence, p: float, rng: np.random.Generator) -> MaskedSample:
    _check_ratio(p)
    return mask_with_draws(seq, p, rng.random(len(seq)))


def repeat_sequence(seq: TokenSequence, k_rep: int) -> tuple[TokenSequence, np.ndarray]:
    if k_rep < 1:
        raise ValueError("k_rep must be >= 1")
    repeated = np.repeat(seq.ids, k_rep)
    group_of = np.repeat(np.arange(len(seq)), k_rep)
    return TokenSequence(repeated, seq.source), group_of


def repeat_and_mask(
    seq: TokenSequence, k_rep: int, p: float, rng: np.random.Generator
) -> RepeatedMaskedSample:
    repeated, group_of = repeat_sequence(seq, k_rep)
    return RepeatedMaskedSample(seq, k_rep, apply_mask(repeated, p, rng), group_of)


def corruption_proportion(rs: RepeatedMaskedSample) -> float:
    return float(rs.fully_masked().mean())


def expected_corruption(p: float, k_rep: int, n: int) -> tuple[float, float]:
    """Mean and variance of the fully-corrupted fraction for ``n`` base tokens."""
    _check_ratio(p)
    if k_rep < 1 or n < 1:
        raise ValueError("k_rep and n must be >= 1")
    q = p**k_rep
    return q, q * (1.0 - q) / n


def corruption_trials(
    p: float, k_rep: int, n: int, trials: int, seed: int = 0
) -> np.ndarray:
    """Corruption proportions of ``trials`` independent repeat-then-mask draws.

    Trial ``t`` is bit-identical to calling
    ``repeat_and_mask`` on a length-``n`` sequence with
    ``np.random.default_rng([seed, t])``.
    """
    _check_ratio(p)
    if k_rep < 1 or n < 1 or trials < 1:
        raise ValueError("k_rep, n and trials must be >= 1")
    out = np.empty(trials)
    for t in range(trials):
        chosen = np.random.default_rng([seed, t]).random(n * k_rep) < p
        if not chosen.any():
            chosen[0] = True
        out[t] = chosen.reshape(n, k_rep).all(axis=1).mean()
    return out
