"""Expanded-state masked language modelling: lattice heads, alignment DP and analysis."""

from .alignment import AlignmentLattice, InfeasibleLattice, align, best_path, brute_force_loss, sa_loss
from .analysis import EntropyReport, distribution_entropy, export_case
from .encoder import EncoderConfig
from .expansion import LatticeLayout, build_layout, expand_masks, layout_for
from .heads import AdjacencyMask, LatticeHeads, build_adjacency, compute_heads
from .masking import MaskedSample, apply_mask, repeat_and_mask
from .trainer import TrainConfig, run_training, train
from .vocab import TokenSequence, Vocabulary, build_vocab, decode, encode, tokenize

__version__ = "0.1.0"

__all__ = [
    "AdjacencyMask",
    "AlignmentLattice",
    "EncoderConfig",
    "EntropyReport",
    "InfeasibleLattice",
    "LatticeHeads",
    "LatticeLayout",
    "MaskedSample",
    "TokenSequence",
    "TrainConfig",
    "Vocabulary",
    "align",
    "apply_mask",
    "best_path",
    "brute_force_loss",
    "build_adjacency",
    "build_layout",
    "build_vocab",
    "compute_heads",
    "decode",
    "distribution_entropy",
    "encode",
    "expand_masks",
    "export_case",
    "layout_for",
    "repeat_and_mask",
    "run_training",
    "sa_loss",
    "tokenize",
    "train",
]
