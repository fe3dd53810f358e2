"""Canned experiments shared by the acceptance suite and the example scripts."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .alignment import align, best_path
from .analysis import distribution_entropy_rows
from .corpus import SlotGroup, SyntheticSpec, generate, sentiment_spec, spec_vocab
from .expansion import layout_for
from .heads import build_adjacency, log_softmax, masked_softmax
from .objectives import exlm_forward, mlm_predict
from .trainer import TrainConfig, TrainResult, mask_eval_split, split_corpus, train

BIMODAL_TEMPLATES = (
    "it was {A} and we were {B}",
    "{A} , so {B}",
    "so {A} ; very {B}",
)
BIMODAL_PAIRS = (("amazing", "glad"), ("terrible", "sorry"))


def bimodal_spec(count: int = 3000, seed: int = 0) -> SyntheticSpec:
    """Two equally likely sentiment pairs; co-masked slots are genuinely two-way ambiguous."""
    group = SlotGroup(("A", "B"), BIMODAL_PAIRS, (1.0, 1.0))
    return SyntheticSpec(tuple(tuple(t.split()) for t in BIMODAL_TEMPLATES), (group,), count, seed)


# ---------------------------------------------------------------- smoke training


@dataclass
class SmokeResult:
    exlm: TrainResult
    mlm: TrainResult
    first_loss: float
    last_loss: float
    recovery: float
    seconds: float

    @property
    def loss_reduction(self) -> float:
        return 1.0 - self.last_loss / self.first_loss


def smoke_training(cfg: TrainConfig | None = None, count: int = 6000, eval_size: int = 500) -> SmokeResult:
    """ExLM and the MLM baseline on the sentiment corpus with identical settings."""
    cfg = cfg or TrainConfig()
    spec = sentiment_spec(count=count, seed=cfg.seed)
    vocab = spec_vocab(spec)
    train_seqs, held = split_corpus(generate(spec, vocab), eval_size)
    held_out = mask_eval_split(held, cfg.mask_ratio, cfg.seed)
    start = time.perf_counter()
    ex = train(train_seqs, held_out, len(vocab), replace(cfg, mode="exlm"))
    ml = train(train_seqs, held_out, len(vocab), replace(cfg, mode="mlm"))
    return SmokeResult(
        ex, ml, ex.losses[0], ex.losses[-1], ex.metrics[-1].acc, time.perf_counter() - start
    )


# ---------------------------------------------------------------- entropy direction


@dataclass
class EntropyComparison:
    seed: int
    exlm_node_bits: float  # mean over every emitting node of every held-out lattice
    exlm_path_bits: float  # mean over the nodes on the decoded best path
    mlm_bits: float
    exlm_acc: float
    mlm_acc: float


def entropy_direction(cfg: TrainConfig, count: int = 3000, eval_size: int = 300) -> EntropyComparison:
    """Train ExLM and MLM on the bimodal corpus and compare held-out prediction entropy."""
    spec = bimodal_spec(count, seed=0)
    vocab = spec_vocab(spec)
    train_seqs, held = split_corpus(generate(spec, vocab), eval_size)
    held_out = mask_eval_split(held, cfg.mask_ratio, cfg.seed)
    quiet = replace(cfg, eval_every=10**9)
    ex = train(train_seqs, [], len(vocab), replace(quiet, mode="exlm"))
    ml = train(train_seqs, [], len(vocab), replace(quiet, mode="mlm"))

    node_bits, path_bits, ml_bits = [], [], []
    ex_hits = ml_hits = total = 0
    for ms in held_out:
        fp = exlm_forward(ex.weights, ex.enc, ms, cfg.expansion, cfg.variant)
        bits = distribution_entropy_rows(fp.heads.P)
        bp = best_path(fp.heads.logP, fp.heads.logE, None, fp.layout, num_targets=ms.num_masks)
        node_bits.append(bits)
        path_bits.append(bits[bp.nodes])
        pred, probs = mlm_predict(ml.weights, ml.enc, ms)
        ml_bits.append(distribution_entropy_rows(probs))
        ex_hits += int((bp.tokens == ms.targets).sum())
        ml_hits += int((pred == ms.targets).sum())
        total += ms.num_masks
    return EntropyComparison(
        cfg.seed,
        float(np.concatenate(node_bits).mean()),
        float(np.concatenate(path_bits).mean()),
        float(np.concatenate(ml_bits).mean()),
        ex_hits / total,
        ml_hits / total,
    )


# ---------------------------------------------------------------- DP scaling


def random_dp_instance(num_groups: int, k: int, vocab_size: int = 50, seed: int = 0, variant: str = "dense"):
    rng = np.random.default_rng(seed)
    layout = layout_for(num_groups, k)
    adj = build_adjacency(layout, variant)
    n = layout.num_nodes
    _, logE = masked_softmax(rng.normal(size=(n, n)), adj.allowed)
    logP = log_softmax(rng.normal(size=(layout.L, vocab_size)))
    return logP, logE, rng.integers(0, vocab_size, size=num_groups)


def dp_seconds(num_groups: int, k: int, repeats: int = 7, seed: int = 0) -> float:
    """Best-of-``repeats`` wall time of one forward+backward pass."""
    logP, logE, y = random_dp_instance(num_groups, k, seed=seed)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        align(logP, logE, y)
        best = min(best, time.perf_counter() - t0)
    return best


def dp_scaling_ratio(num_groups: int = 16, L: int = 256, repeats: int = 7) -> tuple[float, float, float]:
    """(time at L, time at 2L, ratio) with the number of targets held fixed."""
    if L % num_groups:
        raise ValueError("L must be a multiple of num_groups")
    k = L // num_groups
    t1 = dp_seconds(num_groups, k, repeats)
    t2 = dp_seconds(num_groups, 2 * k, repeats)
    return t1, t2, t2 / t1
