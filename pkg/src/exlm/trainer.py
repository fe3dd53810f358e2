"""Toy-scale training for ExLM and the vanilla MLM baseline."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import encoder
from ._io import atomic_write
from .analysis import distribution_entropy_rows
from .encoder import EncoderConfig
from .masking import MaskedSample, apply_mask
from .objectives import exlm_loss_and_grads, exlm_predict, mlm_loss_and_grads, mlm_predict
from .vocab import TokenSequence, Vocabulary

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "loss", "acc", "entropy_bits", "wall_ms")


@dataclass
class TrainConfig:
    seed: int = 0
    steps: int = 200
    batch_size: int = 32
    mask_ratio: float = 0.15
    expansion: int = 4
    variant: str = "dense"
    learning_rate: float = 3e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    weight_decay: float = 0.01
    clip_norm: float = 0.0
    eval_every: int = 50
    # beyond the core fields: model shape and bookkeeping
    mode: str = "exlm"
    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 128
    rope_base: float = 10000.0
    init_std: float = 0.1
    adam_eps: float = 1e-8
    max_len: int = 64
    eval_size: int = 500
    tokenizer: str = "text"

    def __post_init__(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must lie in (0, 1)")
        if self.expansion < 1:
            raise ValueError("expansion must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.mode not in ("exlm", "mlm"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.variant not in ("dense", "sparse"):
            raise ValueError(f"unknown variant {self.variant!r}")

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        raw = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            layers=self.layers,
            heads=self.heads,
            model_dim=self.model_dim,
            ffn_dim=self.ffn_dim,
            vocab_size=vocab_size,
            rope_base=self.rope_base,
        )


@dataclass
class MetricsRow:
    step: int
    loss: float
    acc: float
    entropy_bits: float
    wall_ms: float

    def tsv(self) -> str:
        return f"{self.step}\t{self.loss:.6f}\t{self.acc:.6f}\t{self.entropy_bits:.6f}\t{self.wall_ms:.1f}"


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, weights) -> "AdamState":
        return cls(0, encoder.zeros_like_weights(weights), encoder.zeros_like_weights(weights))


def adam_update(weights, grads, state: AdamState, cfg: TrainConfig) -> float:
    """One in-place Adam step with decoupled weight decay on matrices.

    Returns the pre-clipping global gradient norm.
    """
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    clip = 1.0
    if cfg.clip_norm > 0 and norm > cfg.clip_norm:
        clip = cfg.clip_norm / (norm + 1e-12)
    state.step += 1
    b1, b2, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.learning_rate
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, w in weights.items():
        g = grads[name] * clip
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if cfg.weight_decay and w.ndim > 1:
            w -= lr * cfg.weight_decay * w
        w -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return norm


def batch_loss_and_grads(weights, enc: EncoderConfig, batch: list[MaskedSample], cfg: TrainConfig, rng=None):
    """Mean loss per masked token over the batch and its gradients."""
    total_masks = sum(ms.num_masks for ms in batch)
    scale = 1.0 / total_masks
    grads = encoder.zeros_like_weights(weights)
    total = 0.0
    for ms in batch:
        if cfg.mode == "exlm":
            loss, _ = exlm_loss_and_grads(weights, enc, ms, cfg.expansion, cfg.variant, scale, grads, rng)
        else:
            loss, _ = mlm_loss_and_grads(weights, enc, ms, scale, grads, rng)
        total += loss
    return total * scale, grads


def batch_loss(weights, enc, batch, cfg) -> float:
    return batch_loss_and_grads(weights, enc, batch, cfg)[0]


def train_step(weights, state: AdamState, batch: list[MaskedSample], enc: EncoderConfig, cfg: TrainConfig) -> float:
    loss, grads = batch_loss_and_grads(weights, enc, batch, cfg)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss at step {state.step + 1}")
    adam_update(weights, grads, state, cfg)
    return loss


def make_batch(train: list[TokenSequence], step: int, cfg: TrainConfig) -> list[MaskedSample]:
    """Batch for ``step`` (1-based); a pure function of (seed, step)."""
    rng = np.random.default_rng([cfg.seed, step])
    idx = rng.integers(0, len(train), size=cfg.batch_size)
    return [
        apply_mask(train[i], cfg.mask_ratio, np.random.default_rng([cfg.seed, step, j]))
        for j, i in enumerate(idx)
    ]


def mask_eval_split(seqs: list[TokenSequence], p: float, seed: int) -> list[MaskedSample]:
    return [apply_mask(s, p, np.random.default_rng([seed, 1_000_003, j])) for j, s in enumerate(seqs)]


def evaluate(weights, enc: EncoderConfig, samples: list[MaskedSample], cfg: TrainConfig) -> tuple[float, float]:
    """Masked-token recovery and mean prediction entropy (bits) on ``samples``.

    ExLM decodes with the best lattice path and reports the mean entropy of
    every emitting node; the baseline uses argmax and the masked positions.
    """
    hits = total = 0
    ent_sum = ent_n = 0.0
    for ms in samples:
        if cfg.mode == "exlm":
            pred, fp = exlm_predict(weights, enc, ms, cfg.expansion, cfg.variant)
            ent = distribution_entropy_rows(fp.heads.P)
        else:
            pred, probs = mlm_predict(weights, enc, ms)
            ent = distribution_entropy_rows(probs)
        hits += int((pred == ms.targets).sum())
        total += ms.num_masks
        ent_sum += float(ent.sum())
        ent_n += ent.size
    return hits / total, ent_sum / ent_n


def gradient_check(
    weights, batch: list[MaskedSample], enc: EncoderConfig, cfg: TrainConfig,
    epsilon: float = 1e-6, coords: int = 200, seed: int = 0, floor: float = 1e-4,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``coords`` coordinates are drawn across all weight tensors (every tensor
    contributes at least one). The relative error is
    ``|a - n| / max(|a|, |n|, floor)``; the floor keeps round-off in the
    finite difference from dominating coordinates whose gradient is ~0.
    """
    _, grads = batch_loss_and_grads(weights, enc, batch, cfg)
    rng = np.random.default_rng(seed)
    names = list(weights)
    sizes = np.array([weights[n].size for n in names], dtype=np.float64)
    per = np.maximum(1, np.round(coords * sizes / sizes.sum())).astype(int)
    worst = 0.0
    for name, count in zip(names, per):
        arr = weights[name]
        picks = rng.choice(arr.size, size=min(count, arr.size), replace=False)
        for flat in picks:
            old = arr.flat[flat]
            arr.flat[flat] = old + epsilon
            up = batch_loss(weights, enc, batch, cfg)
            arr.flat[flat] = old - epsilon
            down = batch_loss(weights, enc, batch, cfg)
            arr.flat[flat] = old
            num = (up - down) / (2 * epsilon)
            ana = grads[name].flat[flat]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), floor))
    return worst


# ---------------------------------------------------------------- full runs


def save_checkpoint(prefix, weights, state: AdamState, cfg: TrainConfig, vocab_size: int) -> None:
    tensors = dict(weights)
    tensors.update({f"adam.m.{k}": v for k, v in state.m.items()})
    tensors.update({f"adam.v.{k}": v for k, v in state.v.items()})
    meta = {"step": state.step, "train_config": asdict(cfg), "vocab_size": vocab_size}
    encoder.save_tensors(prefix, tensors, meta)


def load_checkpoint(prefix) -> tuple[dict, AdamState, dict]:
    tensors, meta = encoder.load_tensors(prefix)
    weights = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    state = AdamState(
        int(meta.get("step", 0)),
        {k[7:]: v for k, v in tensors.items() if k.startswith("adam.m.")},
        {k[7:]: v for k, v in tensors.items() if k.startswith("adam.v.")},
    )
    if not state.m:
        state = AdamState.zeros(weights)
        state.step = int(meta.get("step", 0))
    return weights, state, meta


@dataclass
class TrainResult:
    metrics: list[MetricsRow]
    losses: list[float]
    weights: dict
    state: AdamState
    enc: EncoderConfig


def train(
    train_seqs: list[TokenSequence],
    eval_samples: list[MaskedSample],
    vocab_size: int,
    cfg: TrainConfig,
    weights=None,
    state: AdamState | None = None,
    on_row=None,
) -> TrainResult:
    """Train for ``cfg.steps`` steps, continuing from ``state.step`` if given."""
    enc = cfg.encoder_config(vocab_size)
    if weights is None:
        weights = encoder.init_weights(enc, cfg.seed, cfg.init_std)
    if state is None:
        state = AdamState.zeros(weights)
    start = time.perf_counter()
    rows, losses = [], []
    for step in range(state.step + 1, cfg.steps + 1):
        loss = train_step(weights, state, make_batch(train_seqs, step, cfg), enc, cfg)
        losses.append(loss)
        if step == 1 or step % cfg.eval_every == 0 or step == cfg.steps:
            acc, ent = evaluate(weights, enc, eval_samples, cfg) if eval_samples else (float("nan"),) * 2
            row = MetricsRow(step, loss, acc, ent, (time.perf_counter() - start) * 1e3)
            rows.append(row)
            logger.info("step %d loss %.4f acc %.4f entropy %.4f", step, loss, acc, ent)
            if on_row is not None:
                on_row(row)
    return TrainResult(rows, losses, weights, state, enc)


def split_corpus(seqs: list[TokenSequence], eval_size: int) -> tuple[list, list]:
    if eval_size <= 0 or len(seqs) <= eval_size:
        return seqs, []
    return seqs[:-eval_size], seqs[-eval_size:]


def run_training(cfg: TrainConfig, corpus_paths, out_dir, resume_from=None) -> TrainResult:
    """Train on newline-delimited corpus files and write metrics plus a checkpoint.

    The last ``cfg.eval_size`` records are held out for evaluation. Outputs:
    ``metrics.tsv``, ``vocab.tsv``, ``config.json`` and ``checkpoint.{json,bin}``.
    """
    from .corpus import read_records
    from .vocab import encode, vocab_from_tokens

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(corpus_paths, (str, Path)):
        corpus_paths = [corpus_paths]
    records = []
    for path in corpus_paths:
        records.extend(read_records(path, cfg.tokenizer))
    train_tok, eval_tok = split_corpus(records, cfg.eval_size)
    vocab_path = out / "vocab.tsv"
    if resume_from is not None and vocab_path.exists():
        vocab = Vocabulary.load(vocab_path)
    else:
        vocab = vocab_from_tokens(train_tok)
        vocab.save(vocab_path)
    source = "smiles" if cfg.tokenizer == "smiles" else "text"
    to_seq = lambda toks: encode(toks[: cfg.max_len], vocab, source)
    train_seqs = [to_seq(t) for t in train_tok]
    eval_samples = mask_eval_split([to_seq(t) for t in eval_tok], cfg.mask_ratio, cfg.seed)

    atomic_write(out / "config.json", json.dumps(asdict(cfg), indent=1, sort_keys=True) + "\n")
    weights = state = None
    metrics_path = out / "metrics.tsv"
    header = "\t".join(METRIC_COLUMNS) + "\n"
    previous = header
    if resume_from is not None:
        weights, state, _ = load_checkpoint(resume_from)
        if metrics_path.exists():
            previous = metrics_path.read_text(encoding="utf-8")
    # rows stream into a side file while training; the real file appears at the end
    partial = metrics_path.with_name(metrics_path.name + ".partial")
    with open(partial, "w", encoding="utf-8") as fh:
        fh.write(previous)

        def write(row):
            fh.write(row.tsv() + "\n")
            fh.flush()

        result = train(train_seqs, eval_samples, len(vocab), cfg, weights, state, write)
    os.replace(partial, metrics_path)
    save_checkpoint(out / "checkpoint", result.weights, result.state, cfg, len(vocab))
    return result
