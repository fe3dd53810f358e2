"""Synthetic template corpora and newline-delimited corpus files."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write
from .vocab import TokenizeError, TokenSequence, Vocabulary, encode, tokenize, vocab_from_tokens

logger = logging.getLogger(__name__)

_SLOT = re.compile(r"^\{(\w+)\}$")


@dataclass(frozen=True)
class SlotGroup:
    """Slots filled jointly: one option (a tuple, one filler per slot) is drawn per sequence."""

    slots: tuple[str, ...]
    options: tuple[tuple[str, ...], ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if not self.options:
            raise ValueError(f"slot group {self.slots} has no fillers")
        if len(self.weights) != len(self.options):
            raise ValueError("one weight per option is required")
        if any(w <= 0 for w in self.weights):
            raise ValueError("filler weights must be positive")
        if any(len(o) != len(self.slots) for o in self.options):
            raise ValueError("every option must fill every slot of its group")

    @property
    def probs(self) -> np.ndarray:
        w = np.asarray(self.weights, dtype=np.float64)
        return w / w.sum()


@dataclass(frozen=True)
class SyntheticSpec:
    templates: tuple[tuple[str, ...], ...]
    slot_groups: tuple[SlotGroup, ...]
    count: int
    seed: int = 0
    template_weights: tuple[float, ...] = field(default=())

    def __post_init__(self):
        known = {s for g in self.slot_groups for s in g.slots}
        for t in self.templates:
            slots = [m.group(1) for tok in t if (m := _SLOT.match(tok))]
            if not slots:
                raise ValueError(f"template without a slot: {' '.join(t)}")
            missing = set(slots) - known
            if missing:
                raise ValueError(f"no fillers for slots {sorted(missing)}")
        if self.template_weights and len(self.template_weights) != len(self.templates):
            raise ValueError("one weight per template is required")
        if self.count < 0:
            raise ValueError("count must be >= 0")

    @classmethod
    def from_dict(cls, raw: dict) -> "SyntheticSpec":
        groups = tuple(
            SlotGroup(
                tuple(g["slots"]),
                tuple(tuple(o) for o in g["options"]),
                tuple(float(w) for w in g.get("weights", [1.0] * len(g["options"]))),
            )
            for g in raw["slot_groups"]
        )
        templates = tuple(tuple(t.split()) if isinstance(t, str) else tuple(t) for t in raw["templates"])
        return cls(
            templates,
            groups,
            int(raw["count"]),
            int(raw.get("seed", 0)),
            tuple(float(w) for w in raw.get("template_weights", ())),
        )

    @classmethod
    def from_json(cls, path) -> "SyntheticSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def alphabet(self) -> list[str]:
        toks = {tok for t in self.templates for tok in t if not _SLOT.match(tok)}
        toks.update(f for g in self.slot_groups for o in g.options for f in o)
        return sorted(toks)


def generate_tokens(spec: SyntheticSpec) -> tuple[list[list[str]], list[tuple[int, ...]]]:
    """Token lists plus, per sequence, the option index drawn for each slot group."""
    rng = np.random.default_rng(spec.seed)
    tw = np.asarray(spec.template_weights or [1.0] * len(spec.templates), dtype=np.float64)
    tw = tw / tw.sum()
    t_idx = rng.choice(len(spec.templates), size=spec.count, p=tw)
    choices = np.stack(
        [rng.choice(len(g.options), size=spec.count, p=g.probs) for g in spec.slot_groups], axis=1
    ) if spec.slot_groups else np.zeros((spec.count, 0), dtype=np.int64)
    out, drawn = [], []
    for n in range(spec.count):
        fill = {}
        for g, c in zip(spec.slot_groups, choices[n]):
            fill.update(zip(g.slots, g.options[c]))
        seq = []
        for tok in spec.templates[t_idx[n]]:
            m = _SLOT.match(tok)
            seq.append(fill[m.group(1)] if m else tok)
        out.append(seq)
        drawn.append(tuple(int(c) for c in choices[n]))
    return out, drawn


def generate(spec: SyntheticSpec, vocab: Vocabulary | None = None) -> list[TokenSequence]:
    vocab = vocab or spec_vocab(spec)
    return [encode(toks, vocab, "synthetic") for toks in generate_tokens(spec)[0]]


def spec_vocab(spec: SyntheticSpec) -> Vocabulary:
    return vocab_from_tokens([spec.alphabet()])


def save_corpus(token_lists, path) -> None:
    text = "".join(" ".join(toks) + "\n" for toks in token_lists)
    atomic_write(path, text)


def read_records(path, mode: str = "text") -> list[list[str]]:
    """Tokenized non-blank lines of a UTF-8 corpus file."""
    records, blank = [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                blank += 1
                continue
            try:
                toks = tokenize(line.rstrip("\n"), mode)
            except TokenizeError as exc:
                raise TokenizeError(f"{path}:{lineno}: {exc}") from None
            records.append(toks)
    if blank:
        logger.info("%s: skipped %d blank lines", path, blank)
    return records


def load_corpus(path, mode: str, vocab: Vocabulary) -> list[TokenSequence]:
    source = "smiles" if mode == "smiles" else "text"
    return [encode(toks, vocab, source) for toks in read_records(path, mode)]


SENTIMENT_PAIRS = (
    ("amazing", "glad"),
    ("wonderful", "happy"),
    ("terrible", "sorry"),
    ("awful", "sad"),
)


def sentiment_spec(count: int = 6000, seed: int = 0) -> SyntheticSpec:
    """Two correlated slots: the first filler fixes the second one."""
    templates = (
        "this is {A} , and i am very {B} to see this",
        "the show was {A} so we all felt {B} afterwards",
        "what a {A} day , i am {B} about it",
        "honestly the food was {A} and the chef looked {B}",
    )
    group = SlotGroup(("A", "B"), SENTIMENT_PAIRS, (1.0,) * len(SENTIMENT_PAIRS))
    return SyntheticSpec(tuple(tuple(t.split()) for t in templates), (group,), count, seed)
