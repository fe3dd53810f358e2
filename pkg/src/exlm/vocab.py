"""Vocabularies and tokenizers for plain text and SMILES strings."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._io import atomic_write

PAD, UNK, CLS, SEP, MASK, BOS, EOS = (
    "[PAD]",
    "[UNK]",
    "[CLS]",
    "[SEP]",
    "[MASK]",
    "[BOS]",
    "[EOS]",
)
SPECIALS = (PAD, UNK, CLS, SEP, MASK, BOS, EOS)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID, BOS_ID, EOS_ID = range(len(SPECIALS))

SMILES_PATTERN = (
    r"(\[[^\]]+]|Br?|Cl?|N|O|S|P|F|I|b|c|n|o|s|p|\(|\)|\.|=|#|-|\+|\\|\/|:|~|@|\?|>|\*|\$|%[0-9]{2}|[0-9])"
)
_SMILES_RE = re.compile(SMILES_PATTERN)

SOURCES = ("text", "smiles", "synthetic")


class TokenizeError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    freqs: tuple[int, ...] = ()
    ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("special tokens must occupy ids 0..6")
        ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(ids) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")
        if not self.freqs:
            object.__setattr__(self, "freqs", (0,) * len(self.tokens))
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.ids

    def id_of(self, token: str) -> int:
        if token in SPECIALS:
            return UNK_ID
        return self.ids.get(token, UNK_ID)

    def save(self, path) -> None:
        atomic_write(path, "".join(f"{tok}\t{freq}\n" for tok, freq in zip(self.tokens, self.freqs)))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens, freqs = [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, _, freq = line.rpartition("\t")
                tokens.append(tok)
                freqs.append(int(freq))
        return cls(tuple(tokens), tuple(freqs))


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    source: str = "text"

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size < 1:
            raise ValueError("length >= 1 violated")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return int(self.ids.size)


def tokenize_text(raw: str) -> list[str]:
    return raw.lower().split()


def tokenize_smiles(raw: str) -> list[str]:
    """Split a SMILES string with the Schwaller regular expression.

    Raises TokenizeError naming the first character offset the pattern
    cannot consume.
    """
    tokens = []
    pos = 0
    for m in _SMILES_RE.finditer(raw):
        if m.start() != pos:
            raise TokenizeError(f"unparseable SMILES at offset {pos}")
        tokens.append(m.group(0))
        pos = m.end()
    if pos != len(raw):
        raise TokenizeError(f"unparseable SMILES at offset {pos}")
    return tokens


def tokenize(raw: str, mode: str) -> list[str]:
    if mode == "text":
        return tokenize_text(raw)
    if mode == "smiles":
        return tokenize_smiles(raw.strip())
    raise ValueError(f"unknown tokenizer mode {mode!r}")


def build_vocab(corpus: Iterable[str], mode: str = "text", min_freq: int = 1) -> Vocabulary:
    """Count tokens over ``corpus`` and lay them out after the special tokens.

    Ordering is frequency descending, then token string ascending, so the
    id assignment depends only on the corpus contents.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    return vocab_from_tokens((tokenize(raw, mode) for raw in corpus), min_freq)


def vocab_from_tokens(token_lists: Iterable[Sequence[str]], min_freq: int = 1) -> Vocabulary:
    counts: Counter[str] = Counter()
    for toks in token_lists:
        counts.update(toks)
    if not counts:
        raise ValueError("empty corpus")
    kept = sorted(
        ((tok, c) for tok, c in counts.items() if c >= min_freq and tok not in SPECIALS),
        key=lambda tc: (-tc[1], tc[0]),
    )
    tokens = SPECIALS + tuple(tok for tok, _ in kept)
    freqs = (0,) * len(SPECIALS) + tuple(c for _, c in kept)
    return Vocabulary(tokens, freqs)


def encode(seq: Sequence[str], vocab: Vocabulary, source: str = "text") -> TokenSequence:
    if len(seq) == 0:
        raise ValueError("length >= 1 violated")
    return TokenSequence(np.array([vocab.id_of(tok) for tok in seq], dtype=np.int64), source)


def decode(ids: TokenSequence | Sequence[int] | np.ndarray, vocab: Vocabulary) -> list[str]:
    arr = ids.ids if isinstance(ids, TokenSequence) else np.asarray(ids, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= len(vocab)):
        raise IndexError("id out of range")
    return [vocab.tokens[i] for i in arr]
