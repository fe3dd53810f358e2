import numpy as np
import pytest
from hypothesis import given, strategies as st

from exlm.vocab import (
    MASK_ID,
    SPECIALS,
    UNK_ID,
    TokenizeError,
    TokenSequence,
    Vocabulary,
    build_vocab,
    decode,
    encode,
    tokenize_smiles,
    tokenize_text,
)


def test_build_vocab_text_counts():
    v = build_vocab(["a b", "a"], "text", 1)
    assert v.tokens == SPECIALS + ("a", "b")
    assert len(v) == 9
    assert v.freqs[7:] == (2, 1)


def test_build_vocab_smiles():
    v = build_vocab(["CCO"], "smiles", 1)
    assert v.tokens[7:] == ("C", "O")
    assert len(v) == 9


def test_build_vocab_empty():
    with pytest.raises(ValueError, match="empty corpus"):
        build_vocab([""], "text")
    with pytest.raises(ValueError, match="empty corpus"):
        build_vocab([], "smiles")


def test_min_freq_and_ordering():
    v = build_vocab(["b a c", "c b", "c"], "text", min_freq=2)
    assert v.tokens[7:] == ("c", "b")


def test_special_literal_maps_to_unk():
    v = build_vocab(["[MASK] x"], "text")
    assert v.tokens.count("[mask]") == 1  # lowercased text is an ordinary token
    assert v.id_of("[MASK]") == UNK_ID
    assert len(set(v.tokens)) == len(v.tokens)


@pytest.mark.parametrize(
    "raw, expected",
    [("This is it", ["this", "is", "it"]), ("  a  b ", ["a", "b"]), ("", [])],
)
def test_tokenize_text(raw, expected):
    assert tokenize_text(raw) == expected


@pytest.mark.parametrize(
    "raw, expected",
    [
        ("CCO", ["C", "C", "O"]),
        ("C(=O)Cl", ["C", "(", "=", "O", ")", "Cl"]),
        ("[NH4+]", ["[NH4+]"]),
        ("c1ccccc1Br", ["c", "1", "c", "c", "c", "c", "c", "1", "Br"]),
        ("CC>O", ["C", "C", ">", "O"]),
        ("C%12C", ["C", "%12", "C"]),
    ],
)
def test_tokenize_smiles(raw, expected):
    assert tokenize_smiles(raw) == expected


def test_tokenize_smiles_error_offset():
    with pytest.raises(TokenizeError, match="unparseable SMILES at offset 2"):
        tokenize_smiles("CCX")
    with pytest.raises(TokenizeError, match="offset 0"):
        tokenize_smiles("Zn")


@given(st.lists(st.sampled_from(["C", "O", "N", "Cl", "Br", "(", ")", "=", "c", "1", "[NH4+]", "[C@@H]"]), max_size=30))
def test_smiles_concatenation_roundtrip(tokens):
    raw = "".join(tokens)
    assert "".join(tokenize_smiles(raw)) == raw


def test_encode_unknown_and_length():
    v = build_vocab(["a b", "a"], "text")
    seq = encode(["a", "zzz"], v)
    assert list(seq.ids) == [v.id_of("a"), UNK_ID]
    with pytest.raises(ValueError, match="length >= 1 violated"):
        encode([], v)
    s = build_vocab(["CCO"], "smiles")
    assert UNK_ID not in encode(["C", "C", "O"], s, "smiles").ids


def test_decode_roundtrip_and_range():
    v = build_vocab(["the cat sat", "the dog"], "text")
    toks = tokenize_text("The cat sat the dog")
    assert decode(encode(toks, v), v) == toks
    assert decode(list(range(7)), v) == list(SPECIALS)
    with pytest.raises(IndexError, match="id out of range"):
        decode([len(v)], v)


@given(st.lists(st.sampled_from(["x", "y", "z", "w"]), min_size=1, max_size=20))
def test_text_roundtrip_property(words):
    v = build_vocab([" ".join(words)], "text")
    raw = " ".join(w.upper() for w in words)
    assert " ".join(decode(encode(tokenize_text(raw), v), v)) == raw.lower()


def test_vocab_file_roundtrip(tmp_path):
    v = build_vocab(["a b b", "c"], "text")
    v.save(tmp_path / "v.tsv")
    lines = (tmp_path / "v.tsv").read_text().splitlines()
    assert lines[0] == "[PAD]\t0" and lines[7] == "b\t2"
    assert Vocabulary.load(tmp_path / "v.tsv") == v


def test_vocab_invariants():
    with pytest.raises(ValueError):
        Vocabulary(("a",) + SPECIALS)
    with pytest.raises(ValueError):
        Vocabulary(SPECIALS + ("a", "a"))
    with pytest.raises(ValueError, match="length >= 1"):
        TokenSequence(np.array([], dtype=int))
    assert MASK_ID == 4
