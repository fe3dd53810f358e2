import numpy as np
import pytest

from exlm.corpus import (
    SlotGroup,
    SyntheticSpec,
    generate,
    generate_tokens,
    load_corpus,
    read_records,
    save_corpus,
    sentiment_spec,
    spec_vocab,
)
from exlm.vocab import TokenizeError, build_vocab, decode


def test_count_zero_then_vocab_fails():
    spec = SyntheticSpec((("x", "{A}"),), (SlotGroup(("A",), (("y",),), (1.0,)),), 0)
    toks, _ = generate_tokens(spec)
    assert toks == []
    with pytest.raises(ValueError, match="empty corpus"):
        build_vocab([" ".join(t) for t in toks])


def test_single_template_single_filler():
    spec = SyntheticSpec((("x", "{A}"),), (SlotGroup(("A",), (("y",),), (1.0,)),), 5)
    toks, _ = generate_tokens(spec)
    assert toks == [["x", "y"]] * 5


def test_validation():
    with pytest.raises(ValueError, match="no fillers"):
        SlotGroup(("A",), (), ())
    with pytest.raises(ValueError, match="positive"):
        SlotGroup(("A",), (("y",),), (0.0,))
    with pytest.raises(ValueError, match="without a slot"):
        SyntheticSpec((("x",),), (), 1)
    with pytest.raises(ValueError, match="no fillers for slots"):
        SyntheticSpec((("{B}",),), (SlotGroup(("A",), (("y",),), (1.0,)),), 1)


def test_joint_matches_weights():
    w = (1.0, 2.0, 3.0, 4.0)
    pairs = (("a1", "b1"), ("a2", "b2"), ("a3", "b3"), ("a4", "b4"))
    spec = SyntheticSpec((("{A}", "and", "{B}"),), (SlotGroup(("A", "B"), pairs, w),), 10000, seed=3)
    toks, drawn = generate_tokens(spec)
    counts = np.bincount([d[0] for d in drawn], minlength=4)
    p = np.array(w) / sum(w)
    sigma = np.sqrt(10000 * p * (1 - p))
    assert np.all(np.abs(counts - 10000 * p) <= 3 * sigma)
    # slot fillers co-occur only as listed pairs
    assert all((t[0], t[2]) in pairs for t in toks)


def test_deterministic():
    a = generate(sentiment_spec(200, seed=4))
    b = generate(sentiment_spec(200, seed=4))
    assert all(np.array_equal(x.ids, y.ids) for x, y in zip(a, b))
    assert a[0].source == "synthetic"


def test_from_dict(tmp_path):
    raw = {
        "templates": ["i feel {A}"],
        "slot_groups": [{"slots": ["A"], "options": [["fine"], ["bad"]], "weights": [1, 1]}],
        "count": 4,
        "seed": 1,
    }
    import json

    (tmp_path / "s.json").write_text(json.dumps(raw))
    spec = SyntheticSpec.from_json(tmp_path / "s.json")
    assert spec.templates == (("i", "feel", "{A}"),)
    assert len(generate_tokens(spec)[0]) == 4


def test_save_load_roundtrip(tmp_path):
    spec = sentiment_spec(50, seed=2)
    toks, _ = generate_tokens(spec)
    path = tmp_path / "c.txt"
    save_corpus(toks, path)
    first = path.read_bytes()
    assert read_records(path) == toks
    save_corpus(read_records(path), path)
    assert path.read_bytes() == first
    vocab = spec_vocab(spec)
    seqs = load_corpus(path, "text", vocab)
    assert [decode(s, vocab) for s in seqs] == toks


def test_blank_lines_and_errors(tmp_path, caplog):
    p = tmp_path / "c.txt"
    p.write_text("a b\n\nc\n  \nd\n")
    import logging

    with caplog.at_level(logging.INFO, logger="exlm.corpus"):
        assert len(read_records(p)) == 3
    assert "skipped 2 blank lines" in caplog.text
    s = tmp_path / "m.smi"
    s.write_text("CCO\nC(=O)Cl\nCCX\n")
    with pytest.raises(TokenizeError, match=r"m.smi:3: unparseable SMILES at offset 2"):
        read_records(s, "smiles")
