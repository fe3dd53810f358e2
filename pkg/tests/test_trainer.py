import json
import math

import numpy as np
import pytest

from exlm import encoder
from exlm.corpus import generate, generate_tokens, save_corpus, sentiment_spec, spec_vocab
from exlm.objectives import exlm_loss_and_grads, mlm_forward, mlm_loss, mlm_loss_and_grads
from exlm.trainer import (
    AdamState,
    METRIC_COLUMNS,
    TrainConfig,
    batch_loss,
    gradient_check,
    load_checkpoint,
    make_batch,
    run_training,
    train_step,
)

SMALL = dict(layers=2, heads=2, model_dim=16, ffn_dim=32, init_std=0.3)


@pytest.fixture(scope="module")
def corpus():
    spec = sentiment_spec(count=120, seed=5)
    return generate(spec), len(spec_vocab(spec))


def test_config_validation(tmp_path):
    for bad in (dict(mask_ratio=0.0), dict(expansion=0), dict(steps=0), dict(mode="x"), dict(variant="x")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    (tmp_path / "c.json").write_text(json.dumps({"steps": 3, "bogus": 1}))
    with pytest.raises(ValueError, match="bogus"):
        TrainConfig.from_json(tmp_path / "c.json")
    (tmp_path / "c.json").write_text(json.dumps({"steps": 3, "adam_beta2": 0.9}))
    assert TrainConfig.from_json(tmp_path / "c.json").adam_beta2 == 0.9


def test_mlm_loss_examples():
    W = np.eye(4) * 50.0
    H = np.eye(4)[[1, 3]]
    assert mlm_loss(H, W, [1, 3]) == pytest.approx(0.0, abs=1e-15)
    assert mlm_loss(np.zeros((3, 4)), W, [0, 1, 2]) == pytest.approx(math.log(4), abs=1e-15)


def test_reduction_k1(corpus):
    seqs, V = corpus
    cfg = TrainConfig(expansion=1, mask_ratio=0.3, **SMALL)
    enc = cfg.encoder_config(V)
    w = encoder.init_weights(enc, 0, 0.3)
    for ms in make_batch(seqs, 1, TrainConfig(batch_size=10, mask_ratio=0.3)):
        sa, _ = exlm_loss_and_grads(w, enc, ms, 1)
        _, H, _, rows, _ = mlm_forward(w, enc, ms)
        assert sa / ms.num_masks == pytest.approx(mlm_loss(H[rows], w["W_P"], ms.targets), abs=1e-12)


def test_reduction_k1_gradients(corpus):
    seqs, V = corpus
    cfg = TrainConfig(expansion=1, **SMALL)
    enc = cfg.encoder_config(V)
    w = encoder.init_weights(enc, 1, 0.3)
    ms = make_batch(seqs, 2, cfg)[0]
    _, ge = exlm_loss_and_grads(w, enc, ms, 1)
    _, gm = mlm_loss_and_grads(w, enc, ms)
    for name in gm:
        if name in ("W_Q", "W_K", "bos_state", "eos_state"):
            assert not ge[name].any()  # forced transitions carry no gradient
        else:
            assert np.allclose(ge[name], gm[name], atol=1e-12, rtol=0), name


@pytest.mark.parametrize(
    "extra",
    [dict(expansion=4, variant="dense"), dict(expansion=4, variant="sparse"), dict(expansion=1), dict(mode="mlm")],
)
def test_gradient_check(corpus, extra):
    seqs, V = corpus
    cfg = TrainConfig(batch_size=2, mask_ratio=0.15, **SMALL, **extra)
    batch = [ms for ms in make_batch(seqs, 3, cfg) if ms.num_masks * cfg.expansion <= 8][:2]
    assert batch
    enc = cfg.encoder_config(V)
    w = encoder.init_weights(enc, 2, 0.3)
    assert gradient_check(w, batch, enc, cfg, 1e-6, coords=80, seed=0) <= 1e-5


def test_batches_are_deterministic(corpus):
    seqs, _ = corpus
    cfg = TrainConfig(seed=3)
    a, b = make_batch(seqs, 7, cfg), make_batch(seqs, 7, cfg)
    assert all(np.array_equal(x.corrupted.ids, y.corrupted.ids) for x, y in zip(a, b))
    c = make_batch(seqs, 8, cfg)
    assert any(not np.array_equal(x.corrupted.ids, y.corrupted.ids) for x, y in zip(a, c))


def test_train_step_reduces_loss_and_rejects_nan(corpus):
    seqs, V = corpus
    cfg = TrainConfig(batch_size=4, learning_rate=1e-2, **SMALL)
    enc = cfg.encoder_config(V)
    w = encoder.init_weights(enc, 0, 0.3)
    state = AdamState.zeros(w)
    batch = make_batch(seqs, 1, cfg)
    first = train_step(w, state, batch, enc, cfg)
    for _ in range(5):
        train_step(w, state, batch, enc, cfg)
    assert batch_loss(w, enc, batch, cfg) < first
    w["W_P"][:] = np.nan
    with pytest.raises(FloatingPointError, match="non-finite|NaN"):
        train_step(w, state, batch, enc, cfg)


def _write_corpus(tmp_path, count=80):
    toks, _ = generate_tokens(sentiment_spec(count=count, seed=1))
    path = tmp_path / "corpus.txt"
    save_corpus(toks, path)
    return path


def test_single_step_run(tmp_path):
    path = _write_corpus(tmp_path)
    cfg = TrainConfig(steps=1, batch_size=4, eval_size=10, **SMALL)
    run_training(cfg, [path], tmp_path / "out")
    lines = (tmp_path / "out" / "metrics.tsv").read_text().splitlines()
    assert lines[0].split("\t") == list(METRIC_COLUMNS)
    assert len(lines) == 2
    weights, state, meta = load_checkpoint(tmp_path / "out" / "checkpoint")
    assert state.step == 1 and meta["train_config"]["steps"] == 1
    assert not (tmp_path / "out" / "metrics.tsv.partial").exists()


def test_mlm_schema(tmp_path):
    path = _write_corpus(tmp_path)
    cfg = TrainConfig(steps=2, batch_size=4, eval_size=10, eval_every=1, mode="mlm", **SMALL)
    run_training(cfg, [path], tmp_path / "mlm")
    lines = (tmp_path / "mlm" / "metrics.tsv").read_text().splitlines()
    assert lines[0].split("\t") == list(METRIC_COLUMNS) and len(lines) == 3
    assert all(0.0 <= float(l.split("\t")[2]) <= 1.0 for l in lines[1:])


def test_resume_is_bit_identical(tmp_path):
    path = _write_corpus(tmp_path)
    base = dict(batch_size=4, eval_size=10, eval_every=1, **SMALL)
    full = run_training(TrainConfig(steps=4, **base), [path], tmp_path / "full")
    run_training(TrainConfig(steps=2, **base), [path], tmp_path / "half")
    resumed = run_training(TrainConfig(steps=4, **base), [path], tmp_path / "half", tmp_path / "half" / "checkpoint")
    assert resumed.losses == full.losses[2:]
    assert all(np.array_equal(full.weights[k], resumed.weights[k]) for k in full.weights)
    a = [l.split("\t")[:4] for l in (tmp_path / "full" / "metrics.tsv").read_text().splitlines()]
    b = [l.split("\t")[:4] for l in (tmp_path / "half" / "metrics.tsv").read_text().splitlines()]
    assert a == b


def test_training_is_deterministic(tmp_path):
    path = _write_corpus(tmp_path)
    cfg = TrainConfig(steps=3, batch_size=4, eval_size=10, **SMALL)
    a = run_training(cfg, [path], tmp_path / "a")
    b = run_training(cfg, [path], tmp_path / "b")
    assert a.losses == b.losses
    assert (tmp_path / "a" / "checkpoint.bin").read_bytes() == (tmp_path / "b" / "checkpoint.bin").read_bytes()


def test_missing_corpus_names_path(tmp_path):
    with pytest.raises(OSError, match="nope.txt"):
        run_training(TrainConfig(steps=1), [tmp_path / "nope.txt"], tmp_path / "o")
