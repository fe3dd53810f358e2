"""``exlm`` command line: one subcommand per experiment or report.

Exit codes: 0 success, 1 verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from ._io import atomic_write

DP_TOL = 1e-9
GRAD_TOL = 1e-5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _thread_limit():
    n = int(os.environ.get("EXLM_THREADS", "0") or 0)
    if n <= 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _emit(rows: list[str], out: Path, name: str) -> None:
    text = "".join(r + "\n" for r in rows)
    atomic_write(out / name, text)
    sys.stdout.write(text)


# ---------------------------------------------------------------- subcommands


def cmd_build_vocab(args) -> int:
    from .corpus import read_records
    from .vocab import vocab_from_tokens

    records = []
    for path in args.corpus:
        records.extend(read_records(path, args.mode))
    vocab = vocab_from_tokens(records, args.min_freq)
    path = args.out / "vocab.tsv"
    args.out.mkdir(parents=True, exist_ok=True)
    vocab.save(path)
    sys.stdout.write(path.read_text(encoding="utf-8"))
    return 0


def cmd_tokenize(args) -> int:
    from .vocab import Vocabulary, encode, tokenize

    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    rows = []
    with open(args.input, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            toks = tokenize(line.rstrip("\n"), args.mode)
            if vocab is None:
                rows.append(" ".join(toks))
            else:
                rows.append(" ".join(str(i) for i in encode(toks, vocab).ids))
    _emit(rows, args.out, "tokens.txt")
    return 0


def cmd_mask_stats(args) -> int:
    from .masking import corruption_trials, expected_corruption

    rows = ["p\tk_rep\tn\ttrials\tmean_s\tstd_s\texpected_mean\texpected_std"]
    for p in args.p:
        for k in args.k:
            s = corruption_trials(p, k, args.n, args.trials, args.seed)
            mean, var = expected_corruption(p, k, args.n)
            rows.append(
                f"{p:g}\t{k}\t{args.n}\t{args.trials}\t{s.mean():.6f}\t{s.std(ddof=1):.6f}\t{mean:.6f}\t{np.sqrt(var):.6f}"
            )
    _emit(rows, args.out, "mask_stats.tsv")
    return 0


def random_lattice(rng: np.random.Generator, max_nodes: int, max_targets: int, variant: str, vocab_size: int = 6):
    """A random oracle-sized instance: layout, log-heads and targets."""
    from .expansion import layout_for
    from .heads import build_adjacency, log_softmax, masked_softmax

    M = int(rng.integers(1, max_targets + 1))
    k = int(rng.integers(1, max(1, max_nodes // M) + 1))
    layout = layout_for(M, k)
    adj = build_adjacency(layout, variant)
    n = layout.num_nodes
    _, logE = masked_softmax(rng.normal(scale=2.0, size=(n, n)), adj.allowed)
    logP = log_softmax(rng.normal(scale=2.0, size=(layout.L, vocab_size)))
    targets = rng.integers(0, vocab_size, size=M)
    return layout, adj, logP, logE, targets


def dp_check_rows(trials: int, max_nodes: int, max_targets: int, variant: str, seed: int):
    """Yield one result per random lattice: DP vs enumeration plus a logit-gradient check."""
    from .alignment import align, brute_force_loss

    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        layout, adj, logP, logE, targets = random_lattice(rng, max_nodes, max_targets, variant)
        lat = align(logP, logE, targets, layout)
        dp = -lat.logZ
        oracle = brute_force_loss(logP, logE, targets, layout)
        grad_err = _logit_grad_error(logP, logE, targets, lat, adj.allowed)
        yield t, layout.L, int(targets.size), dp, oracle, abs(dp - oracle), grad_err


def _logit_grad_error(logP, logE, targets, lat, allowed, eps: float = 1e-4) -> float:
    """Max relative error of the emission-logit gradient against finite differences.

    A five-point stencil keeps truncation and roundoff near 1e-11, well
    below the tolerance, where a plain central difference would sit at it.
    """
    from .alignment import sa_loss
    from .heads import log_softmax

    counts = lat.emission_counts(logP.shape[1])
    P = np.exp(logP)
    analytic = -(counts - P * counts.sum(axis=1, keepdims=True))
    worst = 0.0
    for u in range(logP.shape[0]):
        for y in range(logP.shape[1]):
            f = []
            for delta in (2 * eps, eps, -eps, -2 * eps):
                z = logP.copy()
                z[u, y] += delta
                f.append(sa_loss(log_softmax(z), logE, targets))
            num = (-f[0] + 8 * f[1] - 8 * f[2] + f[3]) / (12 * eps)
            a = analytic[u, y]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-4))
    return worst


def cmd_dp_check(args) -> int:
    variants = ["dense", "sparse"] if args.variant == "both" else [args.variant]
    rows = ["variant\ttrial\tL\tM\tdp_loss\toracle_loss\tabs_diff\tgrad_max_rel_err"]
    bad = []
    for variant in variants:
        for t, L, M, dp, oracle, diff, gerr in dp_check_rows(
            args.trials, args.max_nodes, args.max_targets, variant, args.seed
        ):
            row = f"{variant}\t{t}\t{L}\t{M}\t{dp:.12f}\t{oracle:.12f}\t{diff:.3e}\t{gerr:.3e}"
            rows.append(row)
            if diff > DP_TOL or gerr > GRAD_TOL:
                bad.append(row)
    _emit(rows, args.out, "dp_check.tsv")
    if bad:
        for row in bad:
            print(f"tolerance breach: {row}", file=sys.stderr)
        return 1
    return 0


def _synthetic_batch(cfg, n: int, seed: int, max_masks: int | None = None):
    from .corpus import generate, sentiment_spec, spec_vocab
    from .trainer import make_batch

    spec = sentiment_spec(count=64, seed=seed)
    vocab = spec_vocab(spec)
    seqs = generate(spec, vocab)
    batch = make_batch(seqs, 1, cfg)[:n]
    if max_masks is not None:
        batch = [_cap_masks(ms, max_masks) for ms in batch]
    return batch, len(vocab)


def _cap_masks(ms, max_masks):
    from .masking import mask_with_draws

    if ms.num_masks <= max_masks:
        return ms
    draws = np.ones(len(ms.original))
    draws[ms.masked_positions[:max_masks]] = 0.0
    return mask_with_draws(ms.original, 0.5, draws)


def cmd_grad_check(args) -> int:
    from . import encoder
    from .trainer import TrainConfig, gradient_check

    cfg = TrainConfig(
        seed=args.seed, batch_size=args.batch, mask_ratio=args.p, expansion=args.k,
        variant=args.variant, mode=args.mode, layers=args.layers, heads=args.heads,
        model_dim=args.dim, ffn_dim=2 * args.dim,
    )
    batch, V = _synthetic_batch(cfg, args.batch, args.seed, max(1, args.max_nodes // args.k))
    enc = cfg.encoder_config(V)
    weights = encoder.init_weights(enc, args.seed, args.init_std)
    err = gradient_check(weights, batch, enc, cfg, args.epsilon, args.coords, args.seed)
    L = max(ms.num_masks for ms in batch) * args.k
    row = f"{args.mode}\t{args.variant}\t{args.layers}\t{args.dim}\t{args.k}\t{L}\t{err:.3e}"
    _emit(["mode\tvariant\tlayers\tdim\tk\tmax_L\tmax_rel_err", row], args.out, "grad_check.tsv")
    if err > args.tol:
        print(f"tolerance breach: {row}", file=sys.stderr)
        return 1
    return 0


def cmd_train(args) -> int:
    from .trainer import TrainConfig, run_training

    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = {}
    if args.mode:
        overrides["mode"] = args.mode
    if args.steps:
        overrides["steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = TrainConfig(**{**cfg.__dict__, **overrides})
    run_training(cfg, args.corpus, args.out, args.resume)
    sys.stdout.write((args.out / "metrics.tsv").read_text())
    return 0


def _load_model(ckpt_dir: Path):
    from .trainer import TrainConfig, load_checkpoint
    from .vocab import Vocabulary

    weights, _, meta = load_checkpoint(ckpt_dir / "checkpoint")
    cfg = TrainConfig(**meta["train_config"])
    vocab = Vocabulary.load(ckpt_dir / "vocab.tsv")
    return weights, cfg, cfg.encoder_config(len(vocab)), vocab


def cmd_entropy(args) -> int:
    from .analysis import distribution_entropy_rows, repeated_entropy_report
    from .corpus import load_corpus
    from .masking import repeat_and_mask
    from .objectives import exlm_predict, mlm_predict
    from .trainer import mask_eval_split

    weights, cfg, enc, vocab = _load_model(args.checkpoint)
    seqs = load_corpus(args.corpus, cfg.tokenizer, vocab)
    rows = ["sample_id\ttoken_idx\tbits"]
    if args.k_rep > 1:
        for sid, seq in enumerate(seqs):
            rs = repeat_and_mask(seq, args.k_rep, cfg.mask_ratio, np.random.default_rng([args.seed, sid]))
            _, probs = mlm_predict(weights, enc, rs.sample)
            report = repeated_entropy_report(rs, probs)
            for tok, bits in zip(np.flatnonzero(rs.fully_masked()), report.per_token_bits):
                rows.append(f"{sid}\t{tok}\t{bits:.6f}")
    else:
        for sid, ms in enumerate(mask_eval_split(seqs, cfg.mask_ratio, args.seed)):
            if cfg.mode == "exlm":
                _, fp = exlm_predict(weights, enc, ms, cfg.expansion, cfg.variant)
                bits = distribution_entropy_rows(fp.heads.P)
                idx = range(1, bits.size + 1)
            else:
                _, probs = mlm_predict(weights, enc, ms)
                bits = distribution_entropy_rows(probs)
                idx = ms.masked_positions
            for i, b in zip(idx, bits):
                rows.append(f"{sid}\t{int(i)}\t{b:.6f}")
    _emit(rows, args.out, "entropy.tsv")
    return 0


def cmd_export_case(args) -> int:
    from .analysis import export_case
    from .masking import mask_with_draws
    from .objectives import exlm_forward
    from .vocab import MASK, TokenSequence

    weights, cfg, enc, vocab = _load_model(args.checkpoint)
    raw = args.text.replace(MASK, f" {MASK} ")
    toks = raw.split() if cfg.tokenizer == "text" else None
    if toks is None:
        raise SystemExit("export-case supports text checkpoints only")
    is_mask = np.array([t == MASK for t in toks])
    if not is_mask.any():
        print(f"error: --text needs at least one {MASK}", file=sys.stderr)
        return 2
    ids = np.array([vocab.id_of(t.lower()) if t != MASK else 0 for t in toks])
    ms = mask_with_draws(TokenSequence(ids), 0.5, np.where(is_mask, 0.0, 1.0))
    fp = exlm_forward(weights, enc, ms, cfg.expansion, cfg.variant)
    export = export_case(fp.heads, fp.layout, vocab, args.top_q, args.edge_min)
    text = export.to_json()
    atomic_write(args.out / "case.json", text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="exlm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    p = add("build-vocab", cmd_build_vocab, "count a corpus into vocab.tsv")
    p.add_argument("--corpus", type=Path, nargs="+", required=True)
    p.add_argument("--mode", choices=["text", "smiles"], default="text")
    p.add_argument("--min-freq", type=int, default=1)

    p = add("tokenize", cmd_tokenize, "tokenize a corpus file (ids when --vocab is given)")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--mode", choices=["text", "smiles"], default="text")
    p.add_argument("--vocab", type=Path)

    p = add("mask-stats", cmd_mask_stats, "Monte Carlo corruption proportion of repeat-then-mask")
    p.add_argument("--p", type=float, nargs="+", required=True)
    p.add_argument("--k", type=int, nargs="+", required=True)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--trials", type=int, default=10000)

    p = add("dp-check", cmd_dp_check, "alignment DP against brute-force enumeration")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--max-nodes", type=int, default=10)
    p.add_argument("--max-targets", type=int, default=4)
    p.add_argument("--variant", choices=["dense", "sparse", "both"], default="dense")

    p = add("grad-check", cmd_grad_check, "analytic model gradients against finite differences")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--max-nodes", type=int, default=8)
    p.add_argument("--p", type=float, default=0.2)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--variant", choices=["dense", "sparse"], default="dense")
    p.add_argument("--mode", choices=["exlm", "mlm"], default="exlm")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--coords", type=int, default=200)
    p.add_argument("--init-std", type=float, default=0.3)
    p.add_argument("--tol", type=float, default=GRAD_TOL)

    p = add("train", cmd_train, "train ExLM or the MLM baseline on corpus files")
    p.set_defaults(seed=None)
    p.add_argument("--corpus", type=Path, nargs="+", required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--mode", choices=["exlm", "mlm"])
    p.add_argument("--steps", type=int)
    p.add_argument("--resume", type=Path, help="checkpoint prefix to continue from")

    p = add("entropy", cmd_entropy, "per-token prediction entropy of a trained model")
    p.add_argument("--checkpoint", type=Path, required=True, help="training output directory")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--k-rep", type=int, default=1)

    p = add("export-case", cmd_export_case, "dump the clone-state DAG for one masked sentence")
    p.add_argument("--checkpoint", type=Path, required=True, help="training output directory")
    p.add_argument("--text", required=True)
    p.add_argument("--top-q", type=int, default=3)
    p.add_argument("--edge-min", type=float, default=0.0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    with _thread_limit():
        try:
            return args.func(args)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2


if __name__ == "__main__":
    sys.exit(main())
