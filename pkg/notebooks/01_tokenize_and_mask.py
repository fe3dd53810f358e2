"""Tokenizing text and SMILES, then repeat-then-mask corruption statistics.

Run: python3 notebooks/01_tokenize_and_mask.py
"""

import numpy as np

from exlm.masking import corruption_trials, expected_corruption, repeat_and_mask
from exlm.vocab import build_vocab, decode, encode, tokenize

# %% Two tokenizers: whitespace text and a regular expression for SMILES.
# Bracket atoms, two-letter halogens and ring-bond labels stay whole.
print(tokenize("the movie was great .", "text"))
print(tokenize("CC(=O)Oc1ccccc1C(=O)O", "smiles"))
print(tokenize("[NH4+].Cl%12Br", "smiles"))

# %% A vocabulary reserves the special tokens first, then counts the corpus.
corpus = ["CCO", "c1ccccc1", "CC(=O)O", "ClCCBr"]
vocab = build_vocab(corpus, mode="smiles")
seq = encode(tokenize("CC(=O)O", "smiles"), vocab, "smiles")
print(len(vocab), seq.ids, decode(seq, vocab))

# %% Repeat each token k times, then mask each copy independently with rate p.
# A base token is fully corrupted only when every copy is masked.
rs = repeat_and_mask(seq, k_rep=2, p=0.5, rng=np.random.default_rng(0))
print("corrupted ids:", rs.sample.corrupted.ids)
print("fully masked base tokens:", rs.fully_masked())

# %% The corrupted fraction concentrates around p**k.
for p, k in [(0.15, 1), (0.387, 2), (0.622, 4), (0.789, 8)]:
    s = corruption_trials(p, k, n=512, trials=2000, seed=0)
    mean, var = expected_corruption(p, k, 512)
    print(f"p={p:<5} k={k}  mean {s.mean():.4f} (theory {mean:.4f})  std {s.std():.4f} (theory {np.sqrt(var):.4f})")
