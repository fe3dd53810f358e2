"""Mask-state expansion and 2D rotary positions inside the encoder.

Run: python3 notebooks/03_encoder_rope.py
"""

import numpy as np

from exlm.encoder import EncoderConfig, forward, init_weights, rope2d
from exlm.expansion import build_layout, expand_masks
from exlm.masking import mask_with_draws
from exlm.vocab import build_vocab, encode, tokenize

# %% Each [MASK] is replaced by k clone states. Positions are (sequence
# position, clone index); real tokens carry clone index 0.
vocab = build_vocab(["the cat sat on the mat"])
seq = encode(tokenize("the cat sat on the mat", "text"), vocab)
ms = mask_with_draws(seq, 0.3, np.array([0.9, 0.1, 0.9, 0.9, 0.2, 0.9]))
es = expand_masks(ms, k=3)
print("expanded ids:", es.ids)
print("2D positions:\n", es.pos2d.T)
print("lattice groups:", build_layout(es).group_of_node)

# %% Rotary embeddings are rotations, so dot products depend only on offsets.
rng = np.random.default_rng(0)
q, k = rng.normal(size=8), rng.normal(size=8)
a = rope2d(q, (5, 2)) @ rope2d(k, (3, 1))
b = rope2d(q, (12, 4)) @ rope2d(k, (10, 3))
print("shift invariance:", np.isclose(a, b), "norm kept:", np.isclose(np.linalg.norm(rope2d(q, (7, 3))), np.linalg.norm(q)))

# %% One forward pass through a small pre-norm encoder.
cfg = EncoderConfig(layers=2, heads=2, model_dim=16, ffn_dim=32, vocab_size=len(vocab))
H, _ = forward(es.ids, es.pos2d, init_weights(cfg, seed=0, std=0.3), cfg)
print("hidden states:", H.shape)
