"""The states-alignment DP: a lattice of clone states between BOS and EOS.

Run: python3 notebooks/02_alignment_lattice.py
"""

import numpy as np

from exlm.alignment import align, best_path, brute_force_loss, enumerate_paths, sa_loss
from exlm.experiments import random_dp_instance

# %% Two masks, two clones each. Node 0 is BOS, nodes 1..4 the clones, 5 is EOS.
logP, logE, y = random_dp_instance(num_groups=2, k=2, vocab_size=6, seed=1)
print("allowed edges (dense):\n", np.isfinite(logE).astype(int))

# %% The DP marginalises over every monotone path that emits the targets in order.
lat = align(logP, logE, y)
print("DP loss    ", sa_loss(logP, logE, y))
print("brute force", brute_force_loss(logP, logE, y))
for nodes, score in enumerate_paths(logP, logE, y):
    print("  path through clones", nodes, "prob", round(float(np.exp(score)), 5))

# %% Posterior occupancy: how much of each target's mass sits on each clone.
print("occupancy (targets x clones):\n", lat.occupancy()[:, 1:-1].round(3))

# %% The sparse variant forbids edges inside a clone group, so every path uses
# exactly one clone per mask.
logP, logE, y = random_dp_instance(num_groups=2, k=2, vocab_size=6, seed=1, variant="sparse")
print("allowed edges (sparse):\n", np.isfinite(logE).astype(int))
print("sparse paths:", [nodes for nodes, _ in enumerate_paths(logP, logE, y)])

# %% Viterbi decoding: with targets it aligns them; without, each node emits its argmax.
print("aligned best path:", best_path(logP, logE, y).nodes)
bp = best_path(logP, logE, None, num_targets=2)
print("decoded:", bp.nodes, bp.tokens, "score", round(bp.score, 4), "<= logZ", round(-sa_loss(logP, logE, bp.tokens), 4))
