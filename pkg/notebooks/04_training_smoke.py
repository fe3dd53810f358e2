"""Training ExLM and the MLM baseline on a correlated two-slot corpus.

Takes a few minutes on one core. Run: python3 notebooks/04_training_smoke.py
"""

from exlm.corpus import generate_tokens, sentiment_spec
from exlm.experiments import smoke_training
from exlm.trainer import TrainConfig

# %% Templates whose first slot filler determines the second one.
spec = sentiment_spec(count=6000, seed=0)
for toks in generate_tokens(spec)[0][:3]:
    print(" ".join(toks))

# %% 200 steps of each objective with the default configuration.
res = smoke_training(TrainConfig(seed=0), count=6000, eval_size=500)
print(f"ExLM loss {res.first_loss:.3f} -> {res.last_loss:.3f} ({100 * res.loss_reduction:.0f}% lower)")
for row in res.exlm.metrics:
    print("exlm", row.tsv())
for row in res.mlm.metrics:
    print("mlm ", row.tsv())
print(f"held-out best-path recovery {res.recovery:.3f}; wall {res.seconds:.0f}s")
