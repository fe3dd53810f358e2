"""Prediction entropy of ExLM and MLM on a corpus with two equally likely fillings.

When both slots are masked the MLM marginal is a 50/50 mixture (1 bit). ExLM
could in principle give each clone one mode and let the transitions pick the
pair. Takes several minutes. Run: python3 notebooks/05_entropy_multimodality.py
"""

from exlm.experiments import entropy_direction
from exlm.trainer import TrainConfig

cfg = TrainConfig(seed=0, mask_ratio=0.5, steps=1200, variant="sparse", expansion=2, init_std=0.3)
r = entropy_direction(cfg)
print(f"ExLM mean entropy over all clone states {r.exlm_node_bits:.3f} bits")
print(f"ExLM mean entropy over best-path states {r.exlm_path_bits:.3f} bits")
print(f"MLM  mean entropy at masked positions   {r.mlm_bits:.3f} bits")
print(f"accuracy ExLM {r.exlm_acc:.3f}  MLM {r.mlm_acc:.3f}")
