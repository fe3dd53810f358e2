"""Train briefly through the CLI, then export the clone-state DAG of one sentence.

Run: python3 notebooks/06_case_export.py
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

from exlm.corpus import generate_tokens, save_corpus, sentiment_spec

out = Path(tempfile.mkdtemp())
save_corpus(generate_tokens(sentiment_spec(count=2000, seed=0))[0], out / "corpus.txt")
(out / "config.json").write_text(json.dumps({"steps": 150, "expansion": 2, "eval_every": 50}))

# %% The CLI writes config.json, metrics.tsv, vocab.tsv and weights.
exlm = [sys.executable, "-m", "exlm.cli"]
subprocess.run(exlm + ["train", "--corpus", str(out / "corpus.txt"), "--config", str(out / "config.json"),
                       "--out", str(out / "run")], check=True)

# %% Nodes list each clone's top tokens; edges are transition probabilities.
subprocess.run(exlm + ["export-case", "--checkpoint", str(out / "run"), "--text",
                       "this is [MASK] , and i am very [MASK] to see this",
                       "--top-q", "2", "--edge-min", "0.05", "--out", str(out / "case")],
               check=True, stdout=subprocess.DEVNULL)
case = json.loads((out / "case" / "case.json").read_text())
for node in case["nodes"]:
    print(node["label"], [(t["token"], round(t["prob"], 2)) for t in node["top"]])
for edge in case["edges"][:8]:
    print(edge)
