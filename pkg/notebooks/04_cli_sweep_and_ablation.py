"""
Driving experiments from a config file
======================================

Everything the library does is also reachable through ``avgtime``. This
script writes a dataset and a config into a scratch directory and runs a
threshold sweep and the averaging ablation through the CLI entry point.
"""

import csv
import json
import tempfile
from pathlib import Path

from averagetime.cli import main

work = Path(tempfile.mkdtemp(prefix="avgtime-demo-"))

# %%
main(["synth", "--kind", "lagged-copies", "--channels", "6", "--length", "1500",
      "--seed", "4", "-o", str(work / "data.csv")])
config = {
    "dataset_path": "data.csv",
    "output_dir": "runs",
    "lookback": 48,
    "horizon": 24,
    "model": {"n_transformer_layers": 1, "d_model": 16, "n_heads": 2},
    "train": {"max_epochs": 5, "batch_size": 64, "seed": 0},
}
(work / "config.json").write_text(json.dumps(config, indent=2))

# %%
# Lower thresholds admit more edges, so groups tend to merge and the head
# count falls.
main(["sweep", "-c", str(work / "config.json"), "--axis", "threshold", "--values", "1.0,0.9,0.6"])
with open(work / "runs" / "sweep.csv") as fh:
    for row in csv.DictReader(fh):
        print(row["value"], row["group_count"], row["parameter_count"], row["mse"])

# %%
# The ablation trains the head-only model and the averaged model with the
# same seed and reports the relative change in test error.
main(["ablation", "-c", str(work / "config.json")])
print(json.loads((work / "runs" / "ablation.json").read_text())["improvement_pct"])
print("artifacts in", work)
