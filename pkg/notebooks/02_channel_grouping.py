"""
Grouping channels by rank correlation
=====================================

Channels that move together can share one forecasting head. Grouping is
three steps: a Spearman correlation matrix on the training split, a graph
keeping pairs above a threshold, and label propagation over that graph.
"""

import numpy as np

from averagetime.cluster import build_grouping, label_propagation, spearman_matrix, threshold_graph
from averagetime.synth import SynthSpec, generate

# %%
# Build a dataset with two families: four lagged copies of one walk and
# three independent noise channels.
walks = generate(SynthSpec("lagged-copies", 4, 2000, noise_std=0.3, seed=1)).values
noise = generate(SynthSpec("independent-noise", 3, 2000, seed=2)).values
x = np.vstack([walks, noise])

# %%
# Rank correlation is unchanged by any increasing transform of a channel.
corr = spearman_matrix(x)
print(np.round(corr, 2))
print("after exp() on channel 0:", np.allclose(spearman_matrix(np.vstack([np.exp(x[:1]), x[1:]])), corr))

# %%
# Edges require a correlation strictly above the threshold.
for t in (0.95, 0.8, 0.0):
    adj = threshold_graph(corr, t)
    print(f"threshold {t:4.2f}: {int(adj.sum() // 2):2d} edges -> groups {label_propagation(adj).groups}")

# %%
# ``build_grouping`` chains the three steps and keeps the bookkeeping.
res = build_grouping(x, 0.8)
print(res.to_dict(), "sizes", res.group_sizes)
