"""Walk through community detection on a planted synthetic graph.

Run: python demos/communities.py
"""

import numpy as np

from cacl.community import cluster_to_k, encode_users, louvain, modularity
from cacl.encoder import user_input_matrix
from cacl.graph import induce_subgraph, zscore_normalize
from cacl.metrics import entropy_bits
from cacl.pipeline import Model, TrainConfig, pretrain
from cacl.synth import SynthSpec, block_of, generate_synth

spec = SynthSpec()
g = zscore_normalize(generate_synth(spec, np.random.default_rng(0)))
full = induce_subgraph(g, g.user_ids)
ug = full.user_graph()
print(f"{ug.n} users, {ug.edge_count} undirected follow edges")

# Louvain only decides how many communities there are.
part = louvain(ug)
print(f"louvain: k={part.k}, Q={modularity(ug, part):.4f}")
print(f"planted blocks: Q={modularity(ug, block_of(spec)):.4f}")

# The pretrained community encoder decides which edges to merge.
cfg = TrainConfig(pretrain_epochs=50)
model = Model.init(g, cfg, np.random.default_rng(0))
history = pretrain(model, g, cfg, np.random.default_rng(1))
print(f"pretraining L_CA {history[0]['L_CA']:.4f} -> {history[-1]['L_CA']:.4f}")

h = encode_users(model.ca, ug, user_input_matrix(model.enc, full)).value
merged = cluster_to_k(ug, h, part.k)
y = g.labels[g.user_ids]
for c, members in enumerate(merged.members):
    bots = int(y[members].sum())
    print(f"community {c}: {len(members)} users, {bots} bots, label entropy {entropy_bits(y[members]):.3f} bits")
