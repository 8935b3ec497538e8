"""The community-aware contrastive loss on hand-sized inputs.

Run: python demos/contrastive_toy.py
"""

import math

import numpy as np

from cacl.contrast import ContrastiveConfig, contrastive_node_loss, total_loss

# anchor (human) and a bot in subgraph alpha, one human in the matched subgraph beta
u = np.array([[1.0, 0.0]])
za, zb = np.repeat(u, 2, axis=0), u.copy()
ya, yb = np.array([0, 1]), np.array([0])

print("all embeddings identical:")
for tau in (0.07, 0.5, 1.0):
    loss = contrastive_node_loss(za, za, zb, zb, ya, yb, 0, ContrastiveConfig(temperature=tau))
    print(f"  tau={tau:<4}  loss={loss:.6f}  (-log 2/3 = {-math.log(2 / 3):.6f})")

print("rotating the bot away from the anchor lowers the loss:")
for angle in (0, 30, 60, 90, 180):
    t = math.radians(angle)
    za2 = np.array([[1.0, 0.0], [math.cos(t), math.sin(t)]])
    loss = contrastive_node_loss(za2, za2, zb, zb, ya, yb, 0, ContrastiveConfig(temperature=0.5))
    print(f"  angle {angle:3d}  loss={loss:.4f}")

lc, lk = -math.log(2 / 3), math.log(2)
print(f"combined with a uniform classifier at lambda=0.9: {total_loss(lc, lk, ContrastiveConfig(lam=0.9)):.6f}")
