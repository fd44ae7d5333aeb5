"""
Attention, masks and positional encodings
=========================================

Scaled dot-product attention turns query/key similarities into convex
weights over value rows. Here we look at the weights directly, at what a
causal mask does to them, and at the sinusoidal position table that is
added before every transformer stack.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from mmsdnet import tensor as T
from mmsdnet.attention import causal_mask, positional_encoding, scaled_dot_attention
from mmsdnet.tensor import Tensor

rng = np.random.default_rng(0)

# Six positions of width 8; queries and keys share the sequence.
x = rng.normal(size=(6, 8))
scores = x @ x.T / np.sqrt(8)
weights = T.softmax(Tensor(scores), axis=1).data
masked = T.softmax(Tensor(np.where(causal_mask(6), scores, -1e30)), axis=1).data
print("row sums, unmasked:", weights.sum(axis=1).round(12))
print("row sums, causal:  ", masked.sum(axis=1).round(12))

###############################################################################
# The masked weights are lower triangular: position i only mixes 0..i.

fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
for ax, w, title in zip(axes, (weights, masked), ("full", "causal")):
    ax.imshow(w, cmap="viridis", vmin=0, vmax=1)
    ax.set_title(f"attention weights ({title})")
    ax.set_xlabel("key")
    ax.set_ylabel("query")
fig.tight_layout()
fig.savefig("attention_weights.png", dpi=120)

###############################################################################
# Outputs are convex combinations of the value rows, so they never leave
# the per-column range of V.

V = rng.normal(size=(6, 3))
out = scaled_dot_attention(Tensor(x), Tensor(x), Tensor(V), causal_mask(6)).data
print("outputs inside value envelope:", bool(((out >= V.min(0)) & (out <= V.max(0))).all()))

###############################################################################
# Position table: even columns are sines, odd columns cosines, with
# wavelengths growing geometrically across the width.

pe = positional_encoding(64, 32)
print("PE(1, 0) =", pe[1, 0], "  sin(1) =", np.sin(1.0))
fig, ax = plt.subplots(figsize=(6, 4))
ax.imshow(pe, aspect="auto", cmap="RdBu", vmin=-1, vmax=1)
ax.set_xlabel("dimension")
ax.set_ylabel("position")
ax.set_title("sinusoidal positional encoding")
fig.savefig("positional_encoding.png", dpi=120)
