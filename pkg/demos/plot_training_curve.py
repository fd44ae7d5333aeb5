"""
Training: warmup, cosine decay and an overfit run
=================================================

The learning rate ramps linearly for the first 2% of steps and then
follows half a cosine down to zero. We draw the schedule and then fit 16
samples until the training set is classified perfectly.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from mmsdnet import data as D
from mmsdnet.model import ModelConfig, init_params
from mmsdnet.training import PRESETS, TrainConfig, lr_at, train

total = 500
cfg = TrainConfig()
lrs = [lr_at(s, total, cfg) for s in range(total + 1)]
print("warmup end:", lrs[10], " midpoint:", lrs[255], " last:", lrs[-1])

###############################################################################
# Overfit: 16 samples, four steps per epoch, 75 epochs.

ds = D.generate(D.SynthSpec(n_samples=16, cue_mode="both", seed=0))
model = ModelConfig()
_, log = train(init_params(model, 0), ds, model, PRESETS["overfit"])
steps = [r for r in log if "f1" not in r]
epochs = [r for r in log if "f1" in r]
print(f"{len(steps)} optimizer steps; final train F1 {epochs[-1]['f1']:.3f}")
print("first epoch with F1 = 1.0:", next(r["epoch"] for r in epochs if r["f1"] == 1.0))

fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
axes[0].plot(lrs)
axes[0].set_title("lr_at, 500 steps")
axes[1].plot([r["step"] for r in steps], [r["loss"] for r in steps])
axes[1].set_title("loss per step")
axes[2].plot([r["epoch"] for r in epochs], [r["f1"] for r in epochs], "o-")
axes[2].set_title("train F1 per epoch")
for ax in axes:
    ax.set_xlabel("step" if ax is not axes[2] else "epoch")
fig.tight_layout()
fig.savefig("training_curve.png", dpi=120)
