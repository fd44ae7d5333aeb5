"""
Does seeing the speaker help?
=============================

In ``correlated`` data half of the stuttered samples show the disfluency
only on video. An audio-only model cannot see those, so the full model
should beat it. Each ablation zeroes the unused channels instead of
removing them, so every model has the same architecture and parameters.

This uses the ``ablation`` training preset on 300 samples and takes a
couple of minutes on one core.
"""

from mmsdnet import data as D
from mmsdnet.cli import run_ablation
from mmsdnet.model import ModelConfig
from mmsdnet.training import PRESETS

ds = D.generate(D.SynthSpec(n_samples=300, cue_mode="correlated", seed=0))
train_set, test_set = D.split(ds, 1 / 3, seed=0)
print(f"train {len(train_set)}  test {len(test_set)}")

reports = run_ablation(train_set, test_set, ModelConfig(), PRESETS["ablation"])

###############################################################################
# Test-set results, printed as percentages.

for name, rep in reports.items():
    print(f"{name:<11} {rep.table_row()}")
gain = reports["full"].f1 - reports["audio-only"].f1
print(f"full minus audio-only F1: {100 * gain:+.2f} points")
