"""
Checking every gradient against finite differences
==================================================

The autodiff tape is only useful if its gradients are right. The check
perturbs each parameter by ±h, takes the central difference of the loss,
and compares with the tape's value using a relative error with a small
floor on the denominator.
"""

import time

import numpy as np

from mmsdnet import tensor as T
from mmsdnet.gradcheck import finite_diff_check, model_gradient_check
from mmsdnet.model import TOY_CONFIG

rng = np.random.default_rng(0)

###############################################################################
# Small cases first: a sum is exact, and sin should give cos.

print("sum(p):    ", finite_diff_check(lambda p: T.tensor_sum(p["p"]), {"p": rng.normal(size=5)}))
print("sum(sin p):", finite_diff_check(lambda p: T.tensor_sum(T.sin(p["p"])), {"p": rng.normal(size=5)}))

###############################################################################
# Then the full model: three encoders, compression, fusion against the
# embedding matrix, and the causal decoder, all at once, on a two-sample
# cross-entropy loss. About two thousand parameters, two forward passes
# per parameter.

print("toy config:", TOY_CONFIG)
t0 = time.perf_counter()
err = model_gradient_check(TOY_CONFIG, seed=0)
print(f"max relative error {err:.2e} in {time.perf_counter() - t0:.1f} s ->", "PASS" if err < 1e-4 else "FAIL")

###############################################################################
# The step size matters: too large and truncation error dominates, too
# small and cancellation does.

for h in (1e-2, 1e-4, 1e-5, 1e-7):
    e = finite_diff_check(lambda p: T.tensor_sum(T.gelu(p["p"])), {"p": rng.normal(size=8)}, h=h)
    print(f"h={h:g}: gelu max rel err {e:.1e}")
