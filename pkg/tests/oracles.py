"""Independent scalar-loop reference implementations used by several tests."""

import math

import numpy as np


def attention_loop(Q, K, V, mask=None):
    """Scalar-loop softmax(QK^T/sqrt(d))V."""
    n_q, d = Q.shape
    n_k, d_v = V.shape
    out = np.zeros((n_q, d_v))
    for i in range(n_q):
        scores = []
        for j in range(n_k):
            if mask is not None and not mask[i][j]:
                scores.append(None)
                continue
            s = 0.0
            for c in range(d):
                s += Q[i, c] * K[j, c]
            scores.append(s / math.sqrt(d))
        m = max(s for s in scores if s is not None)
        w = [0.0 if s is None else math.exp(s - m) for s in scores]
        z = sum(w)
        for j in range(n_k):
            for c in range(d_v):
                out[i, c] += w[j] / z * V[j, c]
    return out


def mha_loop(xq, xk, xv, wq, wk, wv, wo, h, mask=None):
    """Independent per-head computation, concatenated then projected."""
    d = wq.shape[0]
    dk = d // h
    heads = []
    for i in range(h):
        cols = slice(i * dk, (i + 1) * dk)
        heads.append(attention_loop(xq @ wq[:, cols], xk @ wk[:, cols], xv @ wv[:, cols], mask))
    return np.concatenate(heads, axis=1) @ wo
