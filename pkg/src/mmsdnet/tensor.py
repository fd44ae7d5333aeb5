"""Dense float64 tensors with tape-based reverse-mode differentiation.

Tensors are immutable wrappers around read-only ``np.float64`` arrays. While a
:class:`GradientTape` is active, every primitive in this module that touches a
tracked tensor appends a node to the tape; :func:`backward` replays the tape
in exact reverse order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "NumericError",
    "ContractError",
    "Tensor",
    "GradientTape",
    "backward",
    "constant",
    "parameter",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "transpose",
    "softmax",
    "conv1d",
    "linear",
    "layer_norm",
    "gelu",
    "sin",
    "tensor_sum",
    "mean",
    "cross_entropy",
    "concat",
    "stack",
    "take_rows",
    "slice_rows",
    "slice_cols",
    "pad_rows",
    "reshape",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A NaN or infinity was produced or supplied."""


class ContractError(RuntimeError):
    """An operation was used outside its contract."""


class Tensor:
    """Immutable float64 array, optionally tracked by the active tape.

    ``name`` is the parameter path for leaves created by :func:`parameter`.
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite value in tensor{f' {name!r}' if name else ''}")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __mul__ = lambda self, other: mul(self, other)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731


def constant(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


def parameter(data, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

VJP = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    vjp: VJP


@dataclass
class GradientTape:
    """Ordered record of primitives applied during one forward pass.

    Use as a context manager; only one tape may be active at a time.
    After :func:`backward`, ``grads`` maps parameter path to gradient.
    """

    nodes: list[_Node] = field(default_factory=list)
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __enter__(self) -> "GradientTape":
        global _ACTIVE
        if _ACTIVE is not None:
            raise ContractError("a gradient tape is already active")
        _ACTIVE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE
        _ACTIVE = None

    def gradient(self, loss: Tensor) -> dict[str, np.ndarray]:
        return backward(self, loss)


_ACTIVE: GradientTape | None = None


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...], vjp: VJP) -> Tensor:
    tracked = _ACTIVE is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=tracked)
    if tracked:
        _ACTIVE.nodes.append(_Node(out, inputs, vjp))
    return out


def backward(tape: GradientTape, loss: Tensor) -> dict[str, np.ndarray]:
    """Reverse-mode sweep from a scalar ``loss``.

    Returns gradients keyed by parameter path for every named leaf that the
    loss depends on (zeros for named leaves reached by the tape but not the
    loss). Accumulation follows reverse recording order, so results are
    bitwise reproducible.
    """
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss was not produced under this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        for t in node.inputs:
            if t.name is not None and t.requires_grad:
                leaves.setdefault(id(t), t)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    out: dict[str, np.ndarray] = {}
    for key, t in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(t.data)
        if g.shape != t.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {t.shape} for {t.name}")
        if t.name in out:
            out[t.name] = out[t.name] + g
        else:
            out[t.name] = g
    tape.grads = out
    return out


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "add")
    return _record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "sub")
    return _record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "mul")
    return _record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.data * c, (a,), lambda g: (g * c,))


def sin(a: Tensor) -> Tensor:
    return _record(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    u = x.data
    inner = _GELU_C * (u + 0.044715 * u**3)
    t = np.tanh(inner)
    out = 0.5 * u * (1.0 + t)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * u**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * dinner),)

    return _record(out, (x,), vjp)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def tensor_sum(a: Tensor) -> Tensor:
    return _record(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _record(
        np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),)
    )


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product ``a @ b``."""
    a, b = constant(a), constant(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _record(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got {a.shape}")
    return _record(a.data.T, (a,), lambda g: (g.T,))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` over the trailing axis of ``x``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(f"linear: x {x.shape}, W {w.shape}, b {b.shape}")
    xd = x.data
    x2 = xd.reshape(-1, xd.shape[-1])

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        return ((g2 @ w.data.T).reshape(xd.shape), x2.T @ g2, g2.sum(axis=0))

    return _record(xd @ w.data + b.data, (x, w, b), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DimensionError(f"softmax over empty axis {axis} of shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _record(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if d < 1 or gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        gh = g * gain.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record(xhat * gain.data + bias.data, (x, gain, bias), vjp)


def conv1d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded 1-D cross-correlation of ``x`` [L, d] with ``kernel`` [k, d, d_out]."""
    if x.ndim != 2 or kernel.ndim != 3 or kernel.shape[1] != x.shape[1]:
        raise DimensionError(f"conv1d: x {x.shape}, kernel {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ContractError(f"conv1d: stride={stride}, padding={padding}")
    L, d = x.shape
    k, _, d_out = kernel.shape
    Lp = L + 2 * padding
    if k > Lp:
        raise DimensionError(f"conv1d: kernel length {k} exceeds padded input length {Lp}")
    L_out = (Lp - k) // stride + 1
    xp = np.zeros((Lp, d))
    xp[padding : padding + L] = x.data
    idx = np.arange(L_out)[:, None] * stride + np.arange(k)[None, :]
    cols = xp[idx].reshape(L_out, k * d)
    kmat = kernel.data.reshape(k * d, d_out)

    def vjp(g):
        gk = (cols.T @ g).reshape(k, d, d_out)
        gcols = (g @ kmat.T).reshape(L_out, k, d)
        gxp = np.zeros((Lp, d))
        np.add.at(gxp, idx, gcols)
        return gxp[padding : padding + L], gk

    return _record(cols @ kmat, (x, kernel), vjp)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of binary ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape}, labels {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError(f"cross_entropy: labels must be 0 or 1, got {sorted(set(labels.tolist()))}")
    labels = labels.astype(np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    B = logits.shape[0]
    rows = np.arange(B)
    loss = -logp[rows, labels].mean()

    def vjp(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (float(g) / B),)

    return _record(np.asarray(loss), (logits,), vjp)


# ---------------------------------------------------------------------------
# Structural
# ---------------------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [constant(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: {[t.shape for t in tensors]}: {e}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [constant(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: mismatched shapes {sorted(shapes)}")
    return _record(
        np.stack([t.data for t in tensors]),
        tuple(tensors),
        lambda g: tuple(g[i] for i in range(len(tensors))),
    )


def take_rows(table: Tensor, ids: Iterable[int]) -> Tensor:
    """Row lookup ``table[ids]`` (embedding gather)."""
    ids = np.asarray(list(ids), dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"take_rows expects a matrix, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"row id out of range [0, {table.shape[0]})")

    def vjp(g):
        gt = np.zeros(table.shape)
        np.add.at(gt, ids, g)
        return (gt,)

    return _record(table.data[ids], (table,), vjp)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    def vjp(g):
        gx = np.zeros(x.shape)
        gx[start:stop] = g
        return (gx,)

    return _record(x.data[start:stop], (x,), vjp)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    def vjp(g):
        gx = np.zeros(x.shape)
        gx[:, start:stop] = g
        return (gx,)

    return _record(x.data[:, start:stop], (x,), vjp)


def pad_rows(x: Tensor, n_rows: int) -> Tensor:
    """Truncate or right-pad ``x`` with zero rows to exactly ``n_rows`` rows."""
    L = x.shape[0]
    if L >= n_rows:
        return x if L == n_rows else slice_rows(x, 0, n_rows)
    return concat([x, Tensor(np.zeros((n_rows - L,) + x.shape[1:]))], axis=0)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from None
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))
