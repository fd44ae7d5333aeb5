"""Forward pass: modality encoders, compression, fusion with E, masked decoder."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .attention import (
    AttentionHeads,
    ConfigError,
    causal_mask,
    multi_head_attention,
    positional_encoding,
    split_heads_attention,
)
from .tensor import DimensionError, Tensor

MODALITIES = ("video", "audio", "text")

__all__ = [
    "MODALITIES",
    "ModelConfig",
    "TOY_CONFIG",
    "random_sample",
    "ModalityFeatures",
    "ParameterStore",
    "FormatError",
    "param_specs",
    "init_params",
    "encode_modality",
    "compress_project",
    "fuse_modality",
    "assemble_sequence",
    "decode_classify",
    "forward",
    "forward_trace",
    "predict_proba",
]


class FormatError(ValueError):
    """Malformed binary file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ModelConfig:
    d_v: int = 8
    d_a: int = 8
    d_t: int = 16
    L_v: int = 24
    L_a: int = 24
    L_t: int = 12
    L_prime: int = 8
    d_e: int = 16
    vocab: int = 32
    n_enc_layers: int = 1
    n_dec_layers: int = 1
    h: int = 2
    d_ff: int = 32
    max_total_len: int = 512
    fusion_heads: int = 1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            minimum = 0 if f.name in ("n_enc_layers", "n_dec_layers") else 1
            if not isinstance(v, int) or v < minimum:
                raise ConfigError(f"{f.name} must be an integer >= {minimum}, got {v!r}")
        if self.L_prime >= min(self.L_v, self.L_a, self.L_t):
            raise ConfigError(f"L_prime={self.L_prime} must be smaller than L_v, L_a and L_t")
        if 3 * self.L_prime + self.L_t > self.max_total_len:
            raise ConfigError(
                f"3*L_prime + L_t = {3 * self.L_prime + self.L_t} exceeds max_total_len={self.max_total_len}"
            )
        if self.d_t != self.d_e:
            raise ConfigError(f"d_t={self.d_t} must equal d_e={self.d_e}: text is encoded from E")
        for name in ("d_v", "d_a", "d_e"):
            d = getattr(self, name)
            if d % 2 or d % self.h:
                raise ConfigError(f"{name}={d} must be even and divisible by h={self.h}")
        if self.d_e % self.fusion_heads:
            raise ConfigError(f"d_e={self.d_e} is not divisible by fusion_heads={self.fusion_heads}")

    def width(self, which: str) -> int:
        return {"video": self.d_v, "audio": self.d_a, "text": self.d_t}[which]

    def max_len(self, which: str) -> int:
        return {"video": self.L_v, "audio": self.L_a, "text": self.L_t}[which]

    def stride(self, which: str) -> int:
        """Conv stride (and kernel length) that compresses ``max_len`` to at least L'."""
        return self.max_len(which) // self.L_prime

    @property
    def seq_len(self) -> int:
        return 3 * self.L_prime + self.L_t

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# Smallest configuration used for end-to-end gradient verification.
TOY_CONFIG = ModelConfig(
    d_v=4, d_a=4, d_t=8, d_e=8, L_v=6, L_a=6, L_t=5, L_prime=3, vocab=11, h=2, d_ff=8,
    n_enc_layers=1, n_dec_layers=1,
)


@dataclass(frozen=True)
class ModalityFeatures:
    video: np.ndarray
    audio: np.ndarray
    tokens: np.ndarray
    label: int

    def __post_init__(self):
        object.__setattr__(self, "video", np.asarray(self.video, dtype=np.float64))
        object.__setattr__(self, "audio", np.asarray(self.audio, dtype=np.float64))
        object.__setattr__(self, "tokens", np.asarray(self.tokens, dtype=np.int64))
        for name in ("video", "audio"):
            a = getattr(self, name)
            if a.ndim != 2 or a.shape[0] < 1:
                raise ValueError(f"{name} must be a non-empty [L, d] array, got shape {a.shape}")
        if self.tokens.ndim != 1 or self.tokens.size < 1:
            raise ValueError("token sequence must be non-empty and one-dimensional")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")

    def validate(self, config: ModelConfig) -> None:
        for which, arr in (("video", self.video), ("audio", self.audio)):
            if arr.shape[1] != config.width(which):
                raise ConfigError(f"{which} width {arr.shape[1]} != configured {config.width(which)}")
            if arr.shape[0] > config.max_len(which):
                raise ValueError(f"{which} length {arr.shape[0]} exceeds {config.max_len(which)}")
        if self.tokens.size > config.L_t:
            raise ValueError(f"{self.tokens.size} tokens exceed L_t={config.L_t}")
        if self.tokens.min() < 0 or self.tokens.max() >= config.vocab:
            raise ValueError(f"token id out of range [0, {config.vocab})")

    def replace(self, **changes) -> "ModalityFeatures":
        d = {"video": self.video, "audio": self.audio, "tokens": self.tokens, "label": self.label}
        d.update(changes)
        return ModalityFeatures(**d)

    def __eq__(self, other):
        if not isinstance(other, ModalityFeatures):
            return NotImplemented
        return (
            self.label == other.label
            and _bitwise_equal(self.video, other.video)
            and _bitwise_equal(self.audio, other.audio)
            and np.array_equal(self.tokens, other.tokens)
        )

    __hash__ = None


def _bitwise_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.tobytes() == b.tobytes()


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def _block_specs(prefix: str, d: int, d_ff: int):
    return [
        (f"{prefix}.ln1.g", (d,), "gain"),
        (f"{prefix}.ln1.b", (d,), "bias"),
        (f"{prefix}.attn.w_q", (d, d), "weight"),
        (f"{prefix}.attn.w_k", (d, d), "weight"),
        (f"{prefix}.attn.w_v", (d, d), "weight"),
        (f"{prefix}.attn.w_o", (d, d), "weight"),
        (f"{prefix}.ln2.g", (d,), "gain"),
        (f"{prefix}.ln2.b", (d,), "bias"),
        (f"{prefix}.ff.w1", (d, d_ff), "weight"),
        (f"{prefix}.ff.b1", (d_ff,), "bias"),
        (f"{prefix}.ff.w2", (d_ff, d), "weight"),
        (f"{prefix}.ff.b2", (d,), "bias"),
    ]


def param_specs(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Every parameter as ``(path, shape, kind)`` in canonical order."""
    specs = []
    for m in MODALITIES:
        d = config.width(m)
        for i in range(config.n_enc_layers):
            specs += _block_specs(f"enc.{m}.{i}", d, config.d_ff)
        s = config.stride(m)
        specs += [
            (f"compress.{m}.conv", (s, d, d), "weight"),
            (f"compress.{m}.w", (d, config.d_e), "weight"),
            (f"compress.{m}.b", (config.d_e,), "bias"),
        ]
    specs.append(("embed", (config.vocab, config.d_e), "weight"))
    for i in range(config.n_dec_layers):
        specs += _block_specs(f"dec.{i}", config.d_e, config.d_ff)
    specs += [
        ("dec.ln_f.g", (config.d_e,), "gain"),
        ("dec.ln_f.b", (config.d_e,), "bias"),
        ("head.w", (config.d_e, 2), "weight"),
        ("head.b", (2,), "bias"),
    ]
    return specs


_MAGIC = b"MMSDPARM"
_VERSION = 1


class ParameterStore(dict):
    """Path-keyed float64 parameter arrays."""

    def validate(self, config: ModelConfig) -> None:
        specs = {p: shape for p, shape, _ in param_specs(config)}
        missing = set(specs) - set(self)
        extra = set(self) - set(specs)
        if missing or extra:
            raise ConfigError(f"parameter paths differ from config: missing={sorted(missing)}, extra={sorted(extra)}")
        for p, shape in specs.items():
            if self[p].shape != shape:
                raise ConfigError(f"{p} has shape {self[p].shape}, expected {shape}")

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: v.copy() for k, v in self.items()})

    def as_tensors(self) -> dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self.items()}

    def num_values(self) -> int:
        return sum(v.size for v in self.values())

    def to_bytes(self) -> bytes:
        out = [_MAGIC, struct.pack("<II", _VERSION, len(self))]
        for path, arr in self.items():
            name = path.encode("utf-8")
            arr = np.asarray(arr, dtype=np.float64)
            out.append(struct.pack("<H", len(name)))
            out.append(name)
            out.append(struct.pack("<B", arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(arr.astype("<f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ParameterStore":
        if buf[:8] != _MAGIC:
            raise FormatError("bad checkpoint magic", 0)
        pos = 8

        def take(n):
            nonlocal pos
            if pos + n > len(buf):
                raise FormatError(f"truncated checkpoint: need {n} bytes", pos)
            chunk = buf[pos : pos + n]
            pos += n
            return chunk

        version, count = struct.unpack("<II", take(8))
        if version != _VERSION:
            raise FormatError(f"unsupported checkpoint version {version}", 8)
        store = cls()
        for _ in range(count):
            at = pos
            (n,) = struct.unpack("<H", take(2))
            path = take(n).decode("utf-8")
            if path in store:
                raise FormatError(f"duplicate parameter path {path!r}", at)
            (rank,) = struct.unpack("<B", take(1))
            shape = struct.unpack(f"<{rank}I", take(4 * rank))
            size = math.prod(shape)
            arr = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
            store[path] = arr
        if pos != len(buf):
            raise FormatError("trailing bytes after last parameter", pos)
        return store

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ParameterStore":
        return cls.from_bytes(Path(path).read_bytes())


def init_params(config: ModelConfig, seed: int = 0) -> ParameterStore:
    """Glorot-uniform weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    for path, shape, kind in param_specs(config):
        if kind == "bias":
            store[path] = np.zeros(shape)
        elif kind == "gain":
            store[path] = np.ones(shape)
        else:
            receptive = math.prod(shape[:-2]) if len(shape) > 2 else 1
            fan_in, fan_out = shape[-2] * receptive, shape[-1] * receptive
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            store[path] = rng.uniform(-limit, limit, size=shape)
    return store


def save_checkpoint(path, params: ParameterStore, config: ModelConfig) -> None:
    """Write the binary parameter file plus a ``.config.json`` sidecar."""
    params.save(path)
    Path(f"{path}.config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")


def load_checkpoint(path) -> tuple[ParameterStore, ModelConfig]:
    params = ParameterStore.load(path)
    config = ModelConfig.from_dict(json.loads(Path(f"{path}.config.json").read_text()))
    params.validate(config)
    return params, config


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

_PE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _pe(n: int, d: int) -> np.ndarray:
    key = (n, d)
    if key not in _PE_CACHE:
        table = positional_encoding(n, d)
        table.flags.writeable = False
        _PE_CACHE[key] = table
    return _PE_CACHE[key]


def _heads(p: Mapping[str, Tensor], prefix: str, h: int) -> AttentionHeads:
    return AttentionHeads(h, p[f"{prefix}.w_q"], p[f"{prefix}.w_k"], p[f"{prefix}.w_v"], p[f"{prefix}.w_o"])


def _block(x: Tensor, p: Mapping[str, Tensor], prefix: str, h: int, mask=None) -> Tensor:
    """Pre-norm residual block: x + MHA(LN(x)), then x + FF(LN(x))."""
    y = T.layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    x = T.add(x, multi_head_attention(y, y, y, _heads(p, f"{prefix}.attn", h), mask))
    y = T.layer_norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    y = T.linear(T.gelu(T.linear(y, p[f"{prefix}.ff.w1"], p[f"{prefix}.ff.b1"])), p[f"{prefix}.ff.w2"], p[f"{prefix}.ff.b2"])
    return T.add(x, y)


def _tensors(params) -> Mapping[str, Tensor]:
    if isinstance(params, ParameterStore):
        return params.as_tensors()
    return params


def encode_modality(
    x: Tensor, which: str, params, config: ModelConfig, use_pe: bool = True
) -> Tensor:
    """Transformer encoder for one modality; ``x`` is ``[L, d_raw]`` (embedded tokens for text)."""
    p = _tensors(params)
    d = config.width(which)
    if x.ndim != 2 or x.shape[1] != d:
        raise ConfigError(f"{which} input has shape {x.shape}, expected (*, {d})")
    if use_pe:
        x = T.add(x, _pe(x.shape[0], d))
    for i in range(config.n_enc_layers):
        x = _block(x, p, f"enc.{which}.{i}", config.h)
    return x


def compress_project(h: Tensor, which: str, params, config: ModelConfig) -> Tensor:
    """Linear(Conv1D(h)) to exactly ``[L', d_e]``.

    The conv uses non-overlapping windows (kernel = stride = L_max // L');
    its output is truncated or zero-padded on the right to L' rows.
    """
    p = _tensors(params)
    kernel = p[f"compress.{which}.conv"]
    k = kernel.shape[0]
    if h.shape[0] < k:
        raise ValueError(f"{which} sequence of length {h.shape[0]} is shorter than the kernel ({k})")
    c = T.pad_rows(T.conv1d(h, kernel, stride=k), config.L_prime)
    return T.linear(c, p[f"compress.{which}.w"], p[f"compress.{which}.b"])


def fuse_modality(h_prime: Tensor, E: Tensor, heads: int = 1) -> Tensor:
    """Attn(h', E, E): each output row is a convex combination of E's rows."""
    if E.ndim != 2 or E.shape[0] == 0:
        raise ConfigError("embedding matrix must have at least one row")
    if h_prime.shape[1] != E.shape[1]:
        raise DimensionError(f"modality width {h_prime.shape[1]} != embedding width {E.shape[1]}")
    return split_heads_attention(h_prime, E, E, heads)


def assemble_sequence(
    h_v: Tensor, h_a: Tensor, h_t: Tensor, tokens: Sequence[int], E: Tensor, max_total_len: int = 512
) -> Tensor:
    """[h_v : h_a : h_t : Embed(tokens)] along the length axis."""
    n = h_v.shape[0] + h_a.shape[0] + h_t.shape[0] + len(tokens)
    if n > max_total_len:
        raise ValueError(f"sequence length {n} exceeds the cap of {max_total_len}")
    return T.concat([h_v, h_a, h_t, T.take_rows(E, tokens)], axis=0)


def decode_classify(x: Tensor, params, config: ModelConfig) -> Tensor:
    """Causal decoder stack; the final position's state feeds a 2-way linear head."""
    p = _tensors(params)
    n, d = x.shape
    if n < 1 or d != config.d_e:
        raise DimensionError(f"decoder input has shape {x.shape}, expected (N>=1, {config.d_e})")
    x = T.add(x, _pe(n, d))
    mask = causal_mask(n)
    for i in range(config.n_dec_layers):
        x = _block(x, p, f"dec.{i}", config.h, mask)
    last = T.slice_rows(x, n - 1, n)
    last = T.layer_norm(last, p["dec.ln_f.g"], p["dec.ln_f.b"])
    logits = T.linear(last, p["head.w"], p["head.b"])
    return T.reshape(logits, (2,))


def _expect(t: Tensor, shape: tuple[int, ...], stage: str) -> None:
    if t.shape != shape:
        raise DimensionError(f"{stage}: got shape {t.shape}, expected {shape}")


def forward_trace(sample: ModalityFeatures, params, config: ModelConfig) -> dict[str, Tensor]:
    """Forward pass returning every named intermediate (``logits`` included)."""
    p = _tensors(params)
    sample.validate(config)
    E = p["embed"]
    trace: dict[str, Tensor] = {}
    raw = {
        "video": Tensor(sample.video),
        "audio": Tensor(sample.audio),
        "text": T.take_rows(E, sample.tokens),
    }
    for m in MODALITIES:
        x = raw[m]
        h = encode_modality(x, m, p, config)
        _expect(h, (x.shape[0], config.width(m)), f"{m} encoder")
        hp = compress_project(h, m, p, config)
        _expect(hp, (config.L_prime, config.d_e), f"{m} compression")
        ha = fuse_modality(hp, E, config.fusion_heads)
        _expect(ha, (config.L_prime, config.d_e), f"{m} fusion")
        trace[f"h_{m}"], trace[f"hp_{m}"], trace[f"ha_{m}"] = h, hp, ha
    x = assemble_sequence(
        trace["ha_video"], trace["ha_audio"], trace["ha_text"], sample.tokens, E, config.max_total_len
    )
    _expect(x, (3 * config.L_prime + sample.tokens.size, config.d_e), "assembly")
    trace["x"] = x
    logits = decode_classify(x, p, config)
    _expect(logits, (2,), "decoder head")
    trace["logits"] = logits
    return trace


def forward(sample: ModalityFeatures, params, config: ModelConfig) -> Tensor:
    """Two-class logits for one sample."""
    return forward_trace(sample, params, config)["logits"]


def predict_proba(sample: ModalityFeatures, params, config: ModelConfig) -> float:
    """Probability of the stuttered class."""
    z = forward(sample, params, config).data
    e = np.exp(z - z.max())
    return float(e[1] / e.sum())


def random_sample(config: ModelConfig, rng: np.random.Generator, label: int = 1) -> ModalityFeatures:
    """Gaussian features and uniform tokens at the configured maximum lengths."""
    return ModalityFeatures(
        rng.normal(size=(config.L_v, config.d_v)),
        rng.normal(size=(config.L_a, config.d_a)),
        rng.integers(0, config.vocab, size=config.L_t),
        label,
    )
