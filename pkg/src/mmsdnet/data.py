"""Synthetic multi-modal disfluency corpus and its binary file format.

Fluent samples are smooth random walks (video, audio) plus a token stream
without repeats. Stuttered samples carry one or more signatures:

* audio: a block of 3-6 identical consecutive frames (held sound),
* video: a burst of high-frequency alternation (tremor),
* text: a repeated token n-gram.

Each sample draws its base signal and its cue from separate random streams,
so disabling injection leaves every base signal bitwise unchanged.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .attention import ConfigError
from .model import FormatError, ModalityFeatures

__all__ = [
    "CUE_MODES",
    "SynthSpec",
    "generate",
    "longest_run",
    "rule_detector",
    "write_dataset",
    "read_dataset",
    "write_manifest",
    "read_manifest",
    "split",
    "split_indices",
]

CUE_MODES = ("audio_only", "video_only", "both", "correlated")


@dataclass(frozen=True)
class SynthSpec:
    n_samples: int = 200
    stutter_fraction: float = 0.5
    L_v: int = 24
    L_a: int = 24
    L_t: int = 12
    d_v: int = 8
    d_a: int = 8
    vocab: int = 32
    seed: int = 0
    cue_mode: str = "both"
    # correlated mode only: share of stuttered samples whose signature is visual only
    video_only_fraction: float = 0.5
    walk_start: float = 0.0
    walk_step: float = 0.1
    tremor_amplitude: float = 3.0
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if not 0.0 <= self.stutter_fraction <= 1.0:
            raise ConfigError(f"stutter_fraction must lie in [0, 1], got {self.stutter_fraction}")
        if not 0.0 <= self.video_only_fraction <= 1.0:
            raise ConfigError(f"video_only_fraction must lie in [0, 1], got {self.video_only_fraction}")
        if self.cue_mode not in CUE_MODES:
            raise ConfigError(f"cue_mode must be one of {CUE_MODES}, got {self.cue_mode!r}")
        for name in ("L_v", "L_a", "L_t", "d_v", "d_a", "vocab"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if min(self.L_v, self.L_a) < 7:
            raise ConfigError("L_v and L_a must be at least 7 to hold a 6-frame cue")
        if self.L_t < 4:
            raise ConfigError("L_t must be at least 4 to hold a repeated n-gram")
        if self.vocab < self.L_t:
            raise ConfigError(f"vocab={self.vocab} is too small for {self.L_t} distinct tokens")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")


def _walk(rng: np.random.Generator, L: int, d: int, start_scale: float, step: float) -> np.ndarray:
    start = rng.normal(scale=start_scale, size=(1, d))
    steps = rng.normal(scale=step, size=(L - 1, d))
    return np.cumsum(np.vstack([start, steps]), axis=0)


def _hold(frames: np.ndarray, offset: int, r: int) -> np.ndarray:
    """Insert a hold: frame ``offset`` repeated ``r`` times, later frames shifted right."""
    L = frames.shape[0]
    held = np.repeat(frames[offset : offset + 1], r, axis=0)
    return np.vstack([frames[:offset], held, frames[offset + 1 :]])[:L]


def _tremor(frames: np.ndarray, offset: int, r: int, direction: np.ndarray, amp: float) -> np.ndarray:
    out = frames.copy()
    signs = np.where(np.arange(r) % 2 == 0, 1.0, -1.0)
    out[offset : offset + r] += amp * signs[:, None] * direction[None, :]
    return out


def _repeat_ngram(tokens: np.ndarray, offset: int, n: int) -> np.ndarray:
    reps = 3 if n == 1 else 2
    gram = tokens[offset : offset + n]
    return np.concatenate([tokens[:offset], np.tile(gram, reps), tokens[offset + n :]])[: tokens.size]


def _cue_offset(u: float, L: int, r: int) -> int:
    return min(int(u * (L - r + 1)), L - r)


def generate(spec: SynthSpec, inject_cues: bool = True) -> list[ModalityFeatures]:
    """Seed-deterministic synthetic dataset with exactly round(n * fraction) stuttered samples."""
    n_stutter = int(round(spec.n_samples * spec.stutter_fraction))
    label_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xAB1E]))
    stuttered = np.zeros(spec.n_samples, dtype=np.int64)
    stuttered[label_rng.permutation(spec.n_samples)[:n_stutter]] = 1
    # which stuttered samples show only the visual cue (correlated mode)
    visual_only = np.zeros(spec.n_samples, dtype=bool)
    pos = np.flatnonzero(stuttered)
    n_vis = int(round(pos.size * spec.video_only_fraction))
    visual_only[label_rng.permutation(pos)[:n_vis]] = True

    out = []
    for i in range(spec.n_samples):
        base_seq, cue_seq = np.random.SeedSequence([spec.seed, i]).spawn(2)
        base = np.random.default_rng(base_seq)
        video = _walk(base, spec.L_v, spec.d_v, spec.walk_start, spec.walk_step)
        audio = _walk(base, spec.L_a, spec.d_a, spec.walk_start, spec.walk_step)
        tokens = base.choice(spec.vocab, size=spec.L_t, replace=False)
        label = int(stuttered[i])
        if label and inject_cues:
            video, audio, tokens = _inject(spec, np.random.default_rng(cue_seq), video, audio, tokens, visual_only[i])
        out.append(ModalityFeatures(video, audio, tokens, label))
    return out


def _inject(spec, rng, video, audio, tokens, visual_only):
    mode = spec.cue_mode
    r = int(rng.integers(3, 7))
    n = int(rng.integers(1, 3))
    direction = rng.normal(size=spec.d_v)
    direction /= np.linalg.norm(direction)
    if mode == "correlated":
        u = rng.uniform()
        u_v = u_a = u_t = u
    else:
        u_v, u_a, u_t = rng.uniform(size=3)
    if mode in ("video_only", "both", "correlated"):
        video = _tremor(video, _cue_offset(u_v, spec.L_v, r), r, direction, spec.tremor_amplitude)
    if mode == "correlated" and visual_only:
        return video, audio, tokens
    if mode in ("audio_only", "both", "correlated"):
        audio = _hold(audio, _cue_offset(u_a, spec.L_a, r), r)
    if mode in ("both", "correlated"):
        tokens = _repeat_ngram(tokens, _cue_offset(u_t, spec.L_t, 3 * n), n)
    return video, audio, tokens


def longest_run(frames: np.ndarray) -> int:
    """Length of the longest run of bitwise-identical consecutive frames."""
    if frames.shape[0] == 0:
        return 0
    same = (frames[1:] == frames[:-1]).all(axis=1)
    best = cur = 1
    for s in same:
        cur = cur + 1 if s else 1
        best = max(best, cur)
    return best


def rule_detector(sample: ModalityFeatures, min_run: int = 3) -> int:
    """Hand-written baseline: stuttered iff the audio holds a frame ``min_run`` times."""
    return int(longest_run(sample.audio) >= min_run)


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------

_MAGIC = b"MMSDDATA"
_VERSION = 1


def _pack_matrix(arr: np.ndarray) -> bytes:
    L, d = arr.shape
    return struct.pack("<II", L, d) + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def encode_dataset(dataset: Sequence[ModalityFeatures]) -> tuple[bytes, list[int]]:
    """Serialize; also return each sample's starting byte offset."""
    parts = [_MAGIC, struct.pack("<II", _VERSION, len(dataset))]
    pos = sum(len(p) for p in parts)
    offsets = []
    for s in dataset:
        offsets.append(pos)
        chunk = b"".join(
            [
                struct.pack("<B", s.label),
                _pack_matrix(s.video),
                _pack_matrix(s.audio),
                struct.pack("<I", s.tokens.size),
                s.tokens.astype("<u4").tobytes(),
            ]
        )
        parts.append(chunk)
        pos += len(chunk)
    return b"".join(parts), offsets


def decode_dataset(buf: bytes, vocab: int | None = None) -> list[ModalityFeatures]:
    if len(buf) < 8 or buf[:8] != _MAGIC:
        raise FormatError("bad dataset magic", 0)
    pos = 8

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated {what}: need {n} bytes, {len(buf) - pos} left", pos)
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8, "header"))
    if version != _VERSION:
        raise FormatError(f"unsupported dataset version {version}", 8)
    out = []
    for _ in range(count):
        (label,) = struct.unpack("<B", take(1, "label"))
        if label not in (0, 1):
            raise FormatError(f"label byte {label} is not 0 or 1", pos - 1)
        mats = []
        for what in ("video", "audio"):
            L, d = struct.unpack("<II", take(8, f"{what} header"))
            if L == 0 or d == 0:
                raise FormatError(f"empty {what} tensor", pos - 8)
            mats.append(np.frombuffer(take(8 * L * d, f"{what} tensor"), dtype="<f8").reshape(L, d).astype(np.float64))
        (n_tok,) = struct.unpack("<I", take(4, "token count"))
        tok_pos = pos
        tokens = np.frombuffer(take(4 * n_tok, "token list"), dtype="<u4").astype(np.int64)
        if vocab is not None and tokens.size and tokens.max() >= vocab:
            bad = int(np.argmax(tokens >= vocab))
            raise FormatError(f"token id {tokens[bad]} outside vocabulary of size {vocab}", tok_pos + 4 * bad)
        try:
            out.append(ModalityFeatures(mats[0], mats[1], tokens, label))
        except ValueError as e:
            raise FormatError(str(e), tok_pos) from None
    if pos != len(buf):
        raise FormatError("trailing bytes after last sample", pos)
    return out


def write_dataset(dataset: Sequence[ModalityFeatures], path) -> list[int]:
    buf, offsets = encode_dataset(dataset)
    Path(path).write_bytes(buf)
    return offsets


def read_dataset(path, vocab: int | None = None) -> list[ModalityFeatures]:
    return decode_dataset(Path(path).read_bytes(), vocab)


def manifest_path(data_path) -> Path:
    return Path(f"{data_path}.manifest.jsonl")


def write_manifest(path, dataset: Sequence[ModalityFeatures], offsets: Sequence[int], test_ids: set[int]) -> None:
    lines = [
        json.dumps({"id": i, "offset": off, "label": s.label, "split": "test" if i in test_ids else "train"})
        for i, (s, off) in enumerate(zip(dataset, offsets))
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[dict]:
    rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    ids = [r["id"] for r in rows]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate sample ids in manifest {path}")
    offsets = [r["offset"] for r in rows]
    if any(b <= a for a, b in zip(offsets, offsets[1:])):
        raise ValueError(f"manifest offsets are not strictly increasing in {path}")
    if any(r["split"] not in ("train", "test") for r in rows):
        raise ValueError(f"unknown split tag in manifest {path}")
    return rows


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def split_indices(labels: Sequence[int], test_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Label-stratified, seed-deterministic split; index lists are sorted."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    test: list[int] = []
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        k = int(math.floor(idx.size * test_fraction + 0.5))
        test += rng.permutation(idx)[:k].tolist()
    test_set = set(test)
    train = [i for i in range(labels.size) if i not in test_set]
    if not train or not test_set:
        raise ConfigError(f"test_fraction={test_fraction} leaves an empty split for {labels.size} samples")
    return train, sorted(test_set)


def split(dataset: Sequence[ModalityFeatures], test_fraction: float, seed: int = 0):
    train, test = split_indices([s.label for s in dataset], test_fraction, seed)
    return [dataset[i] for i in train], [dataset[i] for i in test]


def spec_from_dict(d: dict) -> SynthSpec:
    known = {f.name for f in fields(SynthSpec)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown data spec keys: {sorted(unknown)}")
    return SynthSpec(**d)
