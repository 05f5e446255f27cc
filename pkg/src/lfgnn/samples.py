"""Per-window feature/graph samples and their on-disk format.

A sample file is::

    b"LFGNN-SAMPLE" | uint32 version | uint64 header length | JSON header
    | features (n, d) | global adjacency (n, n) | local adjacency (n, n)

with every array stored as little-endian float64 in C order.  A directory of
samples carries an ``index.json`` listing the files in order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import _atomic_write
from .errors import ConfigError, CorruptFile, DataError, FormatError, IoError, ShapeError

SAMPLE_MAGIC = b"LFGNN-SAMPLE"
SAMPLE_VERSION = 1
TARGETS = ("arousal", "valence")


@dataclass
class FeatureGraphSample:
    """One window: DE features, global and block-diagonal local adjacency, labels."""

    features: np.ndarray      # (n, d)
    a_global: np.ndarray      # (n, n), A[i, j] = strength i -> j
    a_local: np.ndarray       # (n, n)
    arousal: int
    valence: int
    trial: str = ""
    window: int = 0
    channels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        n = self.features.shape[0]
        for name in ("a_global", "a_local"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != (n, n):
                raise ShapeError(f"{name} has shape {a.shape}, expected {(n, n)}")
            setattr(self, name, a)
        if self.channels and len(self.channels) != n:
            raise ShapeError("one channel label per feature row")

    def label(self, target: str = "arousal") -> int:
        if target not in TARGETS:
            raise ConfigError(f"unknown target {target!r}")
        return int(getattr(self, target))


def encode_sample(s: FeatureGraphSample) -> bytes:
    n, d = s.features.shape
    header = json.dumps({"n": n, "d": d, "arousal": int(s.arousal), "valence": int(s.valence),
                         "trial": s.trial, "window": int(s.window), "channels": list(s.channels)},
                        sort_keys=True).encode()
    body = b"".join(a.astype("<f8").tobytes() for a in (s.features, s.a_global, s.a_local))
    return SAMPLE_MAGIC + struct.pack("<I", SAMPLE_VERSION) + struct.pack("<Q", len(header)) + header + body


def decode_sample(raw: bytes) -> FeatureGraphSample:
    if len(raw) < 24 or raw[:12] != SAMPLE_MAGIC:
        raise FormatError("not a sample file (magic mismatch)")
    (version,) = struct.unpack("<I", raw[12:16])
    if version != SAMPLE_VERSION:
        raise FormatError(f"unsupported sample format version {version}")
    (hlen,) = struct.unpack("<Q", raw[16:24])
    try:
        h = json.loads(raw[24:24 + hlen])
        n, d = int(h["n"]), int(h["d"])
    except (ValueError, KeyError) as exc:
        raise CorruptFile(f"bad sample header: {exc}") from exc
    body = np.frombuffer(raw[24 + hlen:], dtype="<f8")
    if body.size * 8 != len(raw) - 24 - hlen or body.size != n * d + 2 * n * n:
        raise CorruptFile("sample payload size does not match its header")
    body = body.astype(np.float64)
    feats = body[:n * d].reshape(n, d)
    ag = body[n * d:n * d + n * n].reshape(n, n)
    al = body[n * d + n * n:].reshape(n, n)
    return FeatureGraphSample(feats, ag, al, h["arousal"], h["valence"], h["trial"], h["window"],
                              h["channels"])


@dataclass
class SampleSet:
    """Stacked samples, the unit consumed by training."""

    X: np.ndarray              # (N, n, d)
    A_global: np.ndarray       # (N, n, n)
    A_local: np.ndarray        # (N, n, n)
    arousal: np.ndarray        # (N,)
    valence: np.ndarray        # (N,)
    trial: np.ndarray          # (N,) trial ids (str)
    window: np.ndarray         # (N,)
    channels: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.X.shape[0])

    @classmethod
    def from_samples(cls, samples) -> "SampleSet":
        samples = list(samples)
        if not samples:
            raise DataError("no samples")
        return cls(np.stack([s.features for s in samples]),
                   np.stack([s.a_global for s in samples]),
                   np.stack([s.a_local for s in samples]),
                   np.array([s.arousal for s in samples], dtype=np.int64),
                   np.array([s.valence for s in samples], dtype=np.int64),
                   np.array([s.trial for s in samples]),
                   np.array([s.window for s in samples], dtype=np.int64),
                   list(samples[0].channels))

    def samples(self):
        for k in range(len(self)):
            yield FeatureGraphSample(self.X[k], self.A_global[k], self.A_local[k],
                                     int(self.arousal[k]), int(self.valence[k]),
                                     str(self.trial[k]), int(self.window[k]), list(self.channels))

    def labels(self, target: str = "arousal") -> np.ndarray:
        if target not in TARGETS:
            raise ConfigError(f"unknown target {target!r}")
        return getattr(self, target)

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(self.X[idx], self.A_global[idx], self.A_local[idx], self.arousal[idx],
                         self.valence[idx], self.trial[idx], self.window[idx], list(self.channels))

    def with_graphs(self, A_global, A_local) -> "SampleSet":
        return SampleSet(self.X, np.asarray(A_global), np.asarray(A_local), self.arousal,
                         self.valence, self.trial, self.window, list(self.channels))


def save_samples(samples, out_dir) -> list[str]:
    """Write one file per sample plus ``index.json``; returns the file names."""
    out = Path(out_dir)
    names = []
    for k, s in enumerate(samples):
        name = f"sample_{k:05d}.bin"
        _atomic_write(out / name, encode_sample(s))
        names.append(name)
    index = {"format": "lfgnn-sample", "version": SAMPLE_VERSION, "files": names}
    _atomic_write(out / "index.json", (json.dumps(index, indent=1) + "\n").encode())
    return names


def load_samples(in_dir) -> SampleSet:
    d = Path(in_dir)
    try:
        index = json.loads((d / "index.json").read_text())
    except OSError as exc:
        raise IoError(f"no sample index in {d}: {exc}") from exc
    except ValueError as exc:
        raise FormatError(f"bad sample index in {d}: {exc}") from exc
    out = []
    for name in index["files"]:
        try:
            out.append(decode_sample((d / name).read_bytes()))
        except OSError as exc:
            raise IoError(f"cannot read sample {name}: {exc}") from exc
    return SampleSet.from_samples(out)
