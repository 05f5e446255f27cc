"""Dataset formats, loaders and the synthetic generators used as oracles.

Trial file layout (all integers little-endian)::

    bytes 0-11   b"LFGNN-TRIAL\\0"
    bytes 12-15  uint32 format version (1)
    bytes 16-23  uint64 length H of the JSON header
    next H bytes UTF-8 JSON: {"channels": [...], "rate": float, "samples": int}
    remainder    float64 little-endian payload, channel-major (n * samples values)

A CSV fallback holds one column per channel (header row = channel labels)
and one row per sample; its sampling rate comes from the manifest.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptFile, FormatError, IoError, StabilityError
from .numerics import TimeSeriesSet
from .rng import CounterRNG

TRIAL_MAGIC = b"LFGNN-TRIAL\x00"
TRIAL_VERSION = 1
BURN_IN = 1000


@dataclass
class TrialEntry:
    id: str
    file: str
    duration: float
    arousal: int
    valence: int


@dataclass
class DatasetManifest:
    subject: str
    channels: list[str]
    rate: float
    trials: list[TrialEntry]
    root: Path = field(default=Path("."), repr=False, compare=False)

    def validate(self, check_files: bool = True) -> None:
        if len(set(self.channels)) != len(self.channels):
            raise ConfigError("channel labels must be unique")
        if self.rate <= 0:
            raise ConfigError("sampling rate must be positive")
        for t in self.trials:
            if t.arousal not in (0, 1) or t.valence not in (0, 1):
                raise ConfigError(f"trial {t.id}: labels must be binary")
            if check_files and not (self.root / t.file).exists():
                raise IoError(f"trial file missing: {self.root / t.file}")

    def path_of(self, trial: TrialEntry) -> Path:
        return self.root / trial.file

    def to_json(self) -> str:
        d = {"subject": self.subject, "channels": self.channels, "rate": self.rate,
             "trials": [asdict(t) for t in self.trials]}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def save_manifest(manifest: DatasetManifest, path) -> None:
    _atomic_write(Path(path), manifest.to_json().encode())


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest {path} is not valid JSON: {exc}") from exc
    try:
        trials = [TrialEntry(str(t["id"]), t["file"], float(t["duration"]),
                             int(t["arousal"]), int(t["valence"])) for t in d["trials"]]
        m = DatasetManifest(str(d["subject"]), list(d["channels"]), float(d["rate"]), trials,
                            root=path.parent)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"manifest {path} is missing fields: {exc}") from exc
    m.validate(check_files)
    return m


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise IoError(f"cannot write {path}: {exc}") from exc


def encode_trial(X: TimeSeriesSet) -> bytes:
    header = json.dumps({"channels": list(X.labels), "rate": float(X.rate),
                         "samples": int(X.n_samples)}, sort_keys=True).encode()
    return (TRIAL_MAGIC + struct.pack("<I", TRIAL_VERSION) + struct.pack("<Q", len(header))
            + header + X.data.astype("<f8").tobytes())


def decode_trial(raw: bytes) -> TimeSeriesSet:
    if len(raw) < 24 or raw[:12] != TRIAL_MAGIC:
        raise FormatError("not a trial file (magic mismatch)")
    (version,) = struct.unpack("<I", raw[12:16])
    if version != TRIAL_VERSION:
        raise FormatError(f"unsupported trial format version {version}")
    (hlen,) = struct.unpack("<Q", raw[16:24])
    if len(raw) < 24 + hlen:
        raise CorruptFile("truncated header")
    try:
        header = json.loads(raw[24:24 + hlen])
        channels, rate, samples = header["channels"], float(header["rate"]), int(header["samples"])
    except (ValueError, KeyError) as exc:
        raise CorruptFile(f"bad trial header: {exc}") from exc
    payload = raw[24 + hlen:]
    expected = 8 * len(channels) * samples
    if len(payload) != expected:
        raise CorruptFile(f"payload has {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype="<f8").reshape(len(channels), samples).astype(np.float64)
    return TimeSeriesSet(data, rate, list(channels))


def save_trial(X: TimeSeriesSet, path) -> None:
    _atomic_write(Path(path), encode_trial(X))


def save_trial_csv(X: TimeSeriesSet, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(X.labels)
        for row in X.data.T:
            w.writerow([repr(float(v)) for v in row])


def load_trial(path, manifest: DatasetManifest | None = None, rate: float | None = None) -> TimeSeriesSet:
    """Read a binary or CSV trial and check it against ``manifest``.

    CSV files carry no rate; it comes from ``manifest`` or ``rate``.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read trial {path}: {exc}") from exc
    if path.suffix.lower() == ".csv":
        if manifest is None and rate is None:
            raise ConfigError("CSV trials need a manifest or an explicit sampling rate")
        rate = manifest.rate if manifest is not None else float(rate)
        rows = list(csv.reader(raw.decode().splitlines()))
        if not rows:
            raise CorruptFile(f"{path} is empty")
        labels, body = rows[0], rows[1:]
        try:
            data = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
        except ValueError as exc:
            raise CorruptFile(f"{path}: non-numeric value: {exc}") from exc
        if data.ndim != 2 or data.shape[1] != len(labels):
            raise CorruptFile(f"{path}: ragged rows")
        X = TimeSeriesSet(data.T.copy(), rate, labels)
    else:
        X = decode_trial(raw)
    if manifest is not None:
        if list(X.labels) != list(manifest.channels):
            raise FormatError(f"{path}: channels do not match manifest")
        if abs(X.rate - manifest.rate) > 1e-9:
            raise FormatError(f"{path}: rate {X.rate} differs from manifest {manifest.rate}")
    return X


# --------------------------------------------------------------------------
# VAR oracle

@dataclass
class VarSystemSpec:
    """``X[t+1] = coupling @ X[t] + noise_scale * eps``; ``coupling[i, j]`` is j -> i."""

    coupling: np.ndarray
    noise_scale: float = 1.0
    length: int = 50000
    seed: int = 0
    rate: float = 1.0

    @property
    def dimension(self) -> int:
        return self.coupling.shape[0]


def spectral_radius(A: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def var_scan(A: np.ndarray, eps: np.ndarray, block: int = 64) -> np.ndarray:
    """Run ``x[t+1] = A x[t] + eps[t+1]`` from ``x[0] = eps[0]``.

    Blocked scan: zero-state responses of all blocks are built in parallel,
    then block boundary states are chained, so Python-level work is
    O(block + T / block) steps instead of O(T).
    """
    n, T = eps.shape
    nb = -(-T // block)
    E = np.zeros((n, nb * block))
    E[:, :T] = eps
    E = E.reshape(n, nb, block)
    W = np.empty_like(E)
    W[:, :, 0] = E[:, :, 0]
    for m in range(1, block):
        W[:, :, m] = A @ W[:, :, m - 1] + E[:, :, m]
    powers = [np.eye(n)]
    for _ in range(block):
        powers.append(A @ powers[-1])
    Ap = np.stack(powers[1:block + 1])             # A^1 .. A^block
    state = np.zeros(n)                             # x just before each block
    out = np.empty_like(E)
    for b in range(nb):
        out[:, b, :] = W[:, b, :] + np.einsum("mij,j->im", Ap[:block], state)
        state = out[:, b, -1]
    return out.reshape(n, -1)[:, :T]


def generate_var(spec: VarSystemSpec):
    """Simulate the VAR(1) oracle; returns ``(TimeSeriesSet, true_edges)``.

    ``true_edges`` is the set of ``(source, target)`` pairs with nonzero
    off-diagonal coupling.
    """
    A = np.asarray(spec.coupling, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError("coupling must be square")
    rho = spectral_radius(A)
    if rho >= 1.0:
        raise StabilityError(f"spectral radius {rho:.4f} >= 1")
    rng = CounterRNG(spec.seed).spawn(0x7A2)
    eps = spec.noise_scale * rng.normal((A.shape[0], spec.length + BURN_IN))
    x = var_scan(A, eps)[:, BURN_IN:]
    edges = {(j, i) for i in range(A.shape[0]) for j in range(A.shape[0])
             if i != j and A[i, j] != 0.0}
    return TimeSeriesSet(x, spec.rate), edges


def coupled_pair(coupling: float = 0.5, length: int = 50000, seed: int = 0) -> VarSystemSpec:
    """X1 autonomous AR(0.5); X2 driven by X1 with the given coupling."""
    A = np.array([[0.5, 0.0], [coupling, 0.5]])
    return VarSystemSpec(A, 1.0, length, seed)


def chain3(coupling: float = 0.5, length: int = 50000, seed: int = 0) -> VarSystemSpec:
    """Chain 1 -> 2 -> 3 with no direct 1 -> 3 term."""
    A = np.array([[0.5, 0.0, 0.0], [coupling, 0.5, 0.0], [0.0, coupling, 0.5]])
    return VarSystemSpec(A, 1.0, length, seed)


# --------------------------------------------------------------------------
# Synthetic emotion dataset

@dataclass
class EmotionSynthConfig:
    """Planted two-class EEG-like recordings.

    Arousal class 1 adds frontal -> temporal coupling and boosts alpha power
    over parietal/occipital sites; valence class 1 boosts beta power over the
    left temporal region.  ``separation`` scales every planted effect; 0
    makes the classes identically distributed.
    """

    n_trials: int = 20
    trial_seconds: float = 60.0
    rate: float = 200.0
    separation: float = 1.0
    coupling: float = 0.25
    power_gain: float = 0.8
    trial_gain_sd: float = 0.0
    seed: int = 0
    subject: str = "synthetic01"
    fmt: str = "bin"  # "bin" | "csv"


# frequency (Hz) of the resonator driving each region
_REGION_RHYTHM = {"Prefrontal": 6.0, "Frontal": 6.0, "LeftTemporal": 20.0, "RightTemporal": 20.0,
                  "Central": 10.0, "Parietal": 10.0, "Occipital": 10.0}

PLANTED_COUPLINGS = (("F7", "T7"), ("F3", "FC5"), ("F8", "T8"), ("F4", "FC6"), ("Fz", "CP5"))
ALPHA_BOOST = ("P3", "Pz", "P4", "PO3", "PO4", "O1", "Oz", "O2")
BETA_BOOST = ("FC5", "T7", "CP5", "P7")


def _emotion_system(region_map, cfg: EmotionSynthConfig, arousal: int, valence: int):
    """VAR(2) coefficients and per-channel noise gains for one class pair."""
    labels = region_map.channels
    n = len(labels)
    pos = {c: k for k, c in enumerate(labels)}
    A1 = np.zeros((n, n))
    A2 = np.zeros((n, n))
    r = 0.96
    for k, c in enumerate(labels):
        f = _REGION_RHYTHM.get(region_map.region_of(c), 10.0)
        w = 2.0 * np.pi * f / cfg.rate
        A1[k, k] = 2.0 * r * np.cos(w)
        A2[k, k] = -r * r
    gain = np.ones(n)
    s = cfg.separation
    if arousal:
        for src, dst in PLANTED_COUPLINGS:
            if src in pos and dst in pos:
                A1[pos[dst], pos[src]] += cfg.coupling * s
        for c in ALPHA_BOOST:
            if c in pos:
                gain[pos[c]] *= 1.0 + cfg.power_gain * s
    if valence:
        for c in BETA_BOOST:
            if c in pos:
                gain[pos[c]] *= 1.0 + cfg.power_gain * s
    return A1, A2, gain


def simulate_var2(A1, A2, noise: np.ndarray) -> np.ndarray:
    """VAR(2) through its companion VAR(1) form; returns (n, T)."""
    n = A1.shape[0]
    comp = np.zeros((2 * n, 2 * n))
    comp[:n, :n] = A1
    comp[:n, n:] = A2
    comp[n:, :n] = np.eye(n)
    if spectral_radius(comp) >= 1.0:
        raise StabilityError("synthetic VAR(2) system is unstable")
    eps = np.zeros((2 * n, noise.shape[1]))
    eps[:n] = noise
    return var_scan(comp, eps)[:n]


def emotion_trial(region_map, cfg: EmotionSynthConfig, index: int, arousal: int, valence: int):
    A1, A2, gain = _emotion_system(region_map, cfg, arousal, valence)
    n = len(region_map.channels)
    T = int(round(cfg.trial_seconds * cfg.rate))
    rng = CounterRNG(cfg.seed).spawn(0xE3, index)
    noise = rng.normal((n, T + BURN_IN))
    x = simulate_var2(A1, A2, noise)[:, BURN_IN:]
    x *= gain[:, None]
    if cfg.trial_gain_sd > 0:
        x *= np.exp(cfg.trial_gain_sd * rng.normal((n, 1)))
    return TimeSeriesSet(x, cfg.rate, list(region_map.channels))


def generate_emotion_synthetic(cfg: EmotionSynthConfig, out_dir, region_map=None) -> DatasetManifest:
    """Write trial files plus ``manifest.json`` into ``out_dir``."""
    from .graphs import default_region_map

    region_map = region_map or default_region_map()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trials = []
    for k in range(cfg.n_trials):
        arousal, valence = k % 2, (k // 2) % 2
        X = emotion_trial(region_map, cfg, k, arousal, valence)
        name = f"trial_{k:03d}." + ("csv" if cfg.fmt == "csv" else "bin")
        if cfg.fmt == "csv":
            save_trial_csv(X, out_dir / name)
        else:
            save_trial(X, out_dir / name)
        trials.append(TrialEntry(f"t{k:03d}", name, cfg.trial_seconds, arousal, valence))
    manifest = DatasetManifest(cfg.subject, list(region_map.channels), cfg.rate, trials, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
