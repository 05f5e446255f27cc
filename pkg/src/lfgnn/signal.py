"""EEG preprocessing: resampling, windowing, band decomposition and DE features."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .errors import BandError, InsufficientData, UnsupportedRatio
from .numerics import TimeSeriesSet

DE_FLOOR = -20.0


@dataclass(frozen=True)
class BandSpec:
    name: str
    low_hz: float
    high_hz: float

    def check(self, rate: float) -> None:
        nyq = rate / 2.0
        if not 0 < self.low_hz < self.high_hz < nyq:
            raise BandError(
                f"band {self.name} [{self.low_hz}, {self.high_hz}] Hz invalid for Nyquist {nyq} Hz")


DEFAULT_BANDS = (
    BandSpec("delta", 1.0, 4.0),
    BandSpec("theta", 4.0, 8.0),
    BandSpec("alpha", 8.0, 13.0),
    BandSpec("beta", 13.0, 30.0),
    BandSpec("gamma", 30.0, 50.0),
)


@dataclass
class WindowedRecording:
    windows: list[TimeSeriesSet]
    window_seconds: float
    trial_id: str = ""
    labels: tuple[int, int] = (0, 0)  # (arousal, valence)
    starts: list[int] = field(default_factory=list)


def resample(X: TimeSeriesSet, target_hz: float, numtaps_per_ratio: int = 20) -> TimeSeriesSet:
    """Integer-ratio decimation with a zero-delay anti-alias FIR.

    The FIR is a Hamming-windowed low-pass with cutoff ``0.45 * target_hz``;
    odd length and centred convolution keep the phase at zero.
    """
    if target_hz > X.rate:
        raise UnsupportedRatio(f"cannot upsample {X.rate} Hz to {target_hz} Hz")
    ratio_f = X.rate / target_hz
    ratio = int(round(ratio_f))
    if abs(ratio_f - ratio) > 1e-9 * ratio_f:
        raise UnsupportedRatio(f"{X.rate}/{target_hz} is not an integer ratio")
    if ratio == 1:
        return TimeSeriesSet(X.data.copy(), X.rate, list(X.labels))
    numtaps = numtaps_per_ratio * ratio + 1
    taps = sps.firwin(numtaps, 0.45 * target_hz, fs=X.rate, window="hamming")
    filtered = sps.oaconvolve(X.data, taps[None, :], mode="same", axes=1)
    return TimeSeriesSet(filtered[:, ::ratio], float(target_hz), list(X.labels))


def segment_windows(X: TimeSeriesSet, seconds: float, overlap: float = 0.0,
                    trial_id: str = "", labels: tuple[int, int] = (0, 0)) -> WindowedRecording:
    """Cut a recording into fixed-length windows, dropping the remainder."""
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    length = int(round(seconds * X.rate))
    if length < 1 or X.n_samples < length:
        raise InsufficientData(
            f"recording of {X.n_samples} samples shorter than one {seconds} s window")
    hop = max(1, int(round(length * (1.0 - overlap))))
    starts = list(range(0, X.n_samples - length + 1, hop))
    windows = [TimeSeriesSet(X.data[:, s:s + length], X.rate, list(X.labels)) for s in starts]
    return WindowedRecording(windows, seconds, trial_id, labels, starts)


def _band_sos(band: BandSpec, rate: float, order: int):
    return sps.butter(order, [band.low_hz, band.high_hz], btype="bandpass", fs=rate, output="sos")


def bandpass_decompose(W: TimeSeriesSet, bands=DEFAULT_BANDS, order: int = 4) -> np.ndarray:
    """Zero-phase Butterworth band-pass per band.

    Returns an array of shape (bands, channels, samples).
    """
    for b in bands:
        b.check(W.rate)
    out = np.empty((len(bands),) + W.data.shape)
    for k, b in enumerate(bands):
        out[k] = sps.sosfiltfilt(_band_sos(b, W.rate, order), W.data, axis=-1)
    return out


def differential_entropy(band_signal: np.ndarray, floor: float = DE_FLOOR):
    """Gaussian differential entropy 0.5*ln(2*pi*e*var) per channel (nats).

    Returns ``(de, floored)``; channels whose entropy is undefined or below
    ``floor`` are set to ``floor`` and flagged.
    """
    x = np.atleast_2d(np.asarray(band_signal, dtype=np.float64))
    if x.shape[-1] < 2:
        raise InsufficientData("differential entropy needs at least 2 samples")
    var = x.var(axis=-1, ddof=1)
    with np.errstate(divide="ignore"):
        de = 0.5 * np.log(2.0 * math.pi * math.e * var)
    floored = ~(de > floor)
    de = np.where(floored, floor, de)
    return de, floored


def de_features(W: TimeSeriesSet, bands=DEFAULT_BANDS, floor: float = DE_FLOOR) -> np.ndarray:
    """Node feature matrix (channels, bands) of DE values."""
    decomposed = bandpass_decompose(W, bands)
    cols = [differential_entropy(decomposed[k], floor)[0] for k in range(len(bands))]
    return np.stack(cols, axis=1)
