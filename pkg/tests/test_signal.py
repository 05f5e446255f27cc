import math

import numpy as np
import pytest

from lfgnn.errors import BandError, InsufficientData, UnsupportedRatio
from lfgnn.numerics import TimeSeriesSet
from lfgnn.rng import CounterRNG
from lfgnn.signal import (DEFAULT_BANDS, BandSpec, bandpass_decompose, de_features, differential_entropy,
                          resample, segment_windows)


def tone(freq, rate, seconds, amp=1.0):
    t = np.arange(int(rate * seconds)) / rate
    return TimeSeriesSet(amp * np.sin(2 * np.pi * freq * t)[None, :], rate)


def test_resample_keeps_in_band_tone():
    X = resample(tone(5.0, 1000.0, 12.0), 200.0)
    assert X.rate == 200.0 and X.n_samples == 2400
    core = X.data[0, 200:-200]
    assert np.max(np.abs(core)) == pytest.approx(1.0, abs=0.01)


def test_resample_removes_alias():
    # 150 Hz would fold onto 50 Hz after decimation to 200 Hz
    X = resample(tone(150.0, 1000.0, 4.0), 200.0)
    assert np.max(np.abs(X.data[0, 100:-100])) < 0.01


def test_resample_identity_and_bad_ratio():
    X = tone(5.0, 200.0, 1.0)
    assert np.array_equal(resample(X, 200.0).data, X.data)
    with pytest.raises(UnsupportedRatio):
        resample(tone(5.0, 1000.0, 1.0), 300.0)
    with pytest.raises(UnsupportedRatio):
        resample(X, 400.0)


def test_segment_windows_counts():
    X = TimeSeriesSet(np.zeros((2, 200 * 60)), 200.0)
    rec = segment_windows(X, 4.0)
    assert len(rec.windows) == 15
    assert rec.windows[0].n_samples == 800
    assert len(segment_windows(X, 4.0, overlap=0.5).windows) == 29
    with pytest.raises(InsufficientData):
        segment_windows(TimeSeriesSet(np.zeros((1, 100)), 200.0), 4.0)


def test_differential_entropy_of_gaussian():
    sigma = 2.5
    x = sigma * CounterRNG(0).normal((3, 100000))
    de, floored = differential_entropy(x)
    assert np.allclose(de, 0.5 * math.log(2 * math.pi * math.e * sigma**2), atol=0.01)
    assert not floored.any()


def test_differential_entropy_floor():
    de, floored = differential_entropy(np.zeros((1, 50)))
    assert de[0] == -20.0 and floored[0]


def test_band_energy_lands_in_alpha():
    W = tone(10.0, 200.0, 4.0)
    bands = bandpass_decompose(W)
    power = (bands[:, 0, 100:-100] ** 2).mean(axis=1)
    names = [b.name for b in DEFAULT_BANDS]
    alpha = power[names.index("alpha")]
    others = np.delete(power, names.index("alpha"))
    assert 10 * np.log10(alpha / others.max()) > 25


def test_de_features_shape():
    W = TimeSeriesSet(CounterRNG(1).normal((4, 800)), 200.0)
    assert de_features(W).shape == (4, 5)


def test_band_check():
    with pytest.raises(BandError):
        BandSpec("bad", 30.0, 120.0).check(200.0)
