import numpy as np
import pytest

from lfgnn.errors import CorruptFile, FormatError, ShapeError
from lfgnn.samples import FeatureGraphSample, SampleSet, decode_sample, encode_sample, load_samples, save_samples
from lfgnn.rng import CounterRNG


def make(k=0, n=4):
    r = CounterRNG(k)
    return FeatureGraphSample(r.normal((n, 5)), r.uniform((n, n)), np.eye(n), k % 2, 1, f"t{k}", k,
                              [f"c{i}" for i in range(n)])


def test_round_trip_bit_equal():
    s = make(3)
    t = decode_sample(encode_sample(s))
    assert np.array_equal(s.features, t.features) and np.array_equal(s.a_global, t.a_global)
    assert (t.arousal, t.valence, t.trial, t.window, t.channels) == (1, 1, "t3", 3, s.channels)


def test_corrupt_and_foreign_files():
    raw = encode_sample(make())
    with pytest.raises(CorruptFile):
        decode_sample(raw[:-8])
    with pytest.raises(FormatError):
        decode_sample(b"Z" * len(raw))


def test_shape_checked():
    with pytest.raises(ShapeError):
        FeatureGraphSample(np.zeros((3, 5)), np.zeros((4, 4)), np.zeros((3, 3)), 0, 0)


def test_directory_round_trip(tmp_path):
    samples = [make(k) for k in range(5)]
    names = save_samples(samples, tmp_path)
    assert names[0] == "sample_00000.bin" and (tmp_path / "index.json").exists()
    data = load_samples(tmp_path)
    assert len(data) == 5 and data.labels("arousal").tolist() == [0, 1, 0, 1, 0]
    sub = data.subset([1, 3])
    assert sub.trial.tolist() == ["t1", "t3"]
    back = list(sub.samples())
    assert np.array_equal(back[0].features, samples[1].features)
