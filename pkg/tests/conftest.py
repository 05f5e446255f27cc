import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lfgnn.causality import SignificanceConfig  # noqa: E402
from lfgnn.data import EmotionSynthConfig, generate_emotion_synthetic  # noqa: E402
from lfgnn.graphs import default_region_map  # noqa: E402
from lfgnn.pipeline import PreprocessConfig, preprocess_dataset  # noqa: E402
from lfgnn.samples import SampleSet  # noqa: E402


@pytest.fixture(scope="session")
def small_emotion(tmp_path_factory):
    """12 planted trials of 16 s -> 48 windows with graphs."""
    root = tmp_path_factory.mktemp("emotion_small")
    manifest = generate_emotion_synthetic(EmotionSynthConfig(n_trials=12, trial_seconds=16.0, seed=2), root)
    cfg = PreprocessConfig(significance=SignificanceConfig(surrogate_count=100, seed=2))
    samples = preprocess_dataset(manifest, default_region_map(), cfg)
    return manifest, SampleSet.from_samples(samples)


def pytest_collection_modifyitems(config, items):
    # acceptance runs last so the |tau| audit sees every estimate of the session
    items.sort(key=lambda it: (it.fspath.basename == "test_acceptance.py",
                               it.name == "test_criterion_04_tau_bound"))


def pytest_terminal_summary(terminalreporter):
    import acceptance_log
    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.lines():
            terminalreporter.write_line(line)
