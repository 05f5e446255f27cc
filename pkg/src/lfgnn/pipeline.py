"""From recordings to training samples, and the graph-construction comparison.

Each window is handled on its own: DE features, a global causal graph over
all channels and a block-diagonal local graph from per-region estimation.
Nothing computed for one window depends on any other window, so windows of
a test fold never inform the graphs of training windows and vice versa.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as M
from .causality import SignificanceConfig, analyze, estimate_information_flow, granger_causality, normalize_flow
from .data import DatasetManifest, load_trial
from .errors import ConfigError, DegenerateTest, InsufficientData
from .graphs import RegionMap, build_global_adjacency, build_local_adjacency, topk_sparsify
from .numerics import TimeSeriesSet
from .rng import CounterRNG
from .samples import FeatureGraphSample, SampleSet
from .signal import DEFAULT_BANDS, de_features, resample, segment_windows
from .train import TrainConfig, cross_validate, outer_splits, wilcoxon_signed_rank

log = logging.getLogger(__name__)


@dataclass
class PreprocessConfig:
    target_rate: float = 200.0
    window_seconds: float = 4.0
    overlap: float = 0.0
    bands: tuple = DEFAULT_BANDS
    significance: SignificanceConfig = field(default_factory=SignificanceConfig)

    def __post_init__(self):
        if self.target_rate <= 0 or self.window_seconds <= 0:
            raise ConfigError("rate and window length must be positive")
        for b in self.bands:
            b.check(self.target_rate)


def window_seed(seed: int, trial_index: int, window_index: int) -> int:
    """Distinct, reproducible surrogate seed for every window."""
    return int(CounterRNG(seed).spawn(trial_index, window_index).bits(1)[0] >> np.uint64(1))


def trial_windows(manifest: DatasetManifest, R: RegionMap, cfg: PreprocessConfig, k: int):
    """Load trial ``k``, put channels in region order, resample and cut windows."""
    entry = manifest.trials[k]
    X = load_trial(manifest.path_of(entry), manifest)
    X = X.select(R.order_for(X.labels))
    X = resample(X, cfg.target_rate)
    return segment_windows(X, cfg.window_seconds, cfg.overlap, entry.id, (entry.arousal, entry.valence))


def window_sample(W: TimeSeriesSet, R: RegionMap, cfg: PreprocessConfig, trial_id: str, labels,
                  window: int, seed: int) -> FeatureGraphSample:
    sig = replace(cfg.significance, seed=seed)
    feats = de_features(W, cfg.bands)
    G = build_global_adjacency(analyze(W, sig), sig.alpha)
    L = build_local_adjacency(W, R, sig)
    return FeatureGraphSample(feats, G.adjacency, L.adjacency, labels[0], labels[1], trial_id,
                              window, list(W.labels))


def _preprocess_trial(args):
    manifest, R, cfg, k = args
    rec = trial_windows(manifest, R, cfg, k)
    return [window_sample(W, R, cfg, rec.trial_id, rec.labels, w, window_seed(cfg.significance.seed, k, w))
            for w, W in enumerate(rec.windows)]


def preprocess_dataset(manifest: DatasetManifest, R: RegionMap, cfg: PreprocessConfig,
                       jobs: int = 1) -> list[FeatureGraphSample]:
    """All windows of all trials, in manifest order."""
    if sorted(manifest.channels) != sorted(R.channels):
        raise ConfigError("manifest channels do not match the region map")
    args = [(manifest, R, cfg, k) for k in range(len(manifest.trials))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            per_trial = list(ex.map(_preprocess_trial, args))
    else:
        per_trial = [_preprocess_trial(a) for a in args]
    samples = [s for trial in per_trial for s in trial]
    if not samples:
        raise InsufficientData("no windows produced")
    return samples


def sample_summary(samples) -> dict:
    g = np.array([np.count_nonzero(s.a_global) for s in samples], dtype=np.float64)
    lo = np.array([np.count_nonzero(s.a_local) for s in samples], dtype=np.float64)
    n = samples[0].features.shape[0]
    return {"windows": len(samples), "global_density": float(g.mean() / (n * (n - 1))),
            "local_edges_mean": float(lo.mean())}


# --------------------------------------------------------------------------
# graph-construction comparison

CONDITIONS = ("granger", "liang_kleeman")


def lk_topk_graphs(W: TimeSeriesSet, R: RegionMap, k: int):
    """|tau| graphs kept to the ``k`` strongest incoming edges per node."""
    tau = np.abs(normalize_flow(estimate_information_flow(W)).tau)
    np.fill_diagonal(tau, 0.0)
    A_local = np.zeros_like(tau)
    for a, b in R.blocks:
        if b - a < 2:
            continue
        t = np.abs(normalize_flow(estimate_information_flow(W.select(range(a, b)))).tau)
        np.fill_diagonal(t, 0.0)
        A_local[a:b, a:b] = topk_sparsify(t, k)
    return topk_sparsify(tau, k), A_local


def granger_topk_graphs(W: TimeSeriesSet, R: RegionMap, k: int, order: int = 5):
    """Pairwise Granger F-statistics with the same Top-k rule; pairwise tests
    do not depend on the other channels, so the local graph is the global
    statistic restricted to region blocks."""
    F, _ = granger_causality(W, order)
    A_local = np.zeros_like(F)
    for a, b in R.blocks:
        if b - a >= 2:
            A_local[a:b, a:b] = topk_sparsify(F[a:b, a:b], k)
    return topk_sparsify(F, k), A_local


def _compare_trial(args):
    manifest, R, cfg, k, topk, order = args
    rec = trial_windows(manifest, R, cfg, k)
    out = []
    for w, W in enumerate(rec.windows):
        feats = de_features(W, cfg.bands)
        lk = lk_topk_graphs(W, R, topk)
        gc = granger_topk_graphs(W, R, topk, order)
        out.append((feats, lk, gc, rec.trial_id, rec.labels, w))
    return out


@dataclass
class ComparisonResult:
    reports: dict                  # condition -> MetricsReport
    splits: list                   # outer test trials per fold
    p_value: float | None
    note: str = ""
    fold_trials: dict = field(default_factory=dict)   # condition -> test trials per fold

    def to_dict(self) -> dict:
        return {"conditions": list(self.reports), "splits": self.splits,
                "metric": "accuracy", "test": "wilcoxon_signed_rank_two_sided",
                "p_value": self.p_value, "note": self.note, "fold_test_trials": self.fold_trials,
                "folds": {c: r.to_dict() for c, r in self.reports.items()}}


def comparison_datasets(manifest: DatasetManifest, R: RegionMap, cfg: PreprocessConfig, topk: int,
                        order: int = 5, jobs: int = 1) -> dict:
    """Same windows, features and labels; only the graphs differ."""
    if topk < 1:
        raise ConfigError("topk must be >= 1")
    args = [(manifest, R, cfg, k, topk, order) for k in range(len(manifest.trials))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = [r for t in ex.map(_compare_trial, args) for r in t]
    else:
        rows = [r for a in args for r in _compare_trial(a)]
    out = {}
    for c, pick in (("granger", 2), ("liang_kleeman", 1)):
        out[c] = SampleSet.from_samples(
            FeatureGraphSample(r[0], r[pick][0], r[pick][1], r[4][0], r[4][1], r[3], r[5], list(R.channels))
            for r in rows)
    return out


def compare_conditions(datasets: dict, train_cfg: TrainConfig, model_cfg: M.ModelConfig,
                       jobs: int = 1) -> ComparisonResult:
    """Train identical models on each graph family over one shared set of
    outer folds and test the paired fold accuracies."""
    first = next(iter(datasets.values()))
    splits = outer_splits(first, train_cfg)
    reports, fold_trials = {}, {}
    for c, data in datasets.items():
        res = cross_validate(data, train_cfg, model_cfg, jobs, condition=c, splits=splits)
        reports[c] = res.report
        fold_trials[c] = [list(f.test_trials) for f in res.folds]
    a, b = (reports[c].fold_accuracy for c in CONDITIONS)
    p, note = None, ""
    try:
        p = wilcoxon_signed_rank(b, a)
    except (InsufficientData, DegenerateTest) as exc:
        note = str(exc)
    for r in reports.values():
        r.p_value = p
    return ComparisonResult(reports, [list(s) for s in splits], p, note, fold_trials)
