from collections import OrderedDict

import numpy as np
import pytest
import scipy.stats

from lfgnn import model as M
from lfgnn.errors import ConfigError, DataError, DegenerateTest, InsufficientData, ShapeError, StratificationError
from lfgnn.rng import CounterRNG
from lfgnn.train import (MetricsReport, TrainConfig, adam_step, confusion_matrix, cross_validate, evaluate,
                         init_moments, metrics_from_confusion, nested_cv, run_stage, signed_rank_null,
                         stratified_trial_folds, train_two_stage, trial_labels, wilcoxon_brute_force,
                         wilcoxon_signed_rank)

from oracles import macro_f1, wilcoxon_enumerate

FAST = dict(outer_folds=3, inner_folds=2, stage1_epochs=4, stage2_epochs=2, batch_size=16)


def _params():
    r = CounterRNG(0)
    return OrderedDict(a=r.normal((2, 3)), b=r.normal(4))


def test_adam_zero_gradient():
    p = _params()
    mom = {"m": OrderedDict((k, np.ones_like(v)) for k, v in p.items()),
           "v": OrderedDict((k, np.ones_like(v)) for k, v in p.items())}
    zero = {k: np.zeros_like(v) for k, v in p.items()}
    cfg = TrainConfig()
    new_p, new_m = adam_step(p, zero, {"m": OrderedDict((k, np.zeros_like(v)) for k, v in p.items()),
                                       "v": OrderedDict((k, np.zeros_like(v)) for k, v in p.items())}, 1, cfg)
    assert all(np.array_equal(new_p[k], p[k]) for k in p)
    _, decayed = adam_step(p, zero, mom, 3, cfg)
    assert np.allclose(decayed["m"]["a"], 0.9) and np.allclose(decayed["v"]["b"], 0.999)


def test_adam_first_step_is_signed_lr():
    p = _params()
    g = {"a": np.array([[3.0, -0.2, 1e-3], [-7.0, 2.0, -4.0]]), "b": np.array([1.0, -1.0, 5.0, -0.5])}
    cfg = TrainConfig(eps=1e-30)
    new_p, _ = adam_step(p, g, init_moments(p), 1, cfg, lr=0.01)
    for k in p:
        assert np.allclose(new_p[k] - p[k], -0.01 * np.sign(g[k]), rtol=1e-12)


def test_adam_deterministic_and_shapes():
    p = _params()
    g = {k: np.ones_like(v) for k, v in p.items()}
    a, _ = adam_step(p, g, init_moments(p), 1, TrainConfig())
    b, _ = adam_step(p, g, init_moments(p), 1, TrainConfig())
    assert all(np.array_equal(a[k], b[k]) for k in p)
    with pytest.raises(ShapeError):
        adam_step(p, {"a": np.ones(3), "b": g["b"]}, init_moments(p), 1, TrainConfig())


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(outer_folds=1)
    with pytest.raises(ConfigError):
        TrainConfig(stage1_lr=-1.0)
    full = TrainConfig.paper_protocol()
    assert (full.outer_folds, full.inner_folds, full.stage1_epochs, full.stage2_epochs) == (10, 3, 200, 20)
    assert (full.stage1_lr, full.stage2_lr, full.batch_size) == (1e-3, 1e-4, 64)


def test_metrics_hand_computed():
    assert metrics_from_confusion([[3, 1], [1, 3]]) == (0.75, 0.75)
    acc, f1 = metrics_from_confusion(confusion_matrix([0, 0, 1, 1], [1, 1, 1, 1]))
    assert acc == 0.5 and f1 == pytest.approx(1 / 3)
    assert metrics_from_confusion([[5, 0], [0, 5]]) == (1.0, 1.0)
    C = [[7, 2], [4, 1]]
    assert metrics_from_confusion(C)[1] == pytest.approx(macro_f1(C))


def test_report_json_round_trip():
    r = MetricsReport([0.5, 1.0], [0.4, 1.0], [[[1, 1], [0, 2]]] * 2)
    d = r.to_dict()
    assert d["mean_accuracy"] == 0.75 and d["std_accuracy"] == 0.25 and d["f1_average"] == "macro"
    back = MetricsReport.from_json(r.to_json())
    assert back.to_json() == r.to_json()


def test_wilcoxon_examples():
    a = np.arange(10.0)
    with pytest.raises(DegenerateTest):
        wilcoxon_signed_rank(a, a)
    assert wilcoxon_signed_rank(a + 1, a) == pytest.approx(2 / 2**10)
    with pytest.raises(InsufficientData):
        wilcoxon_signed_rank(a[:5] + 1, a[:5])


def test_wilcoxon_matches_enumeration():
    r = CounterRNG(6)
    for trial in range(20):
        a = np.round(r.uniform(8), 2)
        b = np.round(r.uniform(8), 2)
        if trial % 4 == 0:
            b[:3] = a[:3] + 0.05  # ties in |d|
        p = wilcoxon_signed_rank(a, b)
        assert p == pytest.approx(wilcoxon_brute_force(a, b), abs=1e-12)
        assert p == pytest.approx(wilcoxon_enumerate(np.round(a - b, 12)), abs=1e-12)


def test_wilcoxon_null_counts():
    counts = signed_rank_null(np.array([2, 4, 6]))  # doubled ranks 1, 2, 3
    assert [int(c) for c in counts] == [1, 0, 1, 0, 1, 0, 2, 0, 1, 0, 1, 0, 1]


def test_wilcoxon_normal_branch_matches_scipy():
    r = CounterRNG(7)
    d = r.normal(30) + 0.3
    ours = wilcoxon_signed_rank(d, np.zeros(30))
    ref = scipy.stats.wilcoxon(d, method="approx", correction=False).pvalue
    assert ours == pytest.approx(ref, rel=1e-10)


def test_folds_balanced_and_disjoint():
    labels = OrderedDict((f"t{k}", k % 2) for k in range(23))
    folds = stratified_trial_folds(labels, 5, CounterRNG(0))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    flat = [t for f in folds for t in f]
    assert sorted(flat) == sorted(labels)
    for f in folds:
        assert {labels[t] for t in f} == {0, 1}
    with pytest.raises(StratificationError):
        stratified_trial_folds(OrderedDict([("a", 0), ("b", 1), ("c", 1), ("d", 1)]), 3, CounterRNG(0))


def test_trial_labels_consistency(small_emotion):
    _, data = small_emotion
    tl = trial_labels(data, "arousal")
    assert len(tl) == 12 and set(tl.values()) == {0, 1}


def test_lr_zero_leaves_parameters(small_emotion):
    _, data = small_emotion
    st = M.build_model(M.default_model_config())
    cfg = TrainConfig(stage1_lr=0.0, stage2_lr=0.0, stage1_epochs=2, stage2_epochs=1)
    out, _ = train_two_stage(st, data.subset(range(0, 36)), data.subset(range(36, 48)), cfg)
    assert all(np.array_equal(out.params[k], st.params[k]) for k in st.params)


def test_empty_split_rejected(small_emotion):
    _, data = small_emotion
    st = M.build_model(M.default_model_config())
    with pytest.raises(DataError):
        train_two_stage(st, data.subset([]), data, TrainConfig())


def _split(data):
    trials = sorted(set(data.trial.tolist()))
    val = np.isin(data.trial, trials[-4:])
    return data.subset(np.flatnonzero(~val)), data.subset(np.flatnonzero(val))


def test_stage_one_loss_halves_in_30_epochs(small_emotion):
    _, data = small_emotion
    train, val = _split(data)
    st = M.build_model(M.default_model_config())
    M.fit_feature_scaler(st, train.X)
    cfg = TrainConfig(batch_size=16)
    _, _, rows = run_stage(st, train, cfg, cfg.stage1_lr, 30, CounterRNG(0), val)
    assert rows[-1]["train_loss"] <= 0.5 * rows[0]["train_loss"]


def test_checkpoint_is_first_best_epoch(small_emotion):
    _, data = small_emotion
    train, val = _split(data)
    st = M.build_model(M.default_model_config())
    M.fit_feature_scaler(st, train.X)
    cfg = TrainConfig(batch_size=16)
    best, acc, rows = run_stage(st, train, cfg, cfg.stage1_lr, 8, CounterRNG(1), val)
    accs = [r["val_acc"] for r in rows]
    first = int(np.argmax(accs))
    assert acc == max(accs)
    replay, _, _ = run_stage(st, train, cfg, cfg.stage1_lr, first + 1, CounterRNG(1))
    assert all(np.array_equal(replay.params[k], best.params[k]) for k in best.params)


def test_stage_two_does_not_degrade(small_emotion):
    _, data = small_emotion
    train, val = _split(data)
    st = M.build_model(M.default_model_config())
    cfg = TrainConfig(stage1_epochs=15, stage2_epochs=5, batch_size=16)
    M.fit_feature_scaler(st, train.X)
    best, acc1, _ = run_stage(st, train, cfg, cfg.stage1_lr, cfg.stage1_epochs, CounterRNG(0).spawn(0x7124, 1), val)
    final, _ = train_two_stage(M.build_model(M.default_model_config()), train, val, cfg)
    assert evaluate(final, val)[0] >= acc1 - 0.05


def test_nested_cv_deterministic_and_covering(small_emotion):
    _, data = small_emotion
    cfg = TrainConfig(**FAST)
    res = cross_validate(data, cfg)
    again = nested_cv(data, cfg)
    assert res.report.to_json() == again.to_json()
    tested = [t for f in res.folds for t in f.test_trials]
    assert sorted(tested) == sorted(set(data.trial.tolist()))
    total = sum(int(np.sum(f.confusion)) for f in res.folds)
    assert total == len(data)
    for a in res.report.fold_accuracy + res.report.fold_f1:
        assert 0.0 <= a <= 1.0
