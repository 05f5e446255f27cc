"""Adam, two-stage training, trial-grouped nested cross-validation and metrics."""

from __future__ import annotations

import io
import json
import logging
import math
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.stats import norm, rankdata

from . import model as M
from .errors import ConfigError, DataError, DegenerateTest, InsufficientData, ShapeError, StratificationError
from .rng import CounterRNG
from .samples import SampleSet

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Training protocol.  Defaults are the desk-scale overrides; see
    :meth:`paper_protocol` for the full schedule."""

    outer_folds: int = 5
    inner_folds: int = 2
    stage1_lr: float = 1e-3
    stage1_epochs: int = 40
    stage2_lr: float = 1e-4
    stage2_epochs: int = 10
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    target: str = "arousal"

    def __post_init__(self):
        self.validate()

    @classmethod
    def paper_protocol(cls, **kw) -> "TrainConfig":
        base = dict(outer_folds=10, inner_folds=3, stage1_epochs=200, stage2_epochs=20)
        base.update(kw)
        return cls(**base)

    def validate(self) -> None:
        if self.outer_folds < 2 or self.inner_folds < 2:
            raise ConfigError("fold counts must be >= 2")
        # zero is accepted so a stage can be frozen; negative rates are not
        if self.stage1_lr < 0 or self.stage2_lr < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.stage1_epochs < 1 or self.stage2_epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs and batch size must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("invalid Adam constants")
        if self.target not in ("arousal", "valence"):
            raise ConfigError(f"unknown target {self.target!r}")


# --------------------------------------------------------------------------
# metrics

def confusion_matrix(y_true, y_pred, n_classes: int = 2) -> np.ndarray:
    C = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(C, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return C


def metrics_from_confusion(C) -> tuple[float, float]:
    """Accuracy and macro-F1 (a class with no support and no predictions scores 0)."""
    C = np.asarray(C, dtype=np.float64)
    total = C.sum()
    acc = float(np.trace(C) / total) if total else 0.0
    f1s = []
    for k in range(C.shape[0]):
        tp = C[k, k]
        denom = C[k, :].sum() + C[:, k].sum()
        f1s.append(2.0 * tp / denom if denom else 0.0)
    return acc, float(np.mean(f1s))


def evaluate(state: M.ModelState, data: SampleSet, target: str = "arousal"):
    """Returns ``(accuracy, macro_f1, confusion)``."""
    if len(data) == 0:
        raise DataError("cannot evaluate on an empty set")
    pred = M.predict(state, data.X, data.A_global, data.A_local)
    C = confusion_matrix(data.labels(target), pred, state.config.n_classes)
    acc, f1 = metrics_from_confusion(C)
    return acc, f1, C


@dataclass
class MetricsReport:
    fold_accuracy: list[float]
    fold_f1: list[float]
    confusion: list[list[list[int]]]
    target: str = "arousal"
    condition: str = ""
    f1_average: str = "macro"
    p_value: float | None = None

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracy))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.fold_accuracy))

    @property
    def mean_f1(self) -> float:
        return float(np.mean(self.fold_f1))

    @property
    def std_f1(self) -> float:
        return float(np.std(self.fold_f1))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(mean_accuracy=self.mean_accuracy, std_accuracy=self.std_accuracy,
                 mean_f1=self.mean_f1, std_f1=self.std_f1)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        d = json.loads(text)
        keys = ("fold_accuracy", "fold_f1", "confusion", "target", "condition", "f1_average", "p_value")
        return cls(**{k: d[k] for k in keys if k in d})


# --------------------------------------------------------------------------
# optimisation

def init_moments(params) -> dict:
    return {"m": OrderedDict((k, np.zeros_like(v)) for k, v in params.items()),
            "v": OrderedDict((k, np.zeros_like(v)) for k, v in params.items())}


def adam_step(params, grads, moments, t: int, cfg: TrainConfig, lr: float | None = None):
    """One bias-corrected Adam update; returns new ``(params, moments)``."""
    if t < 1:
        raise ValueError("step counter starts at 1")
    lr = cfg.stage1_lr if lr is None else lr
    b1, b2 = cfg.beta1, cfg.beta2
    new_p, new_m, new_v = OrderedDict(), OrderedDict(), OrderedDict()
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for k, p in params.items():
        g = grads[k]
        if np.shape(g) != p.shape:
            raise ShapeError(f"gradient for {k} has shape {np.shape(g)}, expected {p.shape}")
        m = b1 * moments["m"][k] + (1.0 - b1) * g
        v = b2 * moments["v"][k] + (1.0 - b2) * g * g
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        new_m[k], new_v[k] = m, v
    return new_p, {"m": new_m, "v": new_v}


def _batch_loss(state, data, idx, y, rng):
    loss, grads, _ = M.loss_and_grads(state, data.X[idx], data.A_global[idx], data.A_local[idx],
                                      y[idx], train_mode=True, seed=rng)
    return loss, grads


def mean_loss(state, data: SampleSet, target: str, batch_size: int = 256) -> float:
    from .nn import cross_entropy

    y = data.labels(target)
    total = 0.0
    for a in range(0, len(data), batch_size):
        sl = slice(a, a + batch_size)
        logits = M.forward(state, data.X[sl], data.A_global[sl], data.A_local[sl]).logits
        total += cross_entropy(logits, y[sl])[0] * len(y[sl])
    return total / len(data)


def run_stage(state: M.ModelState, train: SampleSet, cfg: TrainConfig, lr: float, epochs: int,
              rng: CounterRNG, val: SampleSet | None = None, stage: int = 1):
    """Mini-batch Adam for ``epochs`` epochs on a private copy of ``state``.

    With ``val`` the returned state is the epoch with the highest validation
    accuracy (earliest epoch on ties); otherwise it is the final state.
    Returns ``(state, best_val_acc, curve_rows)``.
    """
    if len(train) == 0 or (val is not None and len(val) == 0):
        raise DataError("training and validation splits must be non-empty")
    work = state.copy()
    moments = init_moments(work.params)
    y = train.labels(cfg.target)
    best, best_acc, rows, t = work.copy(), -1.0, [], 0
    for epoch in range(1, epochs + 1):
        erng = rng.spawn(epoch)
        order = erng.permutation(len(train))
        losses = []
        for b, a in enumerate(range(0, len(train), cfg.batch_size)):
            idx = order[a:a + cfg.batch_size]
            loss, grads = _batch_loss(work, train, idx, y, erng.spawn(b))
            t += 1
            work.params, moments = adam_step(work.params, grads, moments, t, cfg, lr)
            losses.append(loss * len(idx))
        row = {"stage": stage, "epoch": epoch, "train_loss": sum(losses) / len(train)}
        if val is not None:
            acc = evaluate(work, val, cfg.target)[0]
            row["val_acc"] = acc
            if acc > best_acc:
                best, best_acc = work.copy(), acc
        rows.append(row)
    if val is None:
        best = work
    return best, best_acc, rows


def train_two_stage(model: M.ModelState, train_set: SampleSet, val_set: SampleSet, cfg: TrainConfig,
                    rng: CounterRNG | None = None):
    """Stage 1 selects a checkpoint on ``val_set``; stage 2 fine-tunes it on
    ``train_set`` plus ``val_set`` at the stage-2 rate.

    Returns ``(state, curve_rows)``.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("training and validation splits must be non-empty")
    rng = rng or CounterRNG(cfg.seed).spawn(0x7124)
    state = model.copy()
    M.fit_feature_scaler(state, train_set.X)
    best, _, rows1 = run_stage(state, train_set, cfg, cfg.stage1_lr, cfg.stage1_epochs,
                               rng.spawn(1), val_set, stage=1)
    full = _concat(train_set, val_set)
    final, _, rows2 = run_stage(best, full, cfg, cfg.stage2_lr, cfg.stage2_epochs, rng.spawn(2), stage=2)
    return final, rows1 + rows2


def _concat(a: SampleSet, b: SampleSet) -> SampleSet:
    return SampleSet(np.concatenate([a.X, b.X]), np.concatenate([a.A_global, b.A_global]),
                     np.concatenate([a.A_local, b.A_local]), np.concatenate([a.arousal, b.arousal]),
                     np.concatenate([a.valence, b.valence]), np.concatenate([a.trial, b.trial]),
                     np.concatenate([a.window, b.window]), list(a.channels))


def curves_csv(rows) -> str:
    out = io.StringIO()
    out.write("fold,stage,epoch,train_loss,val_acc\n")
    for r in rows:
        va = "" if r.get("val_acc") is None else repr(float(r["val_acc"]))
        out.write(f"{r.get('fold', '')},{r['stage']},{r['epoch']},{float(r['train_loss'])!r},{va}\n")
    return out.getvalue()


# --------------------------------------------------------------------------
# folds

def trial_labels(data: SampleSet, target: str) -> "OrderedDict[str, int]":
    """Label of every trial, in order of first appearance."""
    out = OrderedDict()
    for t, y in zip(data.trial.tolist(), data.labels(target).tolist()):
        if out.setdefault(t, y) != y:
            raise DataError(f"trial {t} carries more than one {target} label")
    return out


def stratified_trial_folds(trial_to_label, k: int, rng: CounterRNG) -> list[list[str]]:
    """Deal trials into ``k`` folds: shuffle within each class, concatenate
    the classes in label order, then assign round-robin.  Fold sizes differ
    by at most one and every class is spread as evenly as possible."""
    if k < 2:
        raise ConfigError("need at least two folds")
    items = list(trial_to_label.items())
    if len(items) < k:
        raise StratificationError(f"{len(items)} trials cannot fill {k} folds")
    ordered = []
    for cls in sorted(set(trial_to_label.values())):
        members = [t for t, y in items if y == cls]
        perm = rng.spawn(int(cls)).permutation(len(members))
        ordered += [members[i] for i in perm]
    folds = [[] for _ in range(k)]
    for n, t in enumerate(ordered):
        folds[n % k].append(t)
    classes = set(trial_to_label.values())
    for f, fold in enumerate(folds):
        if {trial_to_label[t] for t in fold} != classes:
            raise StratificationError(f"fold {f} lacks a class; need at least {k} trials per class")
    return folds


def _indices_for(data: SampleSet, trials) -> np.ndarray:
    return np.flatnonzero(np.isin(data.trial, list(trials)))


@dataclass
class FoldOutcome:
    fold: int
    test_trials: list[str]
    accuracy: float
    f1: float
    confusion: np.ndarray
    state: M.ModelState
    attention: list = field(default_factory=list)   # rows (region, channel, weight)
    curves: list = field(default_factory=list)
    inner_val_acc: float = 0.0


@dataclass
class CVResult:
    report: MetricsReport
    folds: list[FoldOutcome]

    def attention_table(self):
        """Channel attention averaged over outer folds."""
        acc = OrderedDict()
        for f in self.folds:
            for region, ch, w in f.attention:
                acc.setdefault((region, ch), []).append(w)
        return [(r, c, float(np.mean(ws))) for (r, c), ws in acc.items()]


def outer_splits(data: SampleSet, cfg: TrainConfig) -> list[list[str]]:
    return stratified_trial_folds(trial_labels(data, cfg.target), cfg.outer_folds,
                                  CounterRNG(cfg.seed).spawn(0xF01D))


def run_fold(data: SampleSet, cfg: TrainConfig, model_cfg: M.ModelConfig, fold: int,
             test_trials) -> FoldOutcome:
    """Inner CV picks the stage-1 checkpoint, stage 2 fine-tunes it on the
    whole outer training split, then the outer test fold is scored."""
    root = CounterRNG(cfg.seed).spawn(0xF00D, fold)
    test_idx = _indices_for(data, test_trials)
    train_idx = np.setdiff1d(np.arange(len(data)), test_idx)
    outer_train, test = data.subset(train_idx), data.subset(test_idx)
    if len(outer_train) == 0 or len(test) == 0:
        raise DataError(f"fold {fold} has an empty split")
    inner = stratified_trial_folds(trial_labels(outer_train, cfg.target), cfg.inner_folds, root.spawn(0))
    init = M.build_model(replace(model_cfg, seed=int(root.spawn(1).bits(1)[0] >> np.uint64(33))))
    best, best_acc, rows = None, -1.0, []
    for j, val_trials in enumerate(inner):
        v_idx = _indices_for(outer_train, val_trials)
        t_idx = np.setdiff1d(np.arange(len(outer_train)), v_idx)
        cand = init.copy()
        M.fit_feature_scaler(cand, outer_train.X[t_idx])
        cand, acc, r = run_stage(cand, outer_train.subset(t_idx), cfg, cfg.stage1_lr, cfg.stage1_epochs,
                                 root.spawn(2, j), outer_train.subset(v_idx), stage=1)
        rows += [dict(x, fold=fold, inner=j) for x in r]
        if acc > best_acc:
            best, best_acc = cand, acc
    final, _, r = run_stage(best, outer_train, cfg, cfg.stage2_lr, cfg.stage2_epochs, root.spawn(3), stage=2)
    rows += [dict(x, fold=fold) for x in r]
    acc, f1, C = evaluate(final, test, cfg.target)
    att = M.export_attention(final, test.X, test.A_global, test.A_local, _canonical_channels(model_cfg, data))
    log.info("fold %d: acc %.4f f1 %.4f", fold, acc, f1)
    return FoldOutcome(fold, list(test_trials), acc, f1, C, final, att, rows, best_acc)


def _canonical_channels(model_cfg, data):
    return list(data.channels) if data.channels else None


def _run_fold_args(args):
    return run_fold(*args)


def cross_validate(data: SampleSet, cfg: TrainConfig, model_cfg: M.ModelConfig | None = None,
                   jobs: int = 1, condition: str = "", splits=None) -> CVResult:
    """Nested CV over trial-grouped stratified folds.

    Outer folds are independent and seeded by fold index, so ``jobs > 1``
    returns exactly what ``jobs == 1`` returns.
    """
    model_cfg = model_cfg or M.default_model_config()
    if len(data) == 0:
        raise DataError("empty dataset")
    splits = splits if splits is not None else outer_splits(data, cfg)
    args = [(data, cfg, model_cfg, f, t) for f, t in enumerate(splits)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            folds = list(ex.map(_run_fold_args, args))
    else:
        folds = [run_fold(*a) for a in args]
    report = MetricsReport([f.accuracy for f in folds], [f.f1 for f in folds],
                           [f.confusion.tolist() for f in folds], cfg.target, condition)
    return CVResult(report, folds)


def nested_cv(dataset: SampleSet, cfg: TrainConfig, model_cfg: M.ModelConfig | None = None,
              jobs: int = 1) -> MetricsReport:
    return cross_validate(dataset, cfg, model_cfg, jobs).report


def holdout(data: SampleSet, cfg: TrainConfig, model_cfg: M.ModelConfig | None = None,
            fraction: float = 0.2) -> CVResult:
    """Single split: about ``fraction`` of the trials per class are held out."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError("holdout fraction must lie in (0, 1)")
    k = max(2, int(round(1.0 / fraction)))
    splits = stratified_trial_folds(trial_labels(data, cfg.target), k, CounterRNG(cfg.seed).spawn(0xF01D))
    return cross_validate(data, cfg, model_cfg, splits=splits[:1], condition="holdout")


# --------------------------------------------------------------------------
# paired comparison

def _signed_rank_inputs(a, b):
    d = np.round(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64), 12)
    if d.shape[0] < 6:
        raise InsufficientData("the signed-rank test needs at least 6 pairs")
    d = d[d != 0]
    if d.size == 0:
        raise DegenerateTest("all paired differences are zero")
    r2 = np.rint(2.0 * rankdata(np.abs(d))).astype(np.int64)  # doubled ranks are integers
    return d, r2


def signed_rank_null(r2: np.ndarray) -> np.ndarray:
    """Counts of every doubled W+ value over all 2**n sign patterns."""
    counts = np.zeros(int(r2.sum()) + 1, dtype=object)
    counts[0] = 1
    for r in r2.tolist():
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:counts.size - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a, b, exact_max: int = 20) -> float:
    """Two-sided paired signed-rank p-value; zero differences are dropped.

    Up to ``exact_max`` non-zero pairs the null distribution is enumerated
    exactly (average ranks for ties); above that a tie-corrected normal
    approximation is used.
    """
    d, r2 = _signed_rank_inputs(a, b)
    w2 = int(r2[d > 0].sum())
    n = d.size
    if n <= exact_max:
        counts = signed_rank_null(r2)
        total = 2 ** n
        lower = int(sum(counts[:w2 + 1]))
        upper = int(sum(counts[w2:]))
        return float(min(1.0, 2.0 * min(lower, upper) / total))
    r = r2 / 2.0
    mean = r.sum() / 2.0
    var = (r * r).sum() / 4.0
    z = (w2 / 2.0 - mean) / math.sqrt(var)
    return float(min(1.0, 2.0 * norm.sf(abs(z))))


def wilcoxon_brute_force(a, b) -> float:
    """Reference p-value by listing all sign patterns (small n only)."""
    d, r2 = _signed_rank_inputs(a, b)
    n = d.size
    w_obs = int(r2[d > 0].sum())
    signs = ((np.arange(2 ** n)[:, None] >> np.arange(n)) & 1).astype(bool)
    w = (signs * r2).sum(axis=1)
    p = 2.0 * min(np.mean(w <= w_obs), np.mean(w >= w_obs))
    return float(min(1.0, p))
