"""Command-line entry point: ``lfgnn <command> ...``.

Commands: ``generate``, ``causal``, ``preprocess``, ``train``, ``eval`` and
``compare``.  Exit codes: 0 success, 2 usage or configuration error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import model as M
from .causality import analyze
from .config import RunConfig, load_run_config
from .data import (EmotionSynthConfig, _atomic_write, chain3, coupled_pair, generate_emotion_synthetic,
                   generate_var, load_manifest, load_trial, save_trial)
from .errors import DataError, LFGNNError, UsageError
from .graphs import build_global_adjacency, export_graph, flow_to_csv
from .pipeline import comparison_datasets, compare_conditions, preprocess_dataset, sample_summary
from .samples import load_samples, save_samples
from .train import MetricsReport, cross_validate, curves_csv, evaluate, holdout

log = logging.getLogger("lfgnn")


def _write_text(path: Path, text: str) -> None:
    _atomic_write(path, text.encode())


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _resolve(args) -> RunConfig:
    base = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    flags = {k: getattr(args, k, None) for k in ("alpha", "surrogates", "seed", "topk", "target")}
    if getattr(args, "paper_protocol", False):
        flags["paper_protocol"] = True
    return base.with_overrides(**flags)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = getattr(args, "out", None) or cfg.output
    if not out:
        raise UsageError("an output directory is required (--out or [paths] output)")
    return Path(out)


def _echo(out: Path, cfg: RunConfig) -> None:
    _write_text(out / "run_config.ini", cfg.to_ini())


# --------------------------------------------------------------------------

def cmd_generate(args) -> int:
    out = Path(args.out)
    if args.kind == "emotion":
        cfg = EmotionSynthConfig(n_trials=args.trials, trial_seconds=args.trial_seconds,
                                 separation=args.separation, seed=args.seed, fmt=args.format)
        m = generate_emotion_synthetic(cfg, out)
        print(f"wrote {len(m.trials)} trials and manifest.json to {out}")
        return 0
    spec = (chain3 if args.kind == "chain3" else coupled_pair)(args.coupling, args.length, args.seed)
    X, edges = generate_var(spec)
    save_trial(X, out / "trial.bin")
    _write_json(out / "truth.json", {"channels": X.labels,
                                     "edges": [[X.labels[a], X.labels[b]] for a, b in sorted(edges)]})
    print(f"wrote {out / 'trial.bin'} ({X.n_channels} channels, {X.n_samples} samples)")
    return 0


def cmd_causal(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args, cfg)
    path = Path(args.input)
    try:
        X = load_trial(path, rate=args.rate)
    except (DataError, UsageError) as exc:
        raise UsageError(f"bad input {path}: {exc}") from exc
    if args.start is not None or args.seconds is not None:
        a = int(round((args.start or 0.0) * X.rate))
        b = X.n_samples if args.seconds is None else a + int(round(args.seconds * X.rate))
        X = X.__class__(X.data[:, a:b], X.rate, list(X.labels))
    F = analyze(X, cfg.significance())
    G = build_global_adjacency(F, cfg.alpha)
    export_graph(G, "json", out / "graph.json")
    export_graph(G, "dot", out / "graph.dot")
    _write_text(out / "flow.csv", flow_to_csv(F))
    _echo(out, cfg)
    print(f"{X.n_channels} channels, {X.n_samples} samples: "
          f"{np.count_nonzero(G.adjacency)} edges at alpha={cfg.alpha}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args, cfg)
    src = args.manifest or cfg.dataset
    if not src:
        raise UsageError("a manifest is required")
    try:
        manifest = load_manifest(src)
    except DataError as exc:
        raise UsageError(f"manifest error: {exc}") from exc
    R = cfg.regions()
    samples = preprocess_dataset(manifest, R, cfg.preprocess(), jobs=args.jobs)
    save_samples(samples, out)
    summary = sample_summary(samples)
    _write_json(out / "summary.json", summary)
    _echo(out, cfg)
    print(f"{summary['windows']} windows; global edge density {summary['global_density']:.4f}; "
          f"mean local edges {summary['local_edges_mean']:.2f}")
    return 0


def _fold_outputs(out: Path, res) -> None:
    _write_text(out / "metrics.json", res.report.to_json())
    rows = [dict(r, fold=r.get("fold", f.fold)) for f in res.folds for r in f.curves]
    _write_text(out / "curves.csv", curves_csv(rows))
    _write_text(out / "attention.csv", M.attention_csv(res.attention_table()))
    _write_json(out / "folds.json", [{"fold": f.fold, "test_trials": f.test_trials,
                                      "inner_val_acc": f.inner_val_acc} for f in res.folds])
    for f in res.folds:
        M.save_model(f.state, out / "weights" / f"fold_{f.fold:02d}.lfw", {"fold": f.fold})


def cmd_train(args) -> int:
    cfg = _resolve(args)
    R = cfg.regions()
    mcfg = cfg.model_config(R)
    if args.report_params:
        print(f"parameters: {M.count_parameters(mcfg)} (fingerprint {M.architecture_fingerprint(mcfg)})")
        return 0
    out = _out_dir(args, cfg)
    src = args.samples or cfg.samples
    if not src:
        raise UsageError("a samples directory is required")
    data = load_samples(src)
    if data.channels and list(data.channels) != list(R.channels):
        raise UsageError("sample channels do not follow the region map ordering")
    tcfg = cfg.train_config()
    if args.holdout is not None:
        res = holdout(data, tcfg, mcfg, args.holdout)
    else:
        res = cross_validate(data, tcfg, mcfg, jobs=args.jobs)
    _fold_outputs(out, res)
    _echo(out, cfg)
    r = res.report
    print(f"accuracy {r.mean_accuracy:.4f} +/- {r.std_accuracy:.4f}; "
          f"macro-F1 {r.mean_f1:.4f} +/- {r.std_f1:.4f} over {len(r.fold_accuracy)} fold(s)")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args, cfg)
    state = M.load_model(args.weights)
    data = load_samples(args.samples)
    if data.X.shape[1:] != (state.config.n_channels, state.config.feature_dim):
        raise UsageError("samples do not match the model's channel/feature shape")
    acc, f1, C = evaluate(state, data, cfg.train_config().target)
    report = MetricsReport([acc], [f1], [C.tolist()], cfg.train_config().target, "eval")
    _write_text(out / "metrics.json", report.to_json())
    rows = M.export_attention(state, data.X, data.A_global, data.A_local, list(data.channels) or None)
    _write_text(out / "attention.csv", M.attention_csv(rows))
    _echo(out, cfg)
    print(f"accuracy {acc:.4f}; macro-F1 {f1:.4f} on {len(data)} windows")
    return 0


def cmd_compare(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args, cfg)
    src = args.manifest or cfg.dataset
    if not src:
        raise UsageError("a manifest is required")
    try:
        manifest = load_manifest(src)
    except DataError as exc:
        raise UsageError(f"manifest error: {exc}") from exc
    R = cfg.regions()
    datasets = comparison_datasets(manifest, R, cfg.preprocess(), cfg.topk, cfg.granger_order, args.jobs)
    res = compare_conditions(datasets, cfg.train_config(), cfg.model_config(R), args.jobs)
    _write_json(out / "comparison.json", res.to_dict())
    _echo(out, cfg)
    for c, r in res.reports.items():
        print(f"{c:>14}: accuracy {r.mean_accuracy:.4f} +/- {r.std_accuracy:.4f}")
    print("wilcoxon p = " + ("n/a (" + res.note + ")" if res.p_value is None else f"{res.p_value:.4g}"))
    return 0


# --------------------------------------------------------------------------

def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lfgnn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--surrogates", type=int)
        if seed:
            sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=_positive_int, default=1)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("kind", choices=("emotion", "var", "chain3"))
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--trials", type=int, default=20)
    g.add_argument("--trial-seconds", type=float, default=60.0, dest="trial_seconds")
    g.add_argument("--separation", type=float, default=1.0)
    g.add_argument("--format", choices=("bin", "csv"), default="bin")
    g.add_argument("--coupling", type=float, default=0.5)
    g.add_argument("--length", type=int, default=50000)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("causal", help="causal graph and flow report for one recording")
    c.add_argument("input")
    common(c)
    c.add_argument("--rate", type=float, help="sampling rate for CSV input")
    c.add_argument("--start", type=float, help="window start in seconds")
    c.add_argument("--seconds", type=float, help="window length in seconds")
    c.set_defaults(func=cmd_causal)

    pp = sub.add_parser("preprocess", help="windows, DE features and causal graphs")
    pp.add_argument("manifest", nargs="?")
    common(pp)
    pp.set_defaults(func=cmd_preprocess)

    t = sub.add_parser("train", help="nested cross-validation (or --holdout)")
    t.add_argument("samples", nargs="?")
    common(t)
    t.add_argument("--target", choices=("arousal", "valence"))
    t.add_argument("--paper-protocol", action="store_true", dest="paper_protocol")
    t.add_argument("--report-params", action="store_true", dest="report_params")
    t.add_argument("--holdout", type=float, help="fraction of trials held out instead of nested CV")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score saved weights on a sample directory")
    e.add_argument("weights")
    e.add_argument("samples")
    common(e)
    e.add_argument("--target", choices=("arousal", "valence"))
    e.set_defaults(func=cmd_eval)

    cp = sub.add_parser("compare", help="Granger versus information-flow graphs")
    cp.add_argument("manifest", nargs="?")
    common(cp)
    cp.add_argument("--topk", type=int)
    cp.add_argument("--target", choices=("arousal", "valence"))
    cp.add_argument("--paper-protocol", action="store_true", dest="paper_protocol")
    cp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LFGNNError as exc:
        print(f"lfgnn {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
