"""Run configuration: one INI file with sections, overridable by CLI flags.

Example::

    [paths]
    dataset = data/manifest.json
    samples = work/samples
    region_map =
    output = work/run

    [causality]
    alpha = 0.01
    surrogates = 1000
    seed = 0
    method = residual
    block_length =

    [signal]
    target_rate = 200
    window_seconds = 4
    overlap = 0
    bands = delta:1-4, theta:4-8, alpha:8-13, beta:13-30, gamma:30-50

    [model]
    global_hidden = 16
    ...

    [train]
    outer_folds = 5
    ...

    [run]
    paper_protocol = false
    topk = 8
    granger_order = 5

Empty values mean "use the default"; text after " ;" on a line is a comment.  The resolved configuration is written
back in the same format (:meth:`RunConfig.to_ini`) into every output
directory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .causality import SignificanceConfig
from .errors import ConfigError
from .model import ModelConfig, default_model_config
from .graphs import RegionMap, default_region_map, load_region_map
from .pipeline import PreprocessConfig
from .signal import DEFAULT_BANDS, BandSpec
from .train import TrainConfig

MODEL_KEYS = ("global_hidden", "local_hidden", "k_global", "k_local", "k_pool", "hidden_dim",
              "classifier_hidden", "gate_hidden", "dropout", "entropy_weight", "seed")
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))
PAPER_TRAIN = {"outer_folds": 10, "inner_folds": 3, "stage1_epochs": 200, "stage2_epochs": 20}


def parse_bands(text: str) -> tuple[BandSpec, ...]:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            name, rng = item.split(":")
            lo, hi = rng.split("-")
            out.append(BandSpec(name.strip(), float(lo), float(hi)))
        except ValueError as exc:
            raise ConfigError(f"bad band spec {item!r}; expected name:low-high") from exc
    if not out:
        raise ConfigError("at least one band is required")
    return tuple(out)


def format_bands(bands) -> str:
    return ", ".join(f"{b.name}:{b.low_hz:g}-{b.high_hz:g}" for b in bands)


def _coerce(value: str, like):
    try:
        if isinstance(like, bool):
            v = value.strip().lower()
            if v not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return v in ("true", "1", "yes")
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
        return value.strip()
    except ValueError as exc:
        raise ConfigError(f"cannot read {value!r} as {type(like).__name__}") from exc


@dataclass
class RunConfig:
    dataset: str = ""
    samples: str = ""
    region_map: str = ""
    output: str = ""
    alpha: float = 0.01
    surrogates: int = 1000
    seed: int = 0
    method: str = "residual"
    block_length: int | None = None
    target_rate: float = 200.0
    window_seconds: float = 4.0
    overlap: float = 0.0
    bands: tuple = DEFAULT_BANDS
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    paper_protocol: bool = False
    topk: int = 8
    granger_order: int = 5

    # -- derived objects --------------------------------------------------
    def significance(self) -> SignificanceConfig:
        return SignificanceConfig(self.alpha, self.surrogates, self.block_length, self.seed, self.method)

    def preprocess(self) -> PreprocessConfig:
        return PreprocessConfig(self.target_rate, self.window_seconds, self.overlap, tuple(self.bands),
                                self.significance())

    def regions(self) -> RegionMap:
        return load_region_map(self.region_map) if self.region_map else default_region_map()

    def model_config(self, R: RegionMap | None = None) -> ModelConfig:
        kw = {"seed": self.seed, **self.model}
        return ModelConfig.from_region_map(R or self.regions(), **kw)

    def train_config(self) -> TrainConfig:
        kw = {"seed": self.seed}
        if self.paper_protocol:
            kw.update(PAPER_TRAIN)
        kw.update(self.train)
        return TrainConfig(**kw)

    def validate(self) -> None:
        self.significance()
        self.preprocess()
        self.train_config()
        if self.topk < 1:
            raise ConfigError("topk must be >= 1")
        if self.granger_order < 1:
            raise ConfigError("granger_order must be >= 1")
        unknown = set(self.model) - set(MODEL_KEYS)
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")

    def with_overrides(self, **flags) -> "RunConfig":
        """Apply CLI flags (``None`` means "not given").  A seed flag also
        replaces any per-section seed so a single flag controls the run."""
        given = {k: v for k, v in flags.items() if v is not None}
        cfg = replace(self, model=dict(self.model), train=dict(self.train))
        if "seed" in given:
            cfg.model.pop("seed", None)
            cfg.train.pop("seed", None)
        if given.get("paper_protocol"):
            for k in PAPER_TRAIN:
                cfg.train.pop(k, None)
        for k in ("outer_folds", "inner_folds", "stage1_epochs", "stage2_epochs", "target"):
            if k in given:
                cfg.train[k] = given.pop(k)
        cfg = replace(cfg, **given)
        cfg.validate()
        return cfg

    # -- text round trip ---------------------------------------------------
    def to_ini(self) -> str:
        model = {k: v for k, v in default_model_config().to_dict().items() if k in MODEL_KEYS}
        model.update(self.model)
        model["seed"] = self.model.get("seed", self.seed)
        tc = self.train_config()
        lines = ["[paths]", f"dataset = {self.dataset}", f"samples = {self.samples}",
                 f"region_map = {self.region_map}", f"output = {self.output}", "",
                 "[causality]", f"alpha = {self.alpha!r}", f"surrogates = {self.surrogates}",
                 f"seed = {self.seed}", f"method = {self.method}",
                 f"block_length = {'' if self.block_length is None else self.block_length}", "",
                 "[signal]", f"target_rate = {self.target_rate!r}",
                 f"window_seconds = {self.window_seconds!r}", f"overlap = {self.overlap!r}",
                 f"bands = {format_bands(self.bands)}", "", "[model]"]
        lines += [f"{k} = {model[k]!r}" if isinstance(model[k], float) else f"{k} = {model[k]}"
                  for k in MODEL_KEYS]
        lines += ["", "[train]"]
        for k in TRAIN_KEYS:
            v = getattr(tc, k)
            lines.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
        lines += ["", "[run]", f"paper_protocol = {str(self.paper_protocol).lower()}",
                  f"topk = {self.topk}", f"granger_order = {self.granger_order}", ""]
        return "\n".join(lines)


_SECTIONS = {
    "paths": ("dataset", "samples", "region_map", "output"),
    "causality": ("alpha", "surrogates", "seed", "method", "block_length"),
    "signal": ("target_rate", "window_seconds", "overlap", "bands"),
    "run": ("paper_protocol", "topk", "granger_order"),
}


def parse_run_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config file: {exc}") from exc
    base = RunConfig()
    kw = {}
    for section in cp.sections():
        if section not in _SECTIONS and section not in ("model", "train"):
            raise ConfigError(f"unknown config section [{section}]")
    for section, keys in _SECTIONS.items():
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            if raw.strip() == "":
                continue
            if key == "bands":
                kw[key] = parse_bands(raw)
            elif key == "block_length":
                kw[key] = _coerce(raw, 1)
            else:
                kw[key] = _coerce(raw, getattr(base, key))
    defaults_m = default_model_config().to_dict()
    for section, allowed, dst in (("model", MODEL_KEYS, "model"), ("train", TRAIN_KEYS, "train")):
        if not cp.has_section(section):
            continue
        out = {}
        ref = defaults_m if section == "model" else TrainConfig().__dict__
        for key, raw in cp.items(section):
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            if raw.strip() != "":
                out[key] = _coerce(raw, ref[key])
        kw[dst] = out
    cfg = replace(base, **kw)
    cfg.validate()
    return cfg


def load_run_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_run_config(text)
