"""The dual-branch causal graph network.

Global branch: DConv(K_global) -> DIFFPOOL, whose embedding GNN is the
second K_global DConv and whose assignment GNN is a K_pool DConv, both fed by
the first layer.  Local branch: two DConv(K_local) on the block-diagonal
graph -> per-region attention pooling.  Both branches yield one row per
region; a gate driven by the channel-averaged input features mixes them, a
linear map projects the mix to ``hidden_dim`` and a two-layer classifier
produces the logits.
"""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, ShapeError
from .graphs import RegionMap, default_region_map, degree_transitions
from .rng import CounterRNG


@dataclass
class ModelConfig:
    n_channels: int = 32
    region_sizes: tuple[int, ...] = (4, 7, 4, 4, 5, 5, 3)
    region_names: tuple[str, ...] = ()
    feature_dim: int = 5
    global_hidden: int = 16
    local_hidden: int = 16
    k_global: int = 4
    k_local: int = 2
    k_pool: int = 1
    pooled_nodes: int = 7
    hidden_dim: int = 32
    classifier_hidden: int = 32
    gate_hidden: int = 16
    n_classes: int = 2
    dropout: float = 0.25
    entropy_weight: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.region_sizes = tuple(int(s) for s in self.region_sizes)
        self.region_names = tuple(self.region_names)
        self.validate()

    @classmethod
    def from_region_map(cls, R: RegionMap, **kw) -> "ModelConfig":
        return cls(n_channels=R.n_channels, region_sizes=tuple(R.sizes),
                   region_names=tuple(R.regions), pooled_nodes=len(R.regions), **kw)

    def validate(self) -> None:
        if sum(self.region_sizes) != self.n_channels:
            raise ConfigError(f"region sizes sum to {sum(self.region_sizes)}, "
                              f"expected {self.n_channels} channels")
        if any(s < 1 for s in self.region_sizes):
            raise ConfigError("every region needs at least one channel")
        if self.pooled_nodes != len(self.region_sizes):
            raise ConfigError("pooled node count must equal the region count")
        if self.pooled_nodes >= self.n_channels:
            raise ConfigError("pooling must reduce the node count")
        if self.region_names and len(self.region_names) != len(self.region_sizes):
            raise ConfigError("one name per region")
        if min(self.k_global, self.k_local, self.k_pool) < 1:
            raise ConfigError("diffusion orders must be >= 1")
        if self.global_hidden != self.local_hidden:
            raise ConfigError("gated fusion needs equal global and local widths")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def blocks(self) -> list[tuple[int, int]]:
        out, a = [], 0
        for s in self.region_sizes:
            out.append((a, a + s))
            a += s
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["region_sizes"] = list(self.region_sizes)
        d["region_names"] = list(self.region_names)
        return d


def default_model_config(**kw) -> ModelConfig:
    return ModelConfig.from_region_map(default_region_map(), **kw)


def parameter_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Declaration order of every learnable tensor."""
    d, hg, hl = cfg.feature_dim, cfg.global_hidden, cfg.local_hidden
    R, H = cfg.pooled_nodes, cfg.hidden_dim
    s = OrderedDict()
    s["global.conv1.theta"] = (cfg.k_global, 2, d, hg)
    s["global.conv2.theta"] = (cfg.k_global, 2, hg, hg)
    s["global.pool.theta"] = (cfg.k_pool, 2, hg, R)
    s["local.conv1.theta"] = (cfg.k_local, 2, d, hl)
    s["local.conv2.theta"] = (cfg.k_local, 2, hl, hl)
    for k, C in enumerate(cfg.region_sizes):
        s[f"local.se{k}.W1"] = (C, C)
        s[f"local.se{k}.b1"] = (C,)
        s[f"local.se{k}.W2"] = (C, C)
        s[f"local.se{k}.b2"] = (C,)
    s["fusion.W1"] = (d, cfg.gate_hidden)
    s["fusion.b1"] = (cfg.gate_hidden,)
    s["fusion.W2"] = (cfg.gate_hidden, R)
    s["fusion.b2"] = (R,)
    s["fusion.Wp"] = (R * hg, H)
    s["fusion.bp"] = (H,)
    s["cls.W1"] = (H, cfg.classifier_hidden)
    s["cls.b1"] = (cfg.classifier_hidden,)
    s["cls.W2"] = (cfg.classifier_hidden, cfg.n_classes)
    s["cls.b2"] = (cfg.n_classes,)
    return s


def _fan_in(name: str, shape) -> int:
    if name.endswith("theta"):
        K, two, d, _ = shape
        return K * two * d
    if len(shape) == 2:
        return shape[0]
    return None


@dataclass
class ModelState:
    config: ModelConfig
    params: "OrderedDict[str, np.ndarray]"
    feature_mean: np.ndarray = None
    feature_std: np.ndarray = None

    def __post_init__(self):
        n, d = self.config.n_channels, self.config.feature_dim
        if self.feature_mean is None:
            self.feature_mean = np.zeros((n, d))
        if self.feature_std is None:
            self.feature_std = np.ones((n, d))

    @property
    def param_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    @property
    def fingerprint(self) -> str:
        return architecture_fingerprint(self.config)

    def copy(self) -> "ModelState":
        return ModelState(self.config, OrderedDict((k, v.copy()) for k, v in self.params.items()),
                          self.feature_mean.copy(), self.feature_std.copy())


def architecture_fingerprint(cfg: ModelConfig) -> str:
    shapes = [[k, list(v)] for k, v in parameter_shapes(cfg).items()]
    return hashlib.sha256(json.dumps(shapes).encode()).hexdigest()[:16]


def count_parameters(cfg: ModelConfig) -> int:
    return int(sum(int(np.prod(s)) for s in parameter_shapes(cfg).values()))


def build_model(cfg: ModelConfig) -> ModelState:
    """Symmetric uniform init with bound 1/sqrt(fan_in), seeded per tensor."""
    root = CounterRNG(cfg.seed).spawn(0x1417)
    params = OrderedDict()
    shapes = parameter_shapes(cfg)
    fans = {}
    for k, (name, shape) in enumerate(shapes.items()):
        fan = _fan_in(name, shape)
        if fan is None:  # bias: share the fan-in of its weight
            fan = fans.get(name.rsplit(".", 1)[0] + "." + name.rsplit(".", 1)[1].replace("b", "W"),
                           shape[0])
        fans[name] = fan
        bound = 1.0 / np.sqrt(fan)
        params[name] = (2.0 * root.spawn(k).uniform(shape) - 1.0) * bound
    return ModelState(cfg, params)


def fit_feature_scaler(state: ModelState, X: np.ndarray) -> None:
    """Per-(channel, band) standardisation fitted on training features only."""
    state.feature_mean = X.mean(axis=0)
    sd = X.std(axis=0)
    state.feature_std = np.where(sd > 1e-8, sd, 1.0)


@dataclass
class ForwardResult:
    logits: np.ndarray
    attention: list            # per region (B, C_k)
    gate: np.ndarray           # (B, R)
    assignment: np.ndarray     # (B, n, R)
    entropy: np.ndarray        # (B,)
    global_nodes: np.ndarray = None   # (B, R, h) pooled global embeddings
    local_nodes: np.ndarray = None    # (B, R, h) region summaries
    backward: object = field(repr=False, default=None)


def _params_for(state: ModelState, prefix: str):
    return {k[len(prefix):]: v for k, v in state.params.items() if k.startswith(prefix)}


def forward(state: ModelState, X, A_global, A_local, train_mode: bool = False, seed=0) -> ForwardResult:
    """Batched forward pass.

    ``X`` (B, n, d) raw node features; ``A_global``/``A_local`` (B, n, n).
    ``result.backward(dlogits)`` returns a dict of parameter gradients.
    """
    cfg = state.config
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X, A_global, A_local = X[None], np.asarray(A_global)[None], np.asarray(A_local)[None]
    B, n, d = X.shape
    if (n, d) != (cfg.n_channels, cfg.feature_dim):
        raise ShapeError(f"features {X.shape[1:]} do not match model ({cfg.n_channels}, {cfg.feature_dim})")
    if np.shape(A_global)[-2:] != (n, n) or np.shape(A_local)[-2:] != (n, n):
        raise ShapeError("adjacency matrices must be (n, n)")
    p = state.params
    Xn = (X - state.feature_mean) / state.feature_std
    x0 = Xn.mean(axis=1)
    Pgf, Pgb = degree_transitions(A_global)
    Plf, Plb = degree_transitions(A_local)

    G1, g1_back = nn.dconv_forward(Xn, Pgf, Pgb, p["global.conv1.theta"])
    (Zg, _, S, ent), pool_back = nn.diffpool_forward(
        G1, Pgf, Pgb, A_global, {"pool": p["global.pool.theta"], "embed": p["global.conv2.theta"]},
        entropy_weight=cfg.entropy_weight)
    L1, l1_back = nn.dconv_forward(Xn, Plf, Plb, p["local.conv1.theta"])
    L2, l2_back = nn.dconv_forward(L1, Plf, Plb, p["local.conv2.theta"])
    se = [{"W1": p[f"local.se{k}.W1"], "b1": p[f"local.se{k}.b1"],
           "W2": p[f"local.se{k}.W2"], "b2": p[f"local.se{k}.b2"]} for k in range(len(cfg.blocks))]
    (Zl, weights), att_back = nn.attention_pool_forward(L2, cfg.blocks, se)
    (z, gate), fuse_back = nn.gated_fusion_forward(Zg, Zl, x0, _params_for(state, "fusion."))
    logits, cls_back = nn.classifier_forward(z, _params_for(state, "cls."), cfg.dropout,
                                             train_mode, seed)

    def backward(dlogits):
        grads = {}
        dz, gc = cls_back(dlogits)
        grads.update({f"cls.{k}": v for k, v in gc.items()})
        dZg, dZl, dx0, gf = fuse_back(dz)
        grads.update({f"fusion.{k}": v for k, v in gf.items()})
        dL2, ga = att_back(dZl)
        for k, g in enumerate(ga):
            grads.update({f"local.se{k}.{name}": v for name, v in g.items()})
        dL1, g = l2_back(dL2)
        grads["local.conv2.theta"] = g["theta"]
        _, g = l1_back(dL1)
        grads["local.conv1.theta"] = g["theta"]
        dG1, g = pool_back(dZg)
        grads["global.pool.theta"] = g["pool"]
        grads["global.conv2.theta"] = g["embed"]
        _, g = g1_back(dG1)
        grads["global.conv1.theta"] = g["theta"]
        return OrderedDict((k, grads[k]) for k in p)

    return ForwardResult(logits, weights, gate, S, ent, Zg, Zl, backward)


def loss_and_grads(state: ModelState, X, A_global, A_local, labels, train_mode=False, seed=0):
    res = forward(state, X, A_global, A_local, train_mode, seed)
    loss, dlogits = nn.cross_entropy(res.logits, labels)
    grads = res.backward(dlogits)
    if state.config.entropy_weight:
        loss += state.config.entropy_weight * float(res.entropy.mean())
    return loss, grads, res


def predict(state: ModelState, X, A_global, A_local, batch_size: int = 256) -> np.ndarray:
    out = []
    for a in range(0, len(X), batch_size):
        r = forward(state, X[a:a + batch_size], A_global[a:a + batch_size], A_local[a:a + batch_size])
        out.append(np.argmax(r.logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def attention_weights(state: ModelState, X, A_global, A_local) -> list:
    return forward(state, X, A_global, A_local).attention


def export_attention(state: ModelState, X, A_global, A_local, channels=None):
    """Channel attention averaged over samples: rows ``(region, channel, mean_weight)``."""
    if len(X) < 1:
        raise ValueError("need at least one sample")
    cfg = state.config
    weights = attention_weights(state, X, A_global, A_local)
    names = cfg.region_names or tuple(f"region{k}" for k in range(len(cfg.blocks)))
    channels = channels or [f"ch{i}" for i in range(cfg.n_channels)]
    rows = []
    for k, (a, b) in enumerate(cfg.blocks):
        mean_w = weights[k].mean(axis=0)
        for c in range(b - a):
            rows.append((names[k], channels[a + c], float(mean_w[c])))
    return rows


def attention_csv(rows) -> str:
    lines = ["region,channel,mean_weight"]
    lines += [f"{r},{c},{w!r}" for r, c, w in rows]
    return "\n".join(lines) + "\n"


def save_model(state: ModelState, path, extra: dict | None = None) -> None:
    tensors = OrderedDict(state.params)
    tensors["buffer.feature_mean"] = state.feature_mean
    tensors["buffer.feature_std"] = state.feature_std
    meta = {"config": state.config.to_dict(), "fingerprint": state.fingerprint,
            "param_count": state.param_count, "seed": state.config.seed}
    meta.update(extra or {})
    nn.save_weights(path, tensors, meta)


def load_model(path) -> ModelState:
    tensors, header = nn.load_weights(path)
    cfg = ModelConfig(**header["config"])
    mean = tensors.pop("buffer.feature_mean")
    std = tensors.pop("buffer.feature_std")
    shapes = parameter_shapes(cfg)
    if list(tensors) != list(shapes) or any(tensors[k].shape != shapes[k] for k in shapes):
        raise ShapeError("weight file does not match its declared architecture")
    return ModelState(cfg, OrderedDict(tensors), mean, std)
