"""Layers with hand-derived gradients.

Every ``*_forward`` function works on a batch (leading axis ``B``) and
returns ``(output, backward)``; ``backward`` maps the upstream gradient to
``(input gradients..., param_grads)`` where ``param_grads`` is a dict keyed
like the ``params`` dict that was passed in.

Weight files: 8-byte magic ``b"LFGNNW01"``, uint64 little-endian header
length, a UTF-8 JSON header ``{"tensors": [{"name", "shape"}, ...], ...}``
and the float64 little-endian payload of every tensor in header order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptFile, FormatError, IoError, ShapeError
from .rng import CounterRNG, as_rng

WEIGHTS_MAGIC = b"LFGNNW01"


@dataclass
class LayerSpec:
    kind: str
    in_width: int
    out_width: int
    order: int = 1
    region_sizes: tuple[int, ...] = ()
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("diffusion order K must be >= 1")
        if self.in_width < 1 or self.out_width < 1:
            raise ValueError("widths must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def relu(x):
    return np.maximum(x, 0.0)


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(s, ds, axis=-1):
    return s * (ds - (ds * s).sum(axis=axis, keepdims=True))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --------------------------------------------------------------------------
# diffusion convolution

def dconv_forward(X, P_fwd, P_bwd, theta, activation: str = "relu"):
    """Bidirectional diffusion convolution.

    ``X`` (B, n, d); ``P_fwd``/``P_bwd`` (B, n, n) or (n, n); ``theta``
    (K, 2, d, q) holding the forward and backward weight of each hop.
    Output ``act(sum_k P_fwd^k X theta[k,0] + P_bwd^k X theta[k,1])``.
    """
    X = np.asarray(X, dtype=np.float64)
    _check(X.ndim == 3, f"X must be (B, n, d), got {X.shape}")
    K, two, d, q = theta.shape
    _check(two == 2 and d == X.shape[2], f"theta {theta.shape} does not fit X {X.shape}")
    n = X.shape[1]
    _check(P_fwd.shape[-2:] == (n, n) and P_bwd.shape[-2:] == (n, n),
           f"transition matrices must be ({n}, {n})")
    Hf, Hb = [X], [X]
    for _ in range(1, K):
        Hf.append(P_fwd @ Hf[-1])
        Hb.append(P_bwd @ Hb[-1])
    pre = sum(Hf[k] @ theta[k, 0] + Hb[k] @ theta[k, 1] for k in range(K))
    if activation == "relu":
        out = relu(pre)
    elif activation == "linear":
        out = pre
    else:
        raise ValueError(f"unknown activation {activation!r}")

    def backward(dout):
        dpre = dout * (pre > 0) if activation == "relu" else dout
        dtheta = np.empty_like(theta)
        for k in range(K):
            dtheta[k, 0] = np.einsum("bnd,bnq->dq", Hf[k], dpre)
            dtheta[k, 1] = np.einsum("bnd,bnq->dq", Hb[k], dpre)
        Pf_t = np.swapaxes(P_fwd, -1, -2)
        Pb_t = np.swapaxes(P_bwd, -1, -2)
        gf = dpre @ theta[K - 1, 0].T
        gb = dpre @ theta[K - 1, 1].T
        for k in range(K - 2, -1, -1):
            gf = Pf_t @ gf + dpre @ theta[k, 0].T
            gb = Pb_t @ gb + dpre @ theta[k, 1].T
        return gf + gb, {"theta": dtheta}

    return out, backward


# --------------------------------------------------------------------------
# differentiable pooling

def diffpool_forward(X, P_fwd, P_bwd, A, params, entropy_weight: float = 0.0, assignment=None):
    """Soft cluster assignment ``S = softmax(GNN_pool(X))``; ``X' = S^T Z``, ``A' = S^T A S``.

    ``params`` holds ``pool`` (Kp, 2, d, m) and ``embed`` (Ke, 2, d, d').
    ``assignment`` forces S (bypassing the pooling GNN), for ablations.
    Returns ``((X', A', S, entropy), backward)``; ``backward(dX', dA'=None)``
    returns ``(dX, grads)`` and includes the entropy term scaled by
    ``entropy_weight`` when that is nonzero.
    """
    A = np.asarray(A, dtype=np.float64)
    Z, z_back = dconv_forward(X, P_fwd, P_bwd, params["embed"], "relu")
    if assignment is None:
        logits, p_back = dconv_forward(X, P_fwd, P_bwd, params["pool"], "linear")
        S = softmax(logits, axis=-1)
    else:
        S = np.broadcast_to(np.asarray(assignment, dtype=np.float64),
                            X.shape[:2] + (np.shape(assignment)[-1],))
        p_back = None
    m = S.shape[-1]
    _check(m < X.shape[1], f"pooled size {m} must be below node count {X.shape[1]}")
    St = np.swapaxes(S, -1, -2)
    Xp = St @ Z
    Ap = St @ A @ S
    logS = np.log(np.clip(S, 1e-300, None))
    entropy = -(S * logS).sum(axis=-1).mean(axis=-1)  # (B,)

    def backward(dXp, dAp=None):
        dS = Z @ np.swapaxes(dXp, -1, -2)
        dZ = S @ dXp
        if dAp is not None:
            At = np.swapaxes(A, -1, -2)
            dS = dS + A @ S @ np.swapaxes(dAp, -1, -2) + At @ S @ dAp
        if entropy_weight:
            dS = dS - entropy_weight * (logS + 1.0) / S.shape[-2]
        dX, gz = z_back(dZ)
        grads = {"embed": gz["theta"]}
        if p_back is not None:
            dX_p, gp = p_back(softmax_backward(S, dS))
            dX = dX + dX_p
            grads["pool"] = gp["theta"]
        else:
            grads["pool"] = np.zeros_like(params["pool"])
        return dX, grads

    return (Xp, Ap, S, entropy), backward


# --------------------------------------------------------------------------
# squeeze-and-excitation attention pooling

def attention_pool_forward(X, blocks, params):
    """Per-region attention pooling.

    ``X`` (B, n, d) in region-contiguous order; ``blocks`` the (start, stop)
    slice of every region; ``params[k]`` the dict ``W1 (C, h), b1 (h),
    W2 (h, C), b2 (C)`` of region k.  The squeeze is the mean over the
    feature axis.  Returns ``((Y, weights), backward)`` with ``Y`` (B, R, d)
    and ``weights`` a list of (B, C_k) softmax weights.
    """
    X = np.asarray(X, dtype=np.float64)
    B, n, d = X.shape
    _check(blocks[-1][1] == n, "region blocks must cover every node")
    Y = np.empty((B, len(blocks), d))
    weights, cache = [], []
    for k, (a, b) in enumerate(blocks):
        _check(b > a, f"region {k} is empty")
        p = params[k]
        C = b - a
        _check(p["W1"].shape[0] == C and p["W2"].shape[1] == C,
               f"SE parameters of region {k} expect {p['W1'].shape[0]} channels, got {C}")
        Xk = X[:, a:b, :]
        s = Xk.mean(axis=-1)
        pre = s @ p["W1"] + p["b1"]
        h = relu(pre)
        w = softmax(h @ p["W2"] + p["b2"], axis=-1)
        Y[:, k, :] = np.einsum("bc,bcd->bd", w, Xk)
        weights.append(w)
        cache.append((Xk, s, pre, h, w))

    def backward(dY):
        dX = np.zeros_like(X)
        grads = []
        for k, (a, b) in enumerate(blocks):
            p = params[k]
            Xk, s, pre, h, w = cache[k]
            dy = dY[:, k, :]
            dw = np.einsum("bcd,bd->bc", Xk, dy)
            dXk = w[:, :, None] * dy[:, None, :]
            dlog = softmax_backward(w, dw)
            dh = dlog @ p["W2"].T
            dpre = dh * (pre > 0)
            ds = dpre @ p["W1"].T
            dXk = dXk + ds[:, :, None] / d
            dX[:, a:b, :] = dXk
            grads.append({"W1": s.T @ dpre, "b1": dpre.sum(0),
                          "W2": h.T @ dlog, "b2": dlog.sum(0)})
        return dX, grads

    return (Y, weights), backward


# --------------------------------------------------------------------------
# gated fusion

def gated_fusion_forward(Zg, Zl, x0, params, gate=None):
    """Per-node gate mixing two branch outputs, then a linear projection.

    ``g = sigmoid(MLP(x0))`` (B, R); ``fused = g*Zg + (1-g)*Zl``;
    output ``vec(fused) @ Wp + bp`` (B, H).  ``gate`` forces g.
    Returns ``((z, g), backward)``; ``backward(dz)`` gives ``(dZg, dZl, dx0, grads)``.
    """
    Zg = np.asarray(Zg, dtype=np.float64)
    Zl = np.asarray(Zl, dtype=np.float64)
    _check(Zg.shape == Zl.shape, f"branch outputs differ: {Zg.shape} vs {Zl.shape}")
    B, R, d = Zg.shape
    _check(params["Wp"].shape[0] == R * d, "projection does not match fused size")
    pre = x0 @ params["W1"] + params["b1"]
    h = relu(pre)
    if gate is None:
        g = sigmoid(h @ params["W2"] + params["b2"])
    else:
        g = np.broadcast_to(np.asarray(gate, dtype=np.float64), (B, R))
    fused = g[:, :, None] * Zg + (1.0 - g[:, :, None]) * Zl
    flat = fused.reshape(B, R * d)
    z = flat @ params["Wp"] + params["bp"]

    def backward(dz):
        dflat = dz @ params["Wp"].T
        dfused = dflat.reshape(B, R, d)
        dZg = g[:, :, None] * dfused
        dZl = (1.0 - g[:, :, None]) * dfused
        grads = {"Wp": flat.T @ dz, "bp": dz.sum(0)}
        if gate is None:
            dg = (dfused * (Zg - Zl)).sum(-1)
            dglog = dg * g * (1.0 - g)
            grads["W2"] = h.T @ dglog
            grads["b2"] = dglog.sum(0)
            dpre = (dglog @ params["W2"].T) * (pre > 0)
            grads["W1"] = x0.T @ dpre
            grads["b1"] = dpre.sum(0)
            dx0 = dpre @ params["W1"].T
        else:
            for key in ("W1", "b1", "W2", "b2"):
                grads[key] = np.zeros_like(params[key])
            dx0 = np.zeros_like(x0)
        return dZg, dZl, dx0, grads

    return (z, g), backward


# --------------------------------------------------------------------------
# classifier and loss

def dropout_mask(shape, rate: float, seed) -> np.ndarray:
    """Inverted-dropout mask: kept units scaled by 1/(1-rate)."""
    if rate <= 0.0:
        return np.ones(shape)
    keep = as_rng(seed).uniform(shape) >= rate
    return keep / (1.0 - rate)


def classifier_forward(z, params, dropout_rate: float = 0.0, train_mode: bool = False, seed=0):
    """linear -> ReLU -> dropout -> linear; returns ``(logits, backward)``."""
    z = np.asarray(z, dtype=np.float64)
    pre = z @ params["W1"] + params["b1"]
    h = relu(pre)
    mask = dropout_mask(h.shape, dropout_rate, seed) if train_mode else np.ones_like(h)
    hd = h * mask
    logits = hd @ params["W2"] + params["b2"]

    def backward(dlogits):
        grads = {"W2": hd.T @ dlogits, "b2": dlogits.sum(0)}
        dh = (dlogits @ params["W2"].T) * mask
        dpre = dh * (pre > 0)
        grads["W1"] = z.T @ dpre
        grads["b1"] = dpre.sum(0)
        return dpre @ params["W1"].T, grads

    return logits, backward


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    L = logits[None] if single else logits
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    z = L - L.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(len(y)), y].mean()
    grad = np.exp(logp)
    grad[np.arange(len(y)), y] -= 1.0
    grad /= len(y)
    return float(loss), (grad[0] if single else grad)


# --------------------------------------------------------------------------
# finite-difference verification

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_tensor: dict[str, float] = field(default_factory=dict)
    checked: int = 0
    tolerance: float = 1e-5

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def rel_error(analytic, numeric, floor: float = 1e-4):
    a = np.abs(analytic)
    b = np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, b), floor)


def grad_check(fn, inputs: dict, h: float = 1e-5, tolerance: float = 1e-5,
               floor: float = 1e-4, max_per_tensor: int | None = None, seed: int = 0):
    """Central-difference check of ``fn``.

    ``fn(inputs) -> (loss, grads)`` where ``grads`` has the keys of
    ``inputs``.  Each checked entry is perturbed by +-h;
    the relative error is ``|a - n| / max(|a|, |n|, floor)``.
    ``max_per_tensor`` samples a seeded subset of entries per tensor.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in inputs.items()}
    _, grads = fn(work)
    rng = CounterRNG(seed)
    report = GradCheckReport(0.0, tolerance=tolerance)
    for name, arr in work.items():
        flat = arr.reshape(-1)
        ga = np.asarray(grads[name], dtype=np.float64).reshape(-1)
        _check(ga.size == flat.size, f"gradient of {name} has wrong size")
        idx = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            idx = np.sort(rng.spawn(len(report.per_tensor)).permutation(flat.size)[:max_per_tensor])
        num = np.empty(idx.size)
        for m, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = fn(work)[0]
            flat[i] = old - h
            fm = fn(work)[0]
            flat[i] = old
            num[m] = (fp - fm) / (2.0 * h)
        err = float(rel_error(ga[idx], num, floor).max()) if idx.size else 0.0
        report.per_tensor[name] = err
        report.max_rel_error = max(report.max_rel_error, err)
        report.checked += idx.size
    return report


# --------------------------------------------------------------------------
# weight files

def save_weights(path, tensors: dict, meta: dict | None = None) -> None:
    from .data import _atomic_write

    names = list(tensors)
    header = dict(meta or {})
    header["tensors"] = [{"name": k, "shape": list(np.shape(tensors[k]))} for k in names]
    hbytes = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(tensors[k], dtype="<f8").tobytes() for k in names)
    _atomic_write(Path(path), WEIGHTS_MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + payload)


def load_weights(path):
    """Returns ``(tensors, header)``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read weights {path}: {exc}") from exc
    if raw[:8] != WEIGHTS_MAGIC:
        raise FormatError(f"{path} is not a weight file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    pos = 16 + hlen
    tensors = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        chunk = raw[pos:pos + 8 * count]
        if len(chunk) != 8 * count:
            raise CorruptFile(f"{path}: truncated tensor {t['name']}")
        tensors[t["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(t["shape"]).astype(np.float64)
        pos += 8 * count
    if pos != len(raw):
        raise CorruptFile(f"{path}: {len(raw) - pos} trailing bytes")
    return tensors, header
