"""Adjacency construction from flow decompositions, transition matrices and graph export."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .causality import FlowDecomposition, SignificanceConfig, analyze
from .errors import ConfigError, FormatError, IoError
from .numerics import TimeSeriesSet

log = logging.getLogger(__name__)


@dataclass
class RegionMap:
    """Channel-to-region assignment with a canonical region-contiguous ordering."""

    regions: list[str]
    assignment: dict[str, str]
    channels: list[str] = field(default_factory=list)  # canonical order

    def __post_init__(self):
        if not self.channels:
            self.channels = [c for r in self.regions for c, rr in self.assignment.items() if rr == r]
        unknown = set(self.assignment.values()) - set(self.regions)
        if unknown:
            raise ConfigError(f"channels assigned to undeclared regions: {sorted(unknown)}")
        if sorted(self.channels) != sorted(self.assignment):
            raise ConfigError("canonical ordering must be a permutation of the mapped channels")
        seen = []
        for c in self.channels:
            r = self.assignment[c]
            if seen and seen[-1] != r and r in seen:
                raise ConfigError(f"region {r} is not contiguous in the ordering")
            if not seen or seen[-1] != r:
                seen.append(r)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def region_of(self, channel: str) -> str:
        return self.assignment[channel]

    def members(self, region: str) -> list[str]:
        return [c for c in self.channels if self.assignment[c] == region]

    @property
    def sizes(self) -> list[int]:
        return [len(self.members(r)) for r in self.regions]

    @property
    def blocks(self) -> list[tuple[int, int]]:
        out, start = [], 0
        for s in self.sizes:
            out.append((start, start + s))
            start += s
        return out

    def order_for(self, labels) -> np.ndarray:
        """Indices that reorder ``labels`` into the canonical ordering."""
        labels = list(labels)
        if sorted(labels) != sorted(self.channels):
            missing = set(self.channels) ^ set(labels)
            raise ConfigError(f"channels do not match the region map: {sorted(missing)}")
        pos = {c: k for k, c in enumerate(labels)}
        return np.array([pos[c] for c in self.channels])

    def block_mask(self) -> np.ndarray:
        n = self.n_channels
        M = np.zeros((n, n), dtype=bool)
        for a, b in self.blocks:
            M[a:b, a:b] = True
        return M

    def to_text(self) -> str:
        return "".join(f"{c},{self.assignment[c]}\n" for c in self.channels)


def parse_region_map(text: str) -> RegionMap:
    regions, assignment, order = [], {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2 or not all(parts):
            raise FormatError(f"region map line {lineno}: expected 'channel,region'")
        ch, reg = parts
        if ch in assignment:
            raise FormatError(f"region map line {lineno}: channel {ch} listed twice")
        assignment[ch] = reg
        order.append(ch)
        if reg not in regions:
            regions.append(reg)
    return RegionMap(regions, assignment)


def load_region_map(path) -> RegionMap:
    try:
        return parse_region_map(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read region map {path}: {exc}") from exc


def default_region_map() -> RegionMap:
    """Seven-region partition of a 32-channel 10-20 montage."""
    text = resources.files("lfgnn.resources").joinpath("regions_32.csv").read_text()
    return parse_region_map(text)


@dataclass
class CausalGraph:
    labels: list[str]
    adjacency: np.ndarray          # A[i, j] = strength i -> j
    p_values: np.ndarray | None = None
    kind: str = "global"           # "global" | "local"
    regions: list[str] | None = None

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def density(self) -> float:
        n = self.n
        return float(np.count_nonzero(self.adjacency)) / max(1, n * (n - 1))


def build_global_adjacency(F: FlowDecomposition, alpha: float) -> CausalGraph:
    """``A[i, j] = |tau[i -> j]|`` for edges with ``p <= alpha``, else 0."""
    if F.tau is None or F.p_values is None:
        raise ValueError("flow decomposition needs tau and p_values")
    keep = F.p_values <= alpha
    A = np.where(keep, np.abs(F.tau), 0.0)
    np.fill_diagonal(A, 0.0)
    return CausalGraph(list(F.labels), A, F.p_values.copy(), "global")


def graph_from_series(X: TimeSeriesSet, cfg: SignificanceConfig, step: int = 1) -> CausalGraph:
    return build_global_adjacency(analyze(X, cfg, step), cfg.alpha)


def build_local_adjacency(X: TimeSeriesSet, R: RegionMap, cfg: SignificanceConfig,
                          step: int = 1) -> CausalGraph:
    """Block-diagonal adjacency: flows estimated within each region only.

    The result is in the canonical ordering of ``R``.
    """
    Xo = X.select(R.order_for(X.labels))
    n = Xo.n_channels
    A = np.zeros((n, n))
    P = np.ones((n, n))
    for region, (a, b) in zip(R.regions, R.blocks):
        if b - a < 2:
            log.warning("region %s has %d channel(s); its local block is empty", region, b - a)
            continue
        G = graph_from_series(Xo.select(range(a, b)), cfg, step)
        A[a:b, a:b] = G.adjacency
        P[a:b, a:b] = G.p_values
    regions = [R.region_of(c) for c in Xo.labels]
    return CausalGraph(list(Xo.labels), A, P, "local", regions)


def degree_transitions(A) -> tuple[np.ndarray, np.ndarray]:
    """Forward ``D_O^-1 A`` and backward ``D_I^-1 A^T`` transition matrices.

    Accepts a graph or an array with optional leading batch axes.  Rows of
    nodes with zero out- (in-) degree are left at zero.
    """
    if isinstance(A, CausalGraph):
        A = A.adjacency
    A = np.asarray(A, dtype=np.float64)
    At = np.swapaxes(A, -1, -2)
    out_deg = A.sum(axis=-1, keepdims=True)
    in_deg = At.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        P_fwd = np.where(out_deg > 0, A / out_deg, 0.0)
        P_bwd = np.where(in_deg > 0, At / in_deg, 0.0)
    return P_fwd, P_bwd


def topk_sparsify(A: np.ndarray, k: int) -> np.ndarray:
    """Keep the ``k`` largest-magnitude incoming entries of every target column.

    Ties go to the smaller source index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if k >= n:
        return A.copy()
    order = np.argsort(-np.abs(A), axis=0, kind="stable")
    keep = np.zeros_like(A, dtype=bool)
    np.put_along_axis(keep, order[:k], True, axis=0)
    return np.where(keep, A, 0.0)


# --------------------------------------------------------------------------
# export

def graph_to_json(G: CausalGraph) -> str:
    regions = G.regions or [None] * G.n
    nodes = [{"id": k, "label": lab, "region": regions[k]} for k, lab in enumerate(G.labels)]
    edges = []
    src, dst = np.nonzero(G.adjacency)
    for i, j in zip(src.tolist(), dst.tolist()):
        p = None if G.p_values is None else float(G.p_values[i, j])
        edges.append({"src": i, "dst": j, "weight": float(G.adjacency[i, j]), "p": p})
    return json.dumps({"kind": G.kind, "nodes": nodes, "edges": edges}, indent=1) + "\n"


def graph_from_json(text: str) -> CausalGraph:
    d = json.loads(text)
    n = len(d["nodes"])
    A = np.zeros((n, n))
    has_p = any(e.get("p") is not None for e in d["edges"])
    P = np.ones((n, n)) if has_p else None
    for e in d["edges"]:
        A[e["src"], e["dst"]] = e["weight"]
        if has_p and e.get("p") is not None:
            P[e["src"], e["dst"]] = e["p"]
    regions = [nd.get("region") for nd in d["nodes"]]
    regions = None if all(r is None for r in regions) else regions
    return CausalGraph([nd["label"] for nd in d["nodes"]], A, P, d.get("kind", "global"), regions)


def graph_to_dot(G: CausalGraph) -> str:
    lines = ["digraph causal {"]
    for lab in G.labels:
        lines.append(f'  "{lab}";')
    src, dst = np.nonzero(G.adjacency)
    for i, j in zip(src.tolist(), dst.tolist()):
        w = G.adjacency[i, j]
        lines.append(f'  "{G.labels[i]}" -> "{G.labels[j]}" [weight={w:.6g}, label="{w:.3g}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_to_csv(G: CausalGraph) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["src", "dst", "weight", "p"])
    src, dst = np.nonzero(G.adjacency)
    for i, j in zip(src.tolist(), dst.tolist()):
        p = "" if G.p_values is None else repr(float(G.p_values[i, j]))
        w.writerow([G.labels[i], G.labels[j], repr(float(G.adjacency[i, j])), p])
    return buf.getvalue()


def export_graph(G: CausalGraph, fmt: str, path) -> Path:
    writers = {"json": graph_to_json, "dot": graph_to_dot, "csv": graph_to_csv}
    if fmt not in writers:
        raise ConfigError(f"unknown graph format {fmt!r}")
    from .data import _atomic_write

    path = Path(path)
    _atomic_write(path, writers[fmt](G).encode())
    return path


def load_graph_json(path) -> CausalGraph:
    try:
        return graph_from_json(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read graph {path}: {exc}") from exc


def flow_to_csv(F: FlowDecomposition) -> str:
    """One row per ordered pair: source, target, T, tau, p."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source", "target", "flow", "tau", "p"])
    for j in range(F.n):
        for i in range(F.n):
            if i == j:
                continue
            tau = "" if F.tau is None else repr(float(F.tau[j, i]))
            p = "" if F.p_values is None else repr(float(F.p_values[j, i]))
            w.writerow([F.labels[j], F.labels[i], repr(float(F.flow[j, i])), tau, p])
    return buf.getvalue()
