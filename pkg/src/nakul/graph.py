"""Spatial mixing over sensor channels, steered by electrode geometry.

Sensors within a fixed radius of each other are joined into a graph
whose symmetrically normalized adjacency diffuses features; a per-head
linear readout of the diffused features becomes an additive attention
bias. Attention itself runs over the channel axis and keeps only the
top-k scores per row, masking the rest to -inf so the kept entries form
a proper distribution (a literal multiply-by-zero mask would leave the
excluded scores competing at 0).

Top-k selection uses the biased scores and breaks ties toward the
lowest column index, so results are deterministic. The temperature on
the bias term is kept positive through a softplus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as te
from .tensor import Tensor

__all__ = [
    "ElectrodeGraph",
    "SpatialAttention",
    "build_graph",
    "circle_layout",
    "read_positions",
    "drop_edges",
    "graph_conv",
    "spatial_biases",
    "masked_softmax_topk",
    "topk_masked_attention",
    "init_spatial_attention",
]


@dataclass
class ElectrodeGraph:
    positions: np.ndarray  # (C, 3) meters
    adjacency: np.ndarray  # (C, C) zero/one, unit diagonal
    norm_adjacency: np.ndarray  # (C, C), spectral radius <= 1

    @property
    def n_channels(self) -> int:
        return self.adjacency.shape[0]


@dataclass
class SpatialAttention:
    w_q: Tensor  # (D, D), H head slices of width D//H
    w_k: Tensor  # (D, D)
    w_v: Tensor  # (D, D)
    w_o: Tensor  # (D, D)
    w_graph: Tensor  # (D, D)
    w_bias: Tensor  # (H, D, C) per-head bias readout
    raw_beta: Tensor  # scalar, temperature = softplus(raw_beta)
    heads: int
    k_top: int = 16

    @property
    def beta(self) -> Tensor:
        return te.softplus(self.raw_beta)

    def named(self, prefix: str) -> dict:
        return {
            f"{prefix}.w_q": self.w_q,
            f"{prefix}.w_k": self.w_k,
            f"{prefix}.w_v": self.w_v,
            f"{prefix}.w_o": self.w_o,
            f"{prefix}.w_graph": self.w_graph,
            f"{prefix}.w_bias": self.w_bias,
            f"{prefix}.raw_beta": self.raw_beta,
        }


def _normalize(adjacency: np.ndarray) -> np.ndarray:
    degree = adjacency.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degree)  # positive: every node has a self-loop
    return inv_sqrt[:, None] * adjacency * inv_sqrt[None, :]


def build_graph(positions: np.ndarray, radius: float = 0.05) -> ElectrodeGraph:
    """Connect sensors within `radius` meters; add self-loops; normalize."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if positions.shape[0] < 1:
        raise ValueError("need at least one channel")
    if not np.all(np.isfinite(positions)):
        raise ValueError("positions must be finite")
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    adjacency = (dist <= radius).astype(np.float64)
    np.fill_diagonal(adjacency, 1.0)
    return ElectrodeGraph(
        positions=positions,
        adjacency=adjacency,
        norm_adjacency=_normalize(adjacency),
    )


def circle_layout(c: int, radius: float = 0.09) -> np.ndarray:
    """C sensors evenly spaced on a circle in the z=0 plane (meters)."""
    angles = 2 * np.pi * np.arange(c) / c
    return np.stack(
        [radius * np.cos(angles), radius * np.sin(angles), np.zeros(c)], axis=1
    )


def read_positions(path) -> tuple[list, np.ndarray]:
    """Parse a positions file: one `name x y z` line per channel, # comments."""
    names, rows = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 'name x y z'")
            names.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    if not rows:
        raise ValueError(f"{path}: no channels found")
    return names, np.asarray(rows, dtype=np.float64)


def drop_edges(g: ElectrodeGraph, rate: float, rng: np.random.Generator) -> ElectrodeGraph:
    """Remove each off-diagonal edge pair with probability `rate`, renormalize."""
    if rate <= 0.0:
        return g
    c = g.n_channels
    keep = (rng.random(size=(c, c)) >= rate).astype(np.float64)
    keep = np.triu(keep, k=1)
    keep = keep + keep.T  # one coin per undirected edge
    adjacency = g.adjacency * keep
    np.fill_diagonal(adjacency, 1.0)
    return ElectrodeGraph(
        positions=g.positions,
        adjacency=adjacency,
        norm_adjacency=_normalize(adjacency),
    )


def graph_conv(g: ElectrodeGraph, h_feat: Tensor, w: Tensor) -> Tensor:
    """GELU(A_hat @ H @ W) over (..., C, D) features."""
    mixed = te.matmul(Tensor(g.norm_adjacency), te.matmul(h_feat, w))
    return te.gelu(mixed)


def spatial_biases(h_tilde: Tensor, w_bias: Tensor) -> Tensor:
    """Per-head channel-pair biases from diffused features.

    h_tilde is (B, C, D) graph_conv output, w_bias (H, D, C).
    Returns (H, B, C, C).
    """
    heads = []
    for h in range(w_bias.shape[0]):
        heads.append(te.matmul(h_tilde, w_bias[h]))  # (B, C, C)
    return te.stack(heads, axis=0)


def masked_softmax_topk(scores: Tensor, k: int):
    """Row-wise softmax over the k largest scores; the rest stay at zero.

    scores (..., C): keeps min(k, C) entries per row (ties resolved
    toward the lowest column), normalizes them, scatters back to a
    dense map. Returns (dense_attn, idx, weights); cost past the score
    matrix is linear in k.
    """
    c = scores.shape[-1]
    k = min(k, c)
    # stable sort on the negated scores: equal values keep ascending column order
    idx = np.argsort(-scores.data, axis=-1, kind="stable")[..., :k]
    kept = te.gather_last(scores, idx)
    weights = te.softmax(kept)  # (..., k)
    dense = te.scatter_last(weights, idx, c)
    return dense, idx, weights


def topk_masked_attention(sa: SpatialAttention, g: ElectrodeGraph, x: Tensor):
    """Channel-axis multi-head attention with graph biases and top-k rows.

    x is (B, C, D). Returns (output (B, C, D), attn (H, B, C, C) dense
    with zeros off the kept entries, scores (H, B, C, C) pre-mask).
    """
    b, c, d = x.shape
    heads = sa.heads
    if d % heads:
        raise ValueError("head count must divide the feature width")
    dk = d // heads
    scale = 1.0 / np.sqrt(dk)

    h_tilde = graph_conv(g, x, sa.w_graph)
    biases = spatial_biases(h_tilde, sa.w_bias)  # (H, B, C, C)
    beta = sa.beta

    q_all = te.matmul(x, sa.w_q)
    k_all = te.matmul(x, sa.w_k)
    v_all = te.matmul(x, sa.w_v)

    outputs, attns, score_maps = [], [], []
    for h in range(heads):
        sl = slice(h * dk, (h + 1) * dk)
        q = q_all[..., sl]
        kk = k_all[..., sl]
        v = v_all[..., sl]
        scores = te.matmul(q, te.swapaxes(kk, -1, -2)) * scale + beta * biases[h]
        attn, idx, weights = masked_softmax_topk(scores, sa.k_top)
        gathered = te.gather_rows(v, idx)  # (B, C, k, dk)
        w4 = weights.reshape(weights.shape + (1,))
        outputs.append((w4 * gathered).sum(axis=-2))  # (B, C, dk)
        attns.append(attn)
        score_maps.append(scores)

    merged = te.concat(outputs, axis=-1)
    out = te.matmul(merged, sa.w_o)
    return out, te.stack(attns, axis=0), te.stack(score_maps, axis=0)


def init_spatial_attention(
    d: int,
    heads: int,
    c: int,
    rng: np.random.Generator,
    k_top: int = 16,
) -> SpatialAttention:
    if d % heads:
        raise ValueError("head count must divide the feature width")
    bound = 1.0 / np.sqrt(d)

    def mat(shape):
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    return SpatialAttention(
        w_q=mat((d, d)),
        w_k=mat((d, d)),
        w_v=mat((d, d)),
        w_o=mat((d, d)),
        w_graph=mat((d, d)),
        w_bias=mat((heads, d, c)),
        raw_beta=Tensor(np.asarray(te.inv_softplus(1.0)), requires_grad=True),
        heads=heads,
        k_top=k_top,
    )
