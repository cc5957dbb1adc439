"""Characteristic-function graph embedding for dandelion graphs.

Vertices are embedded by evaluating, at a fixed grid of points, the cosine
and sine characteristic values of vertex coordinates weighted by powers of
the row-normalized affinity matrix, then mean-pooling over vertices. The
result is a fixed-length vector of 2 * d_c * s * r entries in [-1, 1],
invariant to centroid vertex order and differentiable with respect to the
vertex coordinates.

Layout of the output vector: scale-major, then feature dimension, then
evaluation point, cosine before sine.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import DandelionGraph

DEFAULT_EVAL_POINTS = tuple(np.linspace(0.5, 4.0, 8).tolist())


@dataclass(frozen=True)
class FeatherParams:
    eval_points: tuple[float, ...] = DEFAULT_EVAL_POINTS
    scales: int = 2
    affinity: str = "inverse"   # a_ij = 1 / (1 + w_ij)

    def __post_init__(self):
        pts = tuple(float(p) for p in self.eval_points)
        if len(pts) < 1 or any(p <= 0 for p in pts):
            raise ValueError("eval_points must be nonempty and strictly positive")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("eval_points must be strictly increasing")
        if self.scales < 1:
            raise ValueError("scales must be >= 1")
        if self.affinity != "inverse":
            raise ValueError(f"unsupported affinity transform: {self.affinity!r}")
        object.__setattr__(self, "eval_points", pts)

    def embedding_dim(self, d_c: int) -> int:
        return 2 * d_c * len(self.eval_points) * self.scales


@dataclass
class GraphEmbedding:
    values: np.ndarray  # (d_g,)


def _pairwise_sq_dists(vertices: Tensor) -> Tensor:
    sq = ad.tsum(ad.mul(vertices, vertices), axis=1)          # (n, 1)
    gram = ad.matmul(vertices, ad.transpose(vertices))        # (n, n)
    return ad.add(ad.sub(sq, ad.mul(gram, 2.0)), ad.transpose(sq))


def feather_embed_vertices(vertices, params: FeatherParams) -> Tensor:
    """Differentiable embedding of a vertex coordinate matrix (n, d_c)."""
    v = vertices if isinstance(vertices, Tensor) else Tensor(np.asarray(vertices, dtype=np.float64))
    n, d_c = v.data.shape
    if n < 2:
        raise ValueError("graph embedding needs at least 2 vertices (isolated row)")
    w = _pairwise_sq_dists(v)
    off_diag = 1.0 - np.eye(n)
    affinity = ad.mul(ad.div(1.0, ad.add(w, 1.0)), Tensor(off_diag))
    row_sums = ad.tsum(affinity, axis=1)
    if np.any(row_sums.data <= 0.0):
        raise ValueError("isolated vertex: affinity row sums to zero")
    walk = ad.div(affinity, row_sums)

    blocks = []
    power = None
    for _ in range(params.scales):
        power = walk if power is None else ad.matmul(power, walk)
        rows = []
        for theta in params.eval_points:
            arg = ad.mul(v, theta)
            pooled_cos = ad.tmean(ad.matmul(power, ad.cos(arg)), axis=0)
            pooled_sin = ad.tmean(ad.matmul(power, ad.sin(arg)), axis=0)
            rows.append(pooled_cos)
            rows.append(pooled_sin)
        # (2s, d_c) with rows ordered (eval point, cos/sin); transposing and
        # flattening row-major yields (feature, eval point, cos/sin).
        stacked = ad.concat(rows, axis=0)
        blocks.append(ad.reshape(ad.transpose(stacked), 1, 2 * len(params.eval_points) * d_c))
    return ad.concat(blocks, axis=1)


def feather_embed(graph: DandelionGraph, params: FeatherParams) -> GraphEmbedding:
    """Embed a dandelion graph; affinities derive from its vertex distances."""
    values = feather_embed_vertices(graph.vertices, params)
    return GraphEmbedding(values=values.data.reshape(-1).copy())
