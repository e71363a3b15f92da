"""Static transition matrices and the learned dynamic adjacency."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DataError, DimensionError
from .optim import ParamStore


def row_normalize(a: np.ndarray) -> np.ndarray:
    """Divide each row by its sum; all-zero rows stay zero."""
    sums = a.sum(axis=1, keepdims=True)
    out = np.zeros_like(a, dtype=np.float64)
    np.divide(a, sums, out=out, where=sums > 0)
    return out


def build_transitions(adjacency) -> tuple[np.ndarray, np.ndarray]:
    """Forward and backward random-walk transition matrices of ``adjacency``."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"adjacency must be square, got shape {a.shape}")
    if np.any(a < 0):
        i, j = np.argwhere(a < 0)[0]
        raise DataError(f"adjacency entry ({i}, {j}) is negative: {a[i, j]}")
    if not np.all(np.isfinite(a)):
        raise DataError("adjacency contains NaN or Inf")
    return row_normalize(a), row_normalize(a.T)


@dataclass(frozen=True)
class DetectorGraph:
    adjacency: np.ndarray
    p_forward: np.ndarray
    p_backward: np.ndarray

    @classmethod
    def from_adjacency(cls, adjacency) -> "DetectorGraph":
        a = np.asarray(adjacency, dtype=np.float64)
        p_f, p_b = build_transitions(a)
        return cls(a, p_f, p_b)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]


@dataclass
class DynamicAdjacencyParams:
    """Node embeddings, Hadamard gates and the spatial query/key maps.

    ``w_q``/``w_k`` project a node's flattened (time x channel) window to the
    attention width.
    """

    e1: Tensor
    e2: Tensor
    w_att: Tensor
    w_adp: Tensor
    w_q: Tensor
    w_k: Tensor

    @classmethod
    def create(cls, store: ParamStore, prefix: str, n_nodes: int, in_len: int,
               channels: int, embed_dim: int) -> "DynamicAdjacencyParams":
        flat = in_len * channels
        return cls(
            e1=store.normal(f"{prefix}.e1", (n_nodes, embed_dim), 0.1),
            e2=store.normal(f"{prefix}.e2", (n_nodes, embed_dim), 0.1),
            w_att=store.full(f"{prefix}.w_att", (n_nodes, n_nodes), 1.0),
            w_adp=store.full(f"{prefix}.w_adp", (n_nodes, n_nodes), 1.0),
            w_q=store.xavier(f"{prefix}.w_q", flat, channels),
            w_k=store.xavier(f"{prefix}.w_k", flat, channels),
        )

    @staticmethod
    def count(n_nodes: int, in_len: int, channels: int, embed_dim: int) -> int:
        return 2 * n_nodes * embed_dim + 2 * n_nodes * n_nodes + 2 * in_len * channels * channels


def adaptive_adjacency(e1, e2) -> Tensor:
    """Row-softmax of the embedding product ``e1 @ e2.T``."""
    e1, e2 = ag.as_tensor(e1), ag.as_tensor(e2)
    if e1.shape[-1] != e2.shape[-1]:
        raise DimensionError(f"embedding widths differ: {e1.shape} vs {e2.shape}")
    return ag.softmax(ag.matmul(e1, ag.swapaxes(e2, -1, -2)), axis=-1)


def attention_adjacency(x, w_q, w_k) -> Tensor:
    """Scaled dot-product scores between nodes, left unnormalised.

    ``x`` is (..., N, P, C); each node's P x C slice is flattened before the
    query/key projections.
    """
    x = ag.as_tensor(x)
    if x.ndim < 3:
        raise DimensionError(f"expected (..., N, P, C) input, got {x.shape}")
    *lead, n, p, c = x.shape
    flat = ag.reshape(x, (*lead, n, p * c))
    if w_q.shape[0] != p * c or w_k.shape[0] != p * c:
        raise DimensionError(
            f"spatial projections {w_q.shape}/{w_k.shape} expect flattened width {p * c}")
    q = ag.matmul(flat, w_q)
    k = ag.matmul(flat, w_k)
    d_k = k.shape[-1]
    return ag.matmul(q, ag.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d_k))


def fuse_dynamic_adjacency(a_att, a_adp, w_att, w_adp) -> Tensor:
    gated = ag.mul(w_att, a_att) + ag.mul(w_adp, a_adp)
    return ag.softmax(gated, axis=-1)


def dynamic_adjacency(x: Tensor, params: DynamicAdjacencyParams) -> Tensor:
    """Input-dependent adjacency for one layer, shape (..., N, N)."""
    a_att = attention_adjacency(x, params.w_q, params.w_k)
    a_adp = adaptive_adjacency(params.e1, params.e2)
    return fuse_dynamic_adjacency(a_att, a_adp, params.w_att, params.w_adp)
