"""Dynamic spatial graph convolution (diffusion over static and learned graphs)."""

from __future__ import annotations

from dataclasses import dataclass

from . import autograd as ag
from .autograd import Dropout, Tensor
from .errors import DimensionError
from .graph import DetectorGraph, DynamicAdjacencyParams, dynamic_adjacency
from .layers import FeedForwardParams, feed_forward
from .optim import ParamStore


@dataclass
class DsgcnParams:
    """Per-order weights ``forward[k]``, ``backward[k]``, ``dynamic[k]`` for k = 0..K.

    A list is None when its term is ablated: ``forward``/``backward`` without
    the static graph, ``dynamic`` (together with ``adjacency``) without the
    learned graph.
    """

    order: int
    forward: list[Tensor] | None
    backward: list[Tensor] | None
    dynamic: list[Tensor] | None
    adjacency: DynamicAdjacencyParams | None
    ffn: FeedForwardParams

    @classmethod
    def create(cls, store: ParamStore, prefix: str, *, n_nodes: int, in_len: int,
               c_in: int, c_out: int, order: int, embed_dim: int, ffn_hidden: int,
               use_static: bool = True, use_dynamic: bool = True) -> "DsgcnParams":
        if order < 0:
            raise ValueError(f"diffusion order must be >= 0, got {order}")

        def weights(tag):
            return [store.xavier(f"{prefix}.w{k}_{tag}", c_in, c_out) for k in range(order + 1)]

        fwd = weights("f") if use_static else None
        bwd = weights("b") if use_static else None
        dyn = weights("d") if use_dynamic else None
        adj = DynamicAdjacencyParams.create(store, f"{prefix}.adj", n_nodes, in_len, c_in,
                                            embed_dim) if use_dynamic else None
        ffn = FeedForwardParams.create(store, f"{prefix}.ffn", c_out, ffn_hidden)
        return cls(order, fwd, bwd, dyn, adj, ffn)

    @staticmethod
    def count(*, n_nodes: int, in_len: int, c_in: int, c_out: int, order: int,
              embed_dim: int, ffn_hidden: int, use_static: bool = True,
              use_dynamic: bool = True) -> int:
        terms = 2 * use_static + use_dynamic
        n = terms * (order + 1) * c_in * c_out
        if use_dynamic:
            n += DynamicAdjacencyParams.count(n_nodes, in_len, c_in, embed_dim)
        return n + FeedForwardParams.count(c_out, ffn_hidden)

    def conv_weight_count(self) -> int:
        return sum(w.size for ws in (self.forward, self.backward, self.dynamic) if ws for w in ws)


def _propagate(matrix, x: Tensor) -> Tensor:
    """Apply an (..., N, N) node-mixing matrix to (..., N, P, C) features."""
    *lead, n, p, c = x.shape
    flat = ag.reshape(x, (*lead, n, p * c))
    mixed = ag.matmul(matrix, flat)
    return ag.reshape(mixed, mixed.shape[:-1] + (p, c))


def dynamic_diffusion_conv(x, p_forward, p_backward, a_dynamic, params: DsgcnParams) -> Tensor:
    """Sum over k of ``P_f^k X W_k1 + P_b^k X W_k2 + A_dyn^k X W_k3``.

    Powers are applied by repeated propagation; k = 0 is the identity.
    """
    x = ag.as_tensor(x)
    n = x.shape[-3]
    terms = []
    if params.forward is not None:
        terms.append((p_forward, params.forward))
        terms.append((p_backward, params.backward))
    if params.dynamic is not None:
        terms.append((a_dynamic, params.dynamic))
    for matrix, _ in terms:
        if matrix.shape[-2:] != (n, n):
            raise DimensionError(f"transition matrix {matrix.shape} does not match N={n}")

    z = None
    for matrix, weights in terms:
        h = x
        for k, w in enumerate(weights):
            if k > 0:
                h = _propagate(matrix, h)
            term = ag.matmul(h, w)
            z = term if z is None else z + term
    return z


def dsgcn_forward(x, graph: DetectorGraph, params: DsgcnParams, training: bool = False,
                  dropout: Dropout | None = None) -> Tensor:
    """Spatial layer: recompute the dynamic adjacency from ``x``, convolve, feed-forward."""
    x = ag.as_tensor(x)
    if x.shape[-3] != graph.n_nodes:
        raise DimensionError(f"input has {x.shape[-3]} nodes, graph has {graph.n_nodes}")
    a_dyn = dynamic_adjacency(x, params.adjacency) if params.adjacency is not None else None
    p_f = ag.Tensor(graph.p_forward)
    p_b = ag.Tensor(graph.p_backward)
    z = dynamic_diffusion_conv(x, p_f, p_b, a_dyn, params)
    return feed_forward(z, params.ffn, training, dropout)

