"""Multi-view temporal attention module.

The input window of each layer is cut into three chronological views
(long = oldest third, medium, short = most recent third). Each view runs its
own single-head self-attention, a global attention runs over the whole window,
and the results are fused with a residual projection before a feed-forward
block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Dropout, Tensor
from .errors import ConfigurationError, DimensionError
from .layers import FeedForwardParams, feed_forward
from .optim import ParamStore

VIEWS = ("long", "medium", "short")


@dataclass
class ViewSplit:
    short: Tensor
    medium: Tensor
    long: Tensor
    indices: dict[str, np.ndarray]

    def chronological(self) -> list[Tensor]:
        return [self.long, self.medium, self.short]


def split_views(x) -> ViewSplit:
    """Cut the time axis (second to last) of ``x`` into three equal blocks."""
    x = ag.as_tensor(x)
    p = x.shape[-2]
    if p % 3 != 0:
        raise ConfigurationError(f"input length P={p} must be a multiple of 3 to split views")
    m = p // 3
    blocks = {name: slice(i * m, (i + 1) * m) for i, name in enumerate(VIEWS)}
    parts = {name: ag.getitem(x, (Ellipsis, s, slice(None))) for name, s in blocks.items()}
    indices = {name: np.arange(s.start, s.stop) for name, s in blocks.items()}
    return ViewSplit(short=parts["short"], medium=parts["medium"], long=parts["long"],
                     indices=indices)


def attention_weights(x: Tensor, w_q: Tensor, w_k: Tensor) -> Tensor:
    q = ag.matmul(x, w_q)
    k = ag.matmul(x, w_k)
    d_k = k.shape[-1]
    return ag.softmax(ag.matmul(q, ag.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d_k)), axis=-1)


def scaled_dot_attention(x, w_q, w_k, w_v) -> Tensor:
    """Self-attention over the time axis of ``x`` (..., T, C_in) -> (..., T, C_out)."""
    x = ag.as_tensor(x)
    if x.shape[-1] != w_q.shape[0]:
        raise DimensionError(f"attention input width {x.shape[-1]} vs projection {w_q.shape}")
    a = attention_weights(x, w_q, w_k)
    return ag.matmul(a, ag.matmul(x, w_v))


@dataclass
class AttentionTriplet:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor

    @classmethod
    def create(cls, store: ParamStore, prefix: str, c_in: int, c_out: int) -> "AttentionTriplet":
        return cls(*(store.xavier(f"{prefix}.w_{s}", c_in, c_out) for s in "qkv"))

    def __call__(self, x: Tensor) -> Tensor:
        return scaled_dot_attention(x, self.w_q, self.w_k, self.w_v)


@dataclass
class MtamParams:
    """Weights of one temporal layer.

    ``views`` is None when the multi-view branch is ablated and ``global_attn``
    is None without global attention. ``beta``/``gamma`` are plain floats
    unless they were registered as learnable scalars.
    """

    views: dict[str, AttentionTriplet] | None
    global_attn: AttentionTriplet | None
    w_res: Tensor
    beta: Tensor | float
    gamma: Tensor | float
    ffn: FeedForwardParams

    @classmethod
    def create(cls, store: ParamStore, prefix: str, c_in: int, c_out: int, *,
               ffn_hidden: int, use_views: bool = True, use_global: bool = True,
               learnable_coeffs: bool = False, beta: float = 1.0,
               gamma: float = 1.0) -> "MtamParams":
        views = None
        if use_views:
            views = {v: AttentionTriplet.create(store, f"{prefix}.{v}", c_in, c_out) for v in VIEWS}
        global_attn = AttentionTriplet.create(store, f"{prefix}.global", c_in, c_out) \
            if use_global else None
        w_res = store.xavier(f"{prefix}.w_res", c_in, c_out)
        if learnable_coeffs:
            beta = store.full(f"{prefix}.beta", (), beta) if use_global else beta
            gamma = store.full(f"{prefix}.gamma", (), gamma)
        ffn = FeedForwardParams.create(store, f"{prefix}.ffn", c_out, ffn_hidden)
        return cls(views, global_attn, w_res, beta, gamma, ffn)

    @staticmethod
    def count(c_in: int, c_out: int, *, ffn_hidden: int, use_views: bool = True,
              use_global: bool = True, learnable_coeffs: bool = False) -> int:
        triplet = 3 * c_in * c_out
        n = 3 * triplet * use_views + triplet * use_global + c_in * c_out
        if learnable_coeffs:
            n += 1 + use_global
        return n + FeedForwardParams.count(c_out, ffn_hidden)


def fuse_temporal(x: Tensor, params: MtamParams, training: bool = False,
                  dropout: Dropout | None = None) -> Tensor:
    """Multi-view + beta * global + gamma * residual, before the feed-forward block."""
    drop = dropout if dropout is not None else (lambda t, _training: t)
    fused = params.gamma * ag.linear(x, params.w_res)
    if params.global_attn is not None:
        fused = fused + params.beta * drop(params.global_attn(x), training)
    if params.views is not None:
        split = split_views(x)
        parts = [params.views[name](getattr(split, name)) for name in VIEWS]
        multi = ag.concat([drop(m, training) for m in parts], axis=-2)
        fused = multi + fused
    return fused


def mtam_forward(x, params: MtamParams, training: bool = False,
                 dropout: Dropout | None = None) -> Tensor:
    """One temporal layer: (..., N, P, C_in) -> (..., N, P, C_out)."""
    x = ag.as_tensor(x)
    fused = fuse_temporal(x, params, training, dropout)
    return feed_forward(fused, params.ffn, training, dropout)
