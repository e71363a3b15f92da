"""Position-wise feed-forward block shared by the temporal and spatial modules."""

from __future__ import annotations

from dataclasses import dataclass

from . import autograd as ag
from .autograd import Dropout, Tensor
from .optim import ParamStore


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln_gain: Tensor
    ln_bias: Tensor

    @classmethod
    def create(cls, store: ParamStore, prefix: str, width: int, hidden: int) -> "FeedForwardParams":
        return cls(
            w1=store.xavier(f"{prefix}.w1", width, hidden),
            b1=store.zeros(f"{prefix}.b1", (hidden,)),
            w2=store.xavier(f"{prefix}.w2", hidden, width),
            b2=store.zeros(f"{prefix}.b2", (width,)),
            ln_gain=store.full(f"{prefix}.ln_gain", (width,), 1.0),
            ln_bias=store.zeros(f"{prefix}.ln_bias", (width,)),
        )

    @staticmethod
    def count(width: int, hidden: int) -> int:
        return 2 * width * hidden + hidden + 3 * width


def feed_forward(z: Tensor, p: FeedForwardParams, training: bool = False,
                 dropout: Dropout | None = None) -> Tensor:
    """``LayerNorm(ReLU(W2 ReLU(W1 z)) + z)``; dropout hits the hidden activations."""
    h = ag.relu(ag.linear(z, p.w1, p.b1))
    if dropout is not None:
        h = dropout(h, training)
    out = ag.relu(ag.linear(h, p.w2, p.b2))
    return ag.layer_norm(out + z, p.ln_gain, p.ln_bias)
