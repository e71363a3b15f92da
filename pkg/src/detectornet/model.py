"""DetectorNet: input lift, stacked temporal/spatial layers, convolutional predictor."""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Dropout, Tensor
from .errors import ConfigurationError, DetectorNetError, DimensionError
from .graph import DetectorGraph
from .optim import ParamStore
from .spatial import DsgcnParams, dsgcn_forward
from .temporal import MtamParams, mtam_forward

ABLATIONS = ("without_mta", "without_gta", "without_da", "without_sa")


@dataclass(frozen=True)
class ModelConfig:
    """Every architectural hyperparameter.

    ``input_len``/``output_len`` are P/Q, ``input_dim`` is D (speed plus
    time-of-day by default), ``hidden`` is the channel width C, ``layers`` is
    L and ``diffusion_order`` is K.
    """

    n_nodes: int
    input_len: int = 12
    output_len: int = 12
    input_dim: int = 2
    hidden: int = 32
    layers: int = 2
    diffusion_order: int = 2
    embed_dim: int = 10
    dropout: float = 0.3
    learnable_coeffs: bool = False
    beta: float = 1.0
    gamma: float = 1.0
    ffn_factor: int = 2
    predictor_mid: int = 64
    output_dim: int = 1
    without_mta: bool = False
    without_gta: bool = False
    without_da: bool = False
    without_sa: bool = False
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("n_nodes", "input_len", "output_len", "input_dim", "hidden", "layers",
                     "embed_dim", "ffn_factor", "predictor_mid", "output_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.diffusion_order < 0:
            raise ConfigurationError(f"diffusion_order must be >= 0, got {self.diffusion_order}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.without_mta and self.without_gta:
            raise ConfigurationError("without_mta and without_gta together remove all temporal attention")
        if self.without_da and self.without_sa:
            raise ConfigurationError("without_da and without_sa together remove all graph convolution")
        if not self.without_mta and self.input_len % 3:
            raise ConfigurationError(
                f"input_len={self.input_len} must be a multiple of 3 for the view split")
        if (self.hidden * self.input_len) % self.output_len:
            raise ConfigurationError(
                f"hidden*input_len={self.hidden * self.input_len} is not divisible by "
                f"output_len={self.output_len}")

    @property
    def ffn_hidden(self) -> int:
        return self.ffn_factor * self.hidden

    @property
    def st_channels(self) -> int:
        return self.hidden * self.input_len // self.output_len

    @property
    def ablations(self) -> tuple[str, ...]:
        return tuple(a for a in ABLATIONS if getattr(self, a))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class PredictorParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class ModelParams:
    input_w: Tensor
    input_b: Tensor
    layers: list[tuple[MtamParams, DsgcnParams]] = field(default_factory=list)
    head: PredictorParams | None = None


def build_params(config: ModelConfig, store: ParamStore) -> ModelParams:
    c = config.hidden
    params = ModelParams(
        input_w=store.xavier("input.w", config.input_dim, c),
        input_b=store.zeros("input.b", (c,)),
    )
    for layer in range(config.layers):
        mtam = MtamParams.create(
            store, f"layer{layer}.mtam", c, c, ffn_hidden=config.ffn_hidden,
            use_views=not config.without_mta, use_global=not config.without_gta,
            learnable_coeffs=config.learnable_coeffs, beta=config.beta, gamma=config.gamma)
        dsgcn = DsgcnParams.create(
            store, f"layer{layer}.dsgcn", n_nodes=config.n_nodes, in_len=config.input_len,
            c_in=c, c_out=c, order=config.diffusion_order, embed_dim=config.embed_dim,
            ffn_hidden=config.ffn_hidden, use_static=not config.without_sa,
            use_dynamic=not config.without_da)
        params.layers.append((mtam, dsgcn))
    params.head = PredictorParams(
        w1=store.xavier("head.w1", config.st_channels, config.predictor_mid),
        b1=store.zeros("head.b1", (config.predictor_mid,)),
        w2=store.xavier("head.w2", config.predictor_mid, config.output_dim),
        b2=store.zeros("head.b2", (config.output_dim,)),
    )
    return params


def parameter_count(config: ModelConfig) -> int:
    """Closed-form number of trainable scalars.

    input lift D*C + C
    per layer, temporal: 9*C*C views (unless without_mta) + 3*C*C global
      (unless without_gta) + C*C residual + learnable beta/gamma + FFN
    per layer, spatial: (2*static + dynamic)*(K+1)*C*C diffusion weights
      + dynamic-graph parameters 2*N*d_e + 2*N*N + 2*P*C*C (unless without_da) + FFN
    FFN: 2*C*H + H + C biases and LayerNorm gain/bias 2*C, with H = ffn_factor*C
    predictor C_ST*mid + mid + mid*c_p + c_p
    """
    c = config.hidden
    total = config.input_dim * c + c
    per_layer = MtamParams.count(
        c, c, ffn_hidden=config.ffn_hidden, use_views=not config.without_mta,
        use_global=not config.without_gta, learnable_coeffs=config.learnable_coeffs)
    per_layer += DsgcnParams.count(
        n_nodes=config.n_nodes, in_len=config.input_len, c_in=c, c_out=c,
        order=config.diffusion_order, embed_dim=config.embed_dim,
        ffn_hidden=config.ffn_hidden, use_static=not config.without_sa,
        use_dynamic=not config.without_da)
    total += config.layers * per_layer
    mid = config.predictor_mid
    total += config.st_channels * mid + mid + mid * config.output_dim + config.output_dim
    return total


def input_projection(x_raw, weight, bias) -> Tensor:
    """Kernel-size-1 convolution lifting D input channels to C."""
    x_raw = ag.as_tensor(x_raw)
    if x_raw.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"input feature width {x_raw.shape[-1]} does not match projection {weight.shape}")
    return ag.linear(x_raw, weight, bias)


def predictor_head(x_last, head: PredictorParams, output_len: int) -> Tensor:
    """Regroup (..., N, P, C) into (..., N, Q, C*P/Q) and apply two pointwise convs."""
    x_last = ag.as_tensor(x_last)
    *lead, n, p, c = x_last.shape
    if (p * c) % output_len:
        raise ConfigurationError(f"P*C={p * c} is not divisible by Q={output_len}")
    st = ag.reshape(x_last, (*lead, n, output_len, p * c // output_len))
    h = ag.relu(ag.linear(st, head.w1, head.b1))
    return ag.linear(h, head.w2, head.b2)


def detectornet_forward(window, graph: DetectorGraph, params: ModelParams, config: ModelConfig,
                        training: bool = False, dropout: Dropout | None = None) -> Tensor:
    """(..., N, P, D) normalised window -> (..., N, Q, c_p) prediction."""
    window = ag.as_tensor(window)
    expected = (config.n_nodes, config.input_len, config.input_dim)
    if window.shape[-3:] != expected:
        raise DimensionError(f"window shape {window.shape} does not end with {expected}")
    if graph.n_nodes != config.n_nodes:
        raise DimensionError(f"graph has {graph.n_nodes} nodes, config expects {config.n_nodes}")
    x = input_projection(window, params.input_w, params.input_b)
    for index, (mtam, dsgcn) in enumerate(params.layers):
        try:
            x = mtam_forward(x, mtam, training, dropout)
            x = dsgcn_forward(x, graph, dsgcn, training, dropout)
        except DetectorNetError as exc:
            raise type(exc)(f"layer {index}: {exc}") from exc
    return predictor_head(x, params.head, config.output_len)


def masked_mae_loss(pred, truth, mask=None) -> Tensor:
    """Mean absolute error over entries where ``mask`` is true.

    An empty mask yields a zero loss (still attached to the graph) and a
    RuntimeWarning.
    """
    pred = ag.as_tensor(pred)
    truth = np.asarray(truth.data if isinstance(truth, Tensor) else truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {truth.shape}")
    mask = np.ones(truth.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != truth.shape:
        raise DimensionError(f"mask shape {mask.shape} != target shape {truth.shape}")
    count = int(mask.sum())
    if count == 0:
        warnings.warn("masked_mae_loss: mask selects no entries", RuntimeWarning, stacklevel=2)
        return ag.tsum(pred) * 0.0
    err = ag.tabs(ag.sub(pred, np.where(mask, truth, 0.0)))
    return ag.tsum(ag.mul(err, mask.astype(np.float64))) * (1.0 / count)


class DetectorNet:
    """A parameter store wired to a graph and a configuration."""

    def __init__(self, config: ModelConfig, graph: DetectorGraph):
        if graph.n_nodes != config.n_nodes:
            raise ConfigurationError(
                f"graph has {graph.n_nodes} nodes, config expects {config.n_nodes}")
        self.config = config
        self.graph = graph
        seeds = np.random.SeedSequence(config.seed).spawn(2)
        self.store = ParamStore(int(seeds[0].generate_state(1)[0]))
        self.params = build_params(config, self.store)
        self.dropout = Dropout(config.dropout, np.random.default_rng(seeds[1]))

    def forward(self, window, training: bool = False) -> Tensor:
        return detectornet_forward(window, self.graph, self.params, self.config,
                                   training, self.dropout)

    __call__ = forward

    def predict(self, window) -> np.ndarray:
        with ag.no_grad():
            return self.forward(window, training=False).data

    def n_parameters(self) -> int:
        return self.store.n_scalars()


def apply_ablation(config: ModelConfig, flags, graph: DetectorGraph) -> DetectorNet:
    """Build a model with the named components switched off."""
    flags = [flags] if isinstance(flags, str) else list(flags)
    bad = [f for f in flags if f not in ABLATIONS]
    if bad:
        raise ConfigurationError(f"unknown ablation flag(s) {bad}; expected any of {ABLATIONS}")
    return DetectorNet(config.replace(**{f: True for f in flags}), graph)
