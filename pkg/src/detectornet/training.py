"""Training loop, evaluation and whole-model gradient checking."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .checkpoint import Checkpoint, checkpoint_from_model
from .data import SampleBatch, historical_average
from .errors import ConfigurationError, NumericError
from .graph import DetectorGraph
from .metrics import MetricsReport, evaluate_metrics
from .model import DetectorNet, ModelConfig, masked_mae_loss
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainRunConfig:
    batch_size: int = 64
    lr: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 100
    weight_decay: float = 1e-5
    epochs: int = 200
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "lr_decay", "lr_decay_every", "epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lr", "weight_decay"):  # lr = 0 freezes the model, useful as a control
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {getattr(self, name)}")

    def lr_at(self, epoch: int) -> float:
        """Step schedule, epochs counted from 0."""
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_every)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_mae: float
    seconds: float


@dataclass
class TrainResult:
    model: DetectorNet
    checkpoint: Checkpoint
    trace: list[EpochRecord]
    best_epoch: int

    @property
    def losses(self) -> list[float]:
        return [r.train_loss for r in self.trace]


def predict(model: DetectorNet, batch: SampleBatch, batch_size: int = 256) -> np.ndarray:
    """De-normalised predictions for every window of ``batch``, (B, N, Q, c_p)."""
    outs = []
    for start in range(0, len(batch), batch_size):
        outs.append(model.predict(batch.inputs[start:start + batch_size]))
    if not outs:
        q, c = model.config.output_len, model.config.output_dim
        return np.zeros((0, model.config.n_nodes, q, c))
    return np.concatenate(outs) * batch.std + batch.mean


def masked_mae(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    count = mask.sum()
    return float(np.abs(pred - truth)[mask].sum() / count) if count else float("nan")


def evaluate(model: DetectorNet, batch: SampleBatch) -> MetricsReport:
    start = time.perf_counter()
    pred = predict(model, batch)
    return evaluate_metrics(pred, batch.targets, batch.mask, seconds=time.perf_counter() - start)


def evaluate_baseline(batch: SampleBatch) -> MetricsReport:
    start = time.perf_counter()
    pred = historical_average(batch)
    return evaluate_metrics(pred, batch.targets, batch.mask, seconds=time.perf_counter() - start)


def train(config: ModelConfig, graph: DetectorGraph, train_set: SampleBatch,
          val_set: SampleBatch | None, run: TrainRunConfig | None = None,
          model: DetectorNet | None = None, on_epoch=None) -> TrainResult:
    """Mini-batch Adam on the masked MAE of normalised targets.

    The parameters with the best validation MAE (original units) are restored
    at the end; with an empty validation set the training loss decides.
    Training stops early after ``patience`` epochs without improvement.
    """
    run = run or TrainRunConfig()
    model = model or DetectorNet(config, graph)
    state = AdamState(lr=run.lr, weight_decay=run.weight_decay)
    rng = np.random.default_rng(run.seed)
    targets = train_set.normalized_targets()
    n = len(train_set)
    if n == 0:
        raise ConfigurationError("training set is empty")

    trace: list[EpochRecord] = []
    best_score, best_epoch, best_state = math.inf, -1, model.store.state_dict()
    for epoch in range(run.epochs):
        started = time.perf_counter()
        state.lr = run.lr_at(epoch)
        order = rng.permutation(n)
        total, weight = 0.0, 0
        for b, start in enumerate(range(0, n, run.batch_size)):
            idx = np.sort(order[start:start + run.batch_size])
            mask = train_set.mask[idx]
            if not mask.any():
                continue
            pred = model.forward(train_set.inputs[idx], training=True)
            loss = masked_mae_loss(pred, targets[idx], mask)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"loss diverged ({value}) at epoch {epoch}, batch {b}")
            model.store.zero_grad()
            loss.backward()
            adam_step(model.store, state)
            count = int(mask.sum())
            total += value * count
            weight += count
        train_loss = total / weight if weight else float("nan")

        if val_set is not None and len(val_set):
            val_mae = masked_mae(predict(model, val_set), val_set.targets, val_set.mask)
        else:
            val_mae = float("nan")
        score = val_mae if math.isfinite(val_mae) else train_loss
        record = EpochRecord(epoch, state.lr, train_loss, val_mae, time.perf_counter() - started)
        trace.append(record)
        log.info("epoch %d lr %.2e train %.5f val %.5f (%.1fs)", epoch, state.lr, train_loss,
                 val_mae, record.seconds)
        if on_epoch is not None:
            on_epoch(record)
        if score < best_score:
            best_score, best_epoch, best_state = score, epoch, model.store.state_dict()
        elif epoch - best_epoch >= run.patience:
            break

    model.store.load_state_dict(best_state)
    ckpt = checkpoint_from_model(model, train_set.mean, train_set.std,
                                 {"best_epoch": best_epoch, "epochs_run": len(trace)})
    return TrainResult(model, ckpt, trace, best_epoch)


# gradient check -------------------------------------------------------------

TINY_CONFIG = dict(n_nodes=3, input_len=3, output_len=3, input_dim=2, hidden=4, layers=1,
                   diffusion_order=2, embed_dim=3, predictor_mid=5, dropout=0.0)


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    coords_checked: dict[str, int]
    tolerance: float
    seconds: float = 0.0
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def lines(self) -> list[str]:
        out = [f"{name:40s} {err:.3e} ({self.coords_checked[name]} coords)"
               for name, err in self.max_rel_error.items()]
        status = "PASS" if self.passed else "FAIL " + ", ".join(self.failures)
        out.append(f"max relative error {self.worst:.3e} over {len(self.max_rel_error)} "
                   f"parameters in {self.seconds:.1f}s: {status}")
        return out


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check_model(config: ModelConfig | None = None, seed: int = 0, *, batch: int = 2,
                         coords: int = 32, h: float = 1e-5, tolerance: float = 1e-3,
                         params: list[str] | None = None) -> GradCheckReport:
    """Compare backprop gradients of the masked MAE with central differences.

    Up to ``coords`` coordinates per parameter (all of them when smaller) are
    perturbed by +-h. Parameters whose worst relative error exceeds
    ``tolerance`` are listed in ``failures``.
    """
    config = config or ModelConfig(**TINY_CONFIG, seed=seed)
    rng = np.random.default_rng(seed)
    adj = rng.random((config.n_nodes, config.n_nodes))
    np.fill_diagonal(adj, 0.0)
    graph = DetectorGraph.from_adjacency(adj)
    model = DetectorNet(config, graph)
    x = rng.standard_normal((batch, config.n_nodes, config.input_len, config.input_dim))
    y = rng.standard_normal((batch, config.n_nodes, config.output_len, config.output_dim)) * 2.0
    mask = rng.random(y.shape) > 0.2

    started = time.perf_counter()
    model.store.zero_grad()
    masked_mae_loss(model.forward(x), y, mask).backward()

    def loss_value() -> float:
        with ag.no_grad():
            return masked_mae_loss(model.forward(x), y, mask).item()

    report = GradCheckReport({}, {}, tolerance)
    names = params if params is not None else model.store.names()
    for name in names:
        p = model.store[name]
        flat = p.data.reshape(-1)
        analytic = p.grad.reshape(-1) if p.grad is not None else np.zeros_like(flat)
        picks = np.arange(flat.size) if flat.size <= coords else \
            np.sort(rng.choice(flat.size, size=coords, replace=False))
        worst = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            down = loss_value()
            flat[i] = orig
            worst = max(worst, relative_error(analytic[i], (up - down) / (2 * h)))
        report.max_rel_error[name] = worst
        report.coords_checked[name] = len(picks)
        if worst > tolerance:
            report.failures.append(name)
    report.seconds = time.perf_counter() - started
    return report
