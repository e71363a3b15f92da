"""Detector series I/O, sliding windows, synthetic data and the HA baseline."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError

SECONDS_PER_DAY = 86400


@dataclass
class DetectorSeries:
    timestamps: np.ndarray  # datetime64[s], shape (T,)
    values: np.ndarray  # (T, N)
    interval_seconds: int
    node_ids: list[str]

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != len(self.timestamps):
            raise DataError(f"values {self.values.shape} do not match {len(self.timestamps)} timestamps")
        if self.values.shape[1] != len(self.node_ids):
            raise DataError(f"{self.values.shape[1]} value columns but {len(self.node_ids)} node ids")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    def time_of_day(self) -> np.ndarray:
        """Fraction of the day elapsed at each timestamp, in [0, 1)."""
        secs = self.timestamps.astype("datetime64[s]").astype(np.int64)
        return (secs % SECONDS_PER_DAY) / SECONDS_PER_DAY


def _format_value(v: float) -> str:
    return repr(float(v))


def load_series_csv(path) -> DetectorSeries:
    """Read ``timestamp,<id1>,<id2>,...`` rows into a DetectorSeries."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if len(header) < 2:
            raise FormatError(f"{path}:1: header needs a timestamp column and at least one node id")
        node_ids = header[1:]
        stamps, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                stamps.append(np.datetime64(datetime.fromisoformat(row[0]), "s"))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad timestamp {row[0]!r}") from None
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no data rows")
    ts = np.array(stamps, dtype="datetime64[s]")
    values = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        bad = int(np.argwhere(~np.isfinite(values))[0][0])
        raise FormatError(f"{path}:{bad + 2}: non-finite value (record missing data as 0)")
    interval = 0
    if len(ts) > 1:
        steps = np.diff(ts).astype(np.int64)
        interval = int(steps[0])
        if interval <= 0:
            raise FormatError(f"{path}:3: timestamps must be strictly increasing")
        bad = np.flatnonzero(steps != interval)
        if bad.size:
            row = int(bad[0]) + 1
            raise FormatError(
                f"{path}:{row + 2}: timestamp {ts[row]} breaks the {interval}s interval "
                f"(previous {ts[row - 1]})")
    return DetectorSeries(ts, values, interval, node_ids)


def write_series_csv(path, series: DetectorSeries):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", *series.node_ids])
        for stamp, row in zip(series.timestamps, series.values):
            writer.writerow([str(stamp), *(_format_value(v) for v in row)])


def read_edges_csv(path) -> list[tuple[str, str, float]]:
    path = Path(path)
    edges = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["from", "to", "distance"]:
            raise FormatError(f"{path}:1: expected header 'from,to,distance'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                dist = float(row[2])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad distance {row[2]!r}") from None
            if not math.isfinite(dist) or dist < 0:
                raise FormatError(f"{path}:{lineno}: distance must be finite and >= 0")
            edges.append((row[0], row[1], dist))
    return edges


def write_edges_csv(path, edges):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["from", "to", "distance"])
        for a, b, d in edges:
            writer.writerow([a, b, _format_value(d)])


def adjacency_from_edges(edges, node_ids, sigma: float | None = None,
                         threshold: float = 0.1) -> np.ndarray:
    """Thresholded Gaussian kernel ``exp(-d^2 / sigma^2)`` over listed distances.

    ``sigma`` defaults to the standard deviation of the listed distances.
    """
    index = {nid: i for i, nid in enumerate(node_ids)}
    n = len(node_ids)
    dists = np.array([d for _, _, d in edges], dtype=np.float64)
    if sigma is None:
        sigma = float(dists.std()) if dists.size else 1.0
    if sigma <= 0:
        sigma = 1.0
    adj = np.zeros((n, n))
    for a, b, d in edges:
        if a not in index or b not in index:
            unknown = a if a not in index else b
            raise FormatError(f"edge ({a}, {b}) references unknown node id {unknown!r}")
        w = math.exp(-(d * d) / (sigma * sigma))
        adj[index[a], index[b]] = w if w >= threshold else 0.0
    return adj


def load_adjacency_csv(path, node_ids, sigma: float | None = None,
                       threshold: float = 0.1) -> np.ndarray:
    """Adjacency matrix from a ``from,to,distance`` edge file.

    ``node_ids`` fixes the row order; an int gives ids ``"0".."n-1"``.
    """
    if isinstance(node_ids, int):
        node_ids = [str(i) for i in range(node_ids)]
    try:
        return adjacency_from_edges(read_edges_csv(path), node_ids, sigma, threshold)
    except FormatError as exc:
        if str(path) in str(exc):
            raise
        raise FormatError(f"{path}: {exc}") from None


# windows --------------------------------------------------------------------

@dataclass
class SampleBatch:
    """Windowed samples: normalised inputs and raw targets.

    ``inputs`` is (B, N, P, D) with the value channel z-scored and, when
    D = 2, time of day as the second channel. ``targets`` is (B, N, Q, 1) in
    original units and ``mask`` is False exactly where the target is 0.
    """

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    mean: float
    std: float
    offsets: np.ndarray  # series index of each window's first input step
    raw_inputs: np.ndarray  # (B, N, P) value channel in original units

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, index) -> "SampleBatch":
        return SampleBatch(self.inputs[index], self.targets[index], self.mask[index],
                           self.mean, self.std, self.offsets[index], self.raw_inputs[index])

    def normalized_targets(self) -> np.ndarray:
        return (self.targets - self.mean) / self.std


def split_counts(n_windows: int, split=(0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    if len(split) != 3 or any(s < 0 for s in split) or not math.isclose(sum(split), 1.0):
        raise DataError(f"split ratios must be three non-negative numbers summing to 1, got {split}")
    n_train = int(round(n_windows * split[0]))
    n_val = int(round(n_windows * split[1]))
    return n_train, n_val, n_windows - n_train - n_val


def normalization_stats(series: DetectorSeries, input_len: int, n_train: int) -> tuple[float, float]:
    """Mean/std of the non-missing values covered by training inputs only."""
    rows = series.values[: n_train + input_len - 1]
    observed = rows[rows != 0]
    if observed.size == 0:
        return 0.0, 1.0
    std = float(observed.std())
    return float(observed.mean()), std if std > 0 else 1.0


def make_windows(series: DetectorSeries, input_len: int = 12, output_len: int = 12,
                 split=(0.7, 0.1, 0.2), input_dim: int = 2,
                 stats: tuple[float, float] | None = None):
    """Stride-1 sliding windows split chronologically into (train, val, test).

    ``stats`` overrides the train-split normalisation (used when restoring a
    checkpoint).
    """
    t, n = series.values.shape
    if input_dim not in (1, 2):
        raise DataError(f"input_dim must be 1 (value) or 2 (value, time of day), got {input_dim}")
    n_windows = t - input_len - output_len + 1
    if n_windows < 1:
        raise DataError(f"series of {t} steps is too short for P={input_len}, Q={output_len}")
    n_train, n_val, _ = split_counts(n_windows, split)
    mean, std = stats if stats is not None else normalization_stats(series, input_len, n_train)

    offsets = np.arange(n_windows)
    idx_in = offsets[:, None] + np.arange(input_len)[None, :]
    idx_out = offsets[:, None] + input_len + np.arange(output_len)[None, :]
    values = series.values
    raw = np.ascontiguousarray(np.transpose(values[idx_in], (0, 2, 1)))  # (B, N, P)
    x = ((raw - mean) / std)[..., None]
    if input_dim == 2:
        tod = series.time_of_day()[idx_in]  # (B, P)
        tod = np.broadcast_to(tod[:, None, :, None], x.shape).astype(np.float64)
        x = np.concatenate([x, tod], axis=-1)
    y = np.transpose(values[idx_out], (0, 2, 1))[..., None]
    mask = y != 0
    full = SampleBatch(np.ascontiguousarray(x), np.ascontiguousarray(y), mask, mean, std, offsets,
                       raw)
    bounds = np.cumsum([0, n_train, n_val, n_windows - n_train - n_val])
    return tuple(full.subset(slice(bounds[i], bounds[i + 1])) for i in range(3))


# synthetic data -------------------------------------------------------------

def daily_profile(hours: np.ndarray, base: float = 65.0, depth: float = 1.0) -> np.ndarray:
    """Speed-like daily curve: morning and evening rush-hour dips on a gentle wave."""
    morning = 25.0 * np.exp(-0.5 * ((hours - 8.0) / 1.0) ** 2)
    evening = 30.0 * np.exp(-0.5 * ((hours - 17.5) / 1.2) ** 2)
    return base - depth * (morning + evening) + 3.0 * np.sin(2 * np.pi * hours / 24.0)


def synthesize_dataset(n_nodes: int, n_steps: int, seed: int = 0, *, noise: float = 1.5,
                       coupling: float = 0.15, lag: int = 3, persistence: float = 0.8,
                       base: float = 65.0, depth: float = 1.0, interval_seconds: int = 300,
                       missing_rate: float = 0.0, start: str = "2024-01-01T00:00:00"):
    """Ring-road toy data: a daily speed profile plus upstream-lagged disturbances.

    Node i's daily profile trails node i-1 by ``lag`` steps, and its deviation
    follows ``d_i(t) = persistence * d_i(t-1) + coupling * d_{i-1}(t-lag)
    + noise * eps``. Keep ``persistence + coupling < 1`` for a stable series.
    Returns ``(series, edges)`` with edges as ``(from, to, distance)`` tuples of
    the directed ring.
    """
    if n_nodes < 2:
        raise DataError(f"need at least 2 nodes, got {n_nodes}")
    rng = np.random.default_rng(seed)
    per_day = SECONDS_PER_DAY // interval_seconds
    t = np.arange(n_steps)
    phase = (t[:, None] - lag * np.arange(n_nodes)[None, :]) % per_day
    daily = daily_profile(phase * 24.0 / per_day, base, depth)

    dev = np.zeros((n_steps, n_nodes))
    eps = rng.standard_normal((n_steps, n_nodes))
    upstream = np.roll(np.arange(n_nodes), 1)
    for step in range(1, n_steps):
        drive = dev[step - lag, upstream] if step >= lag else 0.0
        dev[step] = persistence * dev[step - 1] + coupling * drive + noise * eps[step]
    values = np.maximum(daily + dev, 1.0)
    if missing_rate > 0:
        values[rng.random(values.shape) < missing_rate] = 0.0

    start_ts = np.datetime64(start, "s")
    stamps = start_ts + np.arange(n_steps) * np.timedelta64(interval_seconds, "s")
    node_ids = [str(i) for i in range(n_nodes)]
    lengths = rng.uniform(0.5, 1.5, size=n_nodes)
    edges = [(node_ids[i], node_ids[(i + 1) % n_nodes], float(lengths[i])) for i in range(n_nodes)]
    return DetectorSeries(stamps, values, interval_seconds, node_ids), edges


# baseline -------------------------------------------------------------------

def historical_average(batch: SampleBatch, output_len: int | None = None) -> np.ndarray:
    """Per-node mean of the raw input window, repeated for every horizon.

    Missing (zero) inputs are ignored; an all-missing window predicts 0.
    """
    raw = batch.raw_inputs
    q = batch.targets.shape[-2] if output_len is None else output_len
    observed = raw != 0
    counts = observed.sum(axis=-1)
    sums = np.where(observed, raw, 0.0).sum(axis=-1)
    mean = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return np.repeat(mean[..., None, None], q, axis=-2)
