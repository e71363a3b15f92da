"""Flat ``key = value`` run configuration shared by every CLI subcommand."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .errors import DetectorNetError
from .model import ABLATIONS, ModelConfig
from .training import TrainRunConfig


class UsageError(DetectorNetError):
    """Bad command line or configuration; carries the offending key when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _ablations(text: str) -> tuple[str, ...]:
    flags = tuple(f.strip() for f in text.split(",") if f.strip())
    bad = [f for f in flags if f not in ABLATIONS]
    if bad:
        raise ValueError(f"unknown ablation {bad[0]!r}; choose from {', '.join(ABLATIONS)}")
    return flags


def _int_list(text: str) -> tuple[int, ...]:
    values = tuple(int(v) for v in text.split(",") if v.strip())
    if not values or any(v < 1 for v in values):
        raise ValueError(f"expected positive integers separated by commas, got {text!r}")
    return values


@dataclass(frozen=True)
class Key:
    name: str
    default: str
    parse: Callable[[str], Any]
    help: str


KEYS: list[Key] = [
    # data
    Key("series_path", "series.csv", str, "detector series CSV (relative paths resolve against the output dir)"),
    Key("adjacency_path", "adjacency.csv", str, "edge list CSV with from,to,distance"),
    Key("sigma", "auto", _optional_float, "Gaussian kernel width; auto = std of listed distances"),
    Key("threshold", "0.1", float, "kernel weights below this are dropped"),
    Key("train_ratio", "0.7", float, "chronological split, train share"),
    Key("val_ratio", "0.1", float, "chronological split, validation share"),
    Key("test_ratio", "0.2", float, "chronological split, test share"),
    # model
    Key("input_len", "12", int, "P, input window length"),
    Key("output_len", "12", int, "Q, forecast horizon length"),
    Key("input_dim", "2", int, "D, 1 = value only, 2 = value + time of day"),
    Key("hidden", "32", int, "C, hidden channel width"),
    Key("layers", "2", int, "L, stacked temporal+spatial layers"),
    Key("diffusion_order", "2", int, "K, diffusion steps"),
    Key("embed_dim", "10", int, "node embedding width for the adaptive adjacency"),
    Key("dropout", "0.3", float, "dropout rate on attention outputs and FFN hidden units"),
    Key("learnable_coeffs", "false", _bool, "learn beta/gamma instead of fixing them"),
    Key("beta", "1.0", float, "weight of the global attention branch"),
    Key("gamma", "1.0", float, "weight of the residual projection"),
    Key("ffn_factor", "2", int, "FFN hidden width as a multiple of C"),
    Key("predictor_mid", "64", int, "width between the two predictor convolutions"),
    Key("output_dim", "1", int, "c_p, predicted channels"),
    Key("ablate", "", _ablations, "comma list of without_mta, without_gta, without_da, without_sa"),
    # training
    Key("batch_size", "64", int, "mini-batch size"),
    Key("lr", "0.001", float, "initial Adam learning rate"),
    Key("lr_decay", "0.5", float, "learning-rate multiplier per decay period"),
    Key("lr_decay_every", "100", int, "epochs per decay period"),
    Key("weight_decay", "1e-05", float, "L2 penalty coefficient"),
    Key("epochs", "200", int, "maximum epochs"),
    Key("patience", "20", int, "early-stopping patience in epochs"),
    Key("seed", "0", int, "seed for initialisation, dropout, shuffling and synthesis"),
    # evaluation
    Key("horizons", "3,6,12", _int_list, "horizons (steps) reported by eval"),
    # synthesis
    Key("synth_nodes", "8", int, "ring size for synth"),
    Key("synth_steps", "2016", int, "time steps for synth (288 per day)"),
    Key("synth_noise", "1.5", float, "innovation noise of the deviation process"),
    Key("synth_coupling", "0.15", float, "upstream coupling of the deviation process"),
    Key("synth_persistence", "0.8", float, "self persistence of the deviation process"),
    Key("synth_lag", "3", int, "upstream lag in steps"),
    Key("synth_missing_rate", "0.0", float, "share of readings replaced by 0 (missing)"),
]
KEY_INDEX = {k.name: k for k in KEYS}


def help_text() -> str:
    width = max(len(k.name) for k in KEYS)
    lines = ["configuration keys (key = value, '#' starts a comment):"]
    for k in KEYS:
        default = k.default if k.default else '""'
        lines.append(f"  {k.name:<{width}}  default {default:<13} {k.help}")
    return "\n".join(lines)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEY_INDEX:
            raise UsageError(f"{source}:{lineno}: unknown config key {key!r}", key)
        if key in raw:
            raise UsageError(f"{source}:{lineno}: duplicate config key {key!r}", key)
        raw[key] = value
    return raw


def load_config_file(path) -> dict[str, str]:
    """Read a key-value file, or the ``config`` block of a run manifest (JSON)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    if path.suffix == ".json":
        try:
            manifest = json.loads(text)
            block = manifest["config"]
        except (ValueError, KeyError, TypeError):
            raise UsageError(f"{path}: not a run manifest with a 'config' block") from None
        return parse_config_text("\n".join(f"{k} = {v}" for k, v in block.items()), str(path))
    return parse_config_text(text, str(path))


class RunConfig:
    """Resolved configuration: every key present, parsed and validated."""

    def __init__(self, raw: dict[str, str] | None = None, **overrides):
        raw = dict(raw or {})
        for key, value in overrides.items():
            if key not in KEY_INDEX:
                raise UsageError(f"unknown config key {key!r}", key)
            raw[key] = str(value) if not isinstance(value, tuple) else ",".join(map(str, value))
        self.text: dict[str, str] = {}
        self.values: dict[str, Any] = {}
        for k in KEYS:
            text = raw.get(k.name, k.default)
            try:
                self.values[k.name] = k.parse(text)
            except ValueError as exc:
                raise UsageError(f"config key {k.name!r}: {exc}", k.name) from None
            self.text[k.name] = text
        self._validate()

    def __getitem__(self, key: str):
        return self.values[key]

    def _validate(self):
        ratios = (self["train_ratio"], self["val_ratio"], self["test_ratio"])
        if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            raise UsageError(f"train_ratio + val_ratio + test_ratio must equal 1, got {sum(ratios)}",
                             "train_ratio")
        if self["train_ratio"] <= 0:
            raise UsageError("train_ratio must be positive", "train_ratio")
        try:
            self.model_config(n_nodes=1)
            self.train_config()
        except (DetectorNetError, ValueError) as exc:
            key = next((k.name for k in KEYS if k.name in str(exc)), None)
            if key is None and any(a in str(exc) for a in ABLATIONS):
                key = "ablate"
            where = f" (key {key!r})" if key else ""
            raise UsageError(f"invalid configuration{where}: {exc}", key) from None

    def model_config(self, n_nodes: int) -> ModelConfig:
        flags = {a: a in self["ablate"] for a in ABLATIONS}
        return ModelConfig(
            n_nodes=n_nodes, input_len=self["input_len"], output_len=self["output_len"],
            input_dim=self["input_dim"], hidden=self["hidden"], layers=self["layers"],
            diffusion_order=self["diffusion_order"], embed_dim=self["embed_dim"],
            dropout=self["dropout"], learnable_coeffs=self["learnable_coeffs"],
            beta=self["beta"], gamma=self["gamma"], ffn_factor=self["ffn_factor"],
            predictor_mid=self["predictor_mid"], output_dim=self["output_dim"],
            seed=self["seed"], **flags)

    def train_config(self) -> TrainRunConfig:
        return TrainRunConfig(
            batch_size=self["batch_size"], lr=self["lr"], lr_decay=self["lr_decay"],
            lr_decay_every=self["lr_decay_every"], weight_decay=self["weight_decay"],
            epochs=self["epochs"], patience=self["patience"], seed=self["seed"])

    @property
    def split(self) -> tuple[float, float, float]:
        return (self["train_ratio"], self["val_ratio"], self["test_ratio"])

    def render(self) -> str:
        return "".join(f"{k.name} = {self.text[k.name]}\n" for k in KEYS)
