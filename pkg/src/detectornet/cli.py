"""Command-line interface: synth, train, eval, predict, gradcheck.

Every subcommand takes ``--config FILE`` (flat ``key = value`` lines),
``--seed`` and ``--out DIR``. The output directory defaults to
``$DETECTORNET_OUTPUT_DIR`` or the current directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, restore_into, save_checkpoint
from .config import RunConfig, UsageError, help_text, load_config_file
from .data import (load_adjacency_csv, load_series_csv, make_windows, synthesize_dataset,
                   write_edges_csv, write_series_csv)
from .errors import DetectorNetError
from .graph import DetectorGraph
from .model import ABLATIONS, DetectorNet
from .training import evaluate, evaluate_baseline, gradient_check_model, train

OUTPUT_ENV = "DETECTORNET_OUTPUT_DIR"
LOCK_NAME = ".detectornet.lock"

log = logging.getLogger("detectornet")


class RunError(DetectorNetError):
    """A command failed for a reason other than bad usage."""


# plumbing -------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@contextmanager
def output_lock(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunError(f"output directory {out} is locked by another run "
                       f"(remove {lock} if that run is gone)") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def resolve(out: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else out / p


def load_run_config(args) -> RunConfig:
    raw = load_config_file(args.config) if args.config else {}
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "ablate", None):
        overrides["ablate"] = tuple(args.ablate)
    return RunConfig(raw, **overrides)


def load_inputs(cfg: RunConfig, out: Path):
    series_path = resolve(out, cfg["series_path"])
    adj_path = resolve(out, cfg["adjacency_path"])
    for key, path in (("series_path", series_path), ("adjacency_path", adj_path)):
        if not path.is_file():
            raise UsageError(f"config key {key!r}: file not found: {path}", key)
    series = load_series_csv(series_path)
    adj = load_adjacency_csv(adj_path, series.node_ids, cfg["sigma"], cfg["threshold"])
    return series, DetectorGraph.from_adjacency(adj), {str(series_path): sha256_file(series_path),
                                                       str(adj_path): sha256_file(adj_path)}


def write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# commands -------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, out: Path, args) -> int:
    series, edges = synthesize_dataset(
        cfg["synth_nodes"], cfg["synth_steps"], seed=cfg["seed"], noise=cfg["synth_noise"],
        coupling=cfg["synth_coupling"], lag=cfg["synth_lag"],
        persistence=cfg["synth_persistence"], missing_rate=cfg["synth_missing_rate"])
    series_path = resolve(out, cfg["series_path"])
    adj_path = resolve(out, cfg["adjacency_path"])
    write_series_csv(series_path, series)
    write_edges_csv(adj_path, edges)
    print(f"wrote {series_path} ({series.n_steps} steps x {series.n_nodes} nodes) and {adj_path}")
    return 0


def cmd_train(cfg: RunConfig, out: Path, args) -> int:
    series, graph, digests = load_inputs(cfg, out)
    model_cfg = cfg.model_config(series.n_nodes)
    train_set, val_set, _ = make_windows(series, cfg["input_len"], cfg["output_len"], cfg.split,
                                         cfg["input_dim"])
    outputs = {"checkpoint": str(out / "model.dnet"), "loss_trace": str(out / "loss_trace.csv"),
               "manifest": str(out / "manifest.json")}
    manifest = {
        "command": "train",
        "toolkit_version": __version__,
        "seed": cfg["seed"],
        "config": dict(cfg.text),
        "config_text": cfg.render(),
        "ablations": list(model_cfg.ablations),
        "inputs": digests,
        "outputs": outputs,
        "single_threaded": True,
    }
    write_json(out / "manifest.json", manifest)

    result = train(model_cfg, graph, train_set, val_set, cfg.train_config(),
                   on_epoch=lambda r: print(f"epoch {r.epoch:4d}  lr {r.lr:.2e}  "
                                            f"train {r.train_loss:.5f}  val_mae {r.val_mae:.5f}"))
    save_checkpoint(out / "model.dnet", result.checkpoint)
    with open(out / "loss_trace.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "lr", "train_loss", "val_mae"])
        for r in result.trace:
            writer.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.val_mae)])
    print(f"best epoch {result.best_epoch}; checkpoint {outputs['checkpoint']}")
    return 0


def _model_for_eval(cfg: RunConfig, out: Path, args, series, graph):
    if args.untrained:
        model_cfg = cfg.model_config(series.n_nodes)
        return DetectorNet(model_cfg, graph), None
    path = Path(args.checkpoint) if args.checkpoint else out / "model.dnet"
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    if ckpt.config.n_nodes != series.n_nodes:
        raise RunError(f"checkpoint expects {ckpt.config.n_nodes} nodes, series has {series.n_nodes}")
    model = DetectorNet(ckpt.config, graph)
    restore_into(model, ckpt)
    return model, (ckpt.mean, ckpt.std)


def cmd_eval(cfg: RunConfig, out: Path, args) -> int:
    series, graph, _ = load_inputs(cfg, out)
    model, stats = _model_for_eval(cfg, out, args, series, graph)
    mc = model.config
    splits = dict(zip(("train", "val", "test"),
                      make_windows(series, mc.input_len, mc.output_len, cfg.split, mc.input_dim,
                                   stats=stats)))
    batch = splits[args.split]
    if len(batch) == 0:
        raise RunError(f"the {args.split} split has no windows")
    horizons = [h for h in cfg["horizons"] if h <= mc.output_len]
    name = "untrained" if args.untrained else "detectornet"
    lines = evaluate(model, batch).json_lines(horizons, timing=False, model=name, split=args.split)
    if args.baseline == "ha":
        lines += evaluate_baseline(batch).json_lines(horizons, timing=False, model="ha",
                                                     split=args.split)
    path = out / "metrics.jsonl"
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    for line in lines:
        print(line)
    return 0


def cmd_predict(cfg: RunConfig, out: Path, args) -> int:
    series, graph, _ = load_inputs(cfg, out)
    model, stats = _model_for_eval(cfg, out, args, series, graph)
    mc = model.config
    end = series.n_steps - 1 if args.at is None else args.at
    if not mc.input_len - 1 <= end < series.n_steps:
        raise UsageError(f"--at {end} must lie in [{mc.input_len - 1}, {series.n_steps - 1}]")
    if stats is None:
        train_set, _, _ = make_windows(series, mc.input_len, mc.output_len, cfg.split, mc.input_dim)
        stats = (train_set.mean, train_set.std)
    mean, std = stats
    raw = series.values[end - mc.input_len + 1:end + 1].T  # (N, P)
    x = ((raw - mean) / std)[..., None]
    if mc.input_dim == 2:
        tod = series.time_of_day()[end - mc.input_len + 1:end + 1]
        x = np.concatenate([x, np.broadcast_to(tod[None, :, None], x.shape)], axis=-1)
    pred = model.predict(x[None])[0] * std + mean  # (N, Q, c_p)
    step = np.timedelta64(series.interval_seconds, "s")
    path = out / "predictions.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node", "horizon", "timestamp", "prediction"])
        for i, node in enumerate(series.node_ids):
            for h in range(mc.output_len):
                stamp = str(series.timestamps[end] + (h + 1) * step)
                writer.writerow([node, h + 1, stamp, repr(float(pred[i, h, 0]))])
    print(f"wrote {path} ({series.n_nodes} nodes x {mc.output_len} horizons)")
    return 0


def cmd_gradcheck(cfg: RunConfig, out: Path, args) -> int:
    report = gradient_check_model(seed=cfg["seed"], coords=args.coords, tolerance=args.tolerance)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "gradcheck": cmd_gradcheck}


# argument parsing -----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="FILE",
                        help="key = value file, or a manifest.json from an earlier run")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", metavar="DIR",
                        help=f"output directory (default ${OUTPUT_ENV} or the current directory)")

    parser = _Parser(prog="detectornet", description="Traffic forecasting on detector graphs.",
                     epilog=help_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    sub.add_parser("synth", parents=[common], help="write a synthetic series and edge list")
    p = sub.add_parser("train", parents=[common], help="train and write model.dnet, loss_trace.csv, manifest.json")
    p.add_argument("--ablate", action="append", choices=ABLATIONS, metavar="FLAG",
                   help=f"disable a component ({', '.join(ABLATIONS)}); repeatable")
    for name, help_ in (("eval", "write metrics.jsonl for the configured horizons"),
                        ("predict", "write predictions.csv for one input window")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--checkpoint", metavar="PATH", help="default: OUT/model.dnet")
        p.add_argument("--untrained", action="store_true",
                       help="use a freshly initialised model instead of a checkpoint")
        if name == "eval":
            p.add_argument("--split", choices=("train", "val", "test"), default="test")
            p.add_argument("--baseline", choices=("ha",), help="also report a baseline")
        else:
            p.add_argument("--at", type=int, metavar="T",
                           help="series index of the last input step (default: the final step)")
    p = sub.add_parser("gradcheck", parents=[common], help="check gradients on a tiny model")
    p.add_argument("--coords", type=int, default=32, help="coordinates checked per parameter")
    p.add_argument("--tolerance", type=float, default=1e-4, help="max relative error")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = load_run_config(args)
        out = Path(args.out or os.environ.get(OUTPUT_ENV) or ".")
        with output_lock(out):
            return COMMANDS[args.command](cfg, out, args)
    except UsageError as exc:
        print(f"detectornet: usage error: {exc}", file=sys.stderr)
        return 2
    except (DetectorNetError, OSError) as exc:
        print(f"detectornet: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
