"""End-to-end runs behind the CLI subcommands.

Every run writes a ``summary.json`` that is a pure function of the config
and the data (no timestamps, no wall-clock values); timings go to a separate
``timings.json`` and to the CSV traces.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

from .config import RunConfig
from .data import RatingMatrix, load_split, read_ratings, save_split, split, split_manifest
from .errors import A2basError, CheckpointError, ConfigError, DivergenceError
from .model import FactorState, evaluate, init_factors, load_checkpoint, save_checkpoint
from .pso import plfa_train, write_swarm_log
from .refine import antennae_sweep, sequential_refine
from .trainers import adam_train, sgd_train

log = logging.getLogger(__name__)

EXIT_PARTIAL = 8


@dataclass
class Dataset:
    train: RatingMatrix
    val: RatingMatrix
    test: RatingMatrix
    manifest: dict


def load_dataset(cfg: RunConfig) -> Dataset:
    """Read and split ``cfg.dataset``; a directory written by ``ingest`` is loaded as-is."""
    if cfg.dataset is None:
        raise ConfigError("no dataset given (set 'dataset' in the config or pass --data)")
    path = Path(cfg.dataset)
    if path.is_dir():
        train, val, test, manifest = load_split(path)
        return Dataset(train, val, test, manifest)
    full = read_ratings(path, cfg.delimiter, cfg.densify)
    spec = cfg.split_spec()
    train, val, test = split(full, spec)
    return Dataset(train, val, test, split_manifest(train, val, test, spec, full.content_hash()))


def _summary_config(cfg: RunConfig) -> dict:
    doc = cfg.resolved()
    doc.pop("out", None)
    doc.pop("threads", None)
    return doc


def _metrics(state: FactorState, ds: Dataset) -> dict:
    v, t = evaluate(state, ds.val), evaluate(state, ds.test)
    return {"val_rmse": v.rmse, "val_mae": v.mae, "test_rmse": t.rmse, "test_mae": t.mae}


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _ckpt_name(cfg: RunConfig, stem: str) -> str:
    return f"{stem}.{cfg.checkpoint_format}"


def fresh_state(cfg: RunConfig, ds: Dataset) -> FactorState:
    return init_factors(ds.train.num_rows, ds.train.num_cols, cfg.f, cfg.seed, cfg.init_scale)


def train_with(optimizer: str, cfg: RunConfig, ds: Dataset, state: FactorState):
    if optimizer == "sgd":
        return sgd_train(state, ds.train, ds.val, cfg.sgd_config())
    if optimizer == "adam":
        return adam_train(state, ds.train, ds.val, cfg.adam_config())
    return plfa_train(state, ds.train, ds.val, cfg.swarm_config(), cfg.sgd_config())


def _checked_checkpoint(path, ds: Dataset, cfg: RunConfig) -> FactorState:
    state = load_checkpoint(path)
    if state.num_rows != ds.train.num_rows or state.num_cols != ds.train.num_cols:
        raise CheckpointError(
            f"checkpoint is {state.num_rows}x{state.num_cols}, dataset is {ds.train.num_rows}x{ds.train.num_cols}"
        )
    return state


# -- subcommands ---------------------------------------------------------------


def run_ingest(cfg: RunConfig) -> dict:
    ds = load_dataset(cfg)
    out = _out_dir(cfg)
    spec = cfg.split_spec()
    manifest = save_split(out, ds.train, ds.val, ds.test, spec, ds.manifest.get("source_hash"))
    return manifest


def run_train(cfg: RunConfig) -> dict:
    ds = load_dataset(cfg)
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    state, trace = train_with(cfg.optimizer, cfg, ds, fresh_state(cfg, ds))
    seconds = time.perf_counter() - t0
    save_checkpoint(state, out / _ckpt_name(cfg, "model"))
    trace.to_csv(out / "trace.csv")
    if trace.swarm_log:
        write_swarm_log(trace.swarm_log, out / "swarm.csv")
    summary = {
        "command": "train",
        "optimizer": cfg.optimizer,
        "epochs": trace.epochs,
        "checkpoint": _ckpt_name(cfg, "model"),
        **_metrics(state, ds),
        "split": ds.manifest,
        "config": _summary_config(cfg),
    }
    _write_json(out / "summary.json", summary)
    _write_json(out / "timings.json", {"train_seconds": round(seconds, 3)})
    return summary


def run_refine(cfg: RunConfig, checkpoint) -> dict:
    ds = load_dataset(cfg)
    out = _out_dir(cfg)
    state = _checked_checkpoint(checkpoint, ds, cfg)
    t0 = time.perf_counter()
    refined, trace = sequential_refine(state, ds.train, ds.val, cfg.refine_config())
    seconds = time.perf_counter() - t0
    save_checkpoint(refined, out / _ckpt_name(cfg, "refined"))
    trace.to_csv(out / "refine_trace.csv")
    summary = {
        "command": "refine",
        "checkpoint": _ckpt_name(cfg, "refined"),
        "rounds": trace.rounds_run,
        "committed_rounds": trace.committed_rounds,
        "before": _metrics(state, ds),
        "after": _metrics(refined, ds),
        "split": ds.manifest,
        "config": _summary_config(cfg),
    }
    _write_json(out / "summary.json", summary)
    _write_json(out / "timings.json", {"refine_seconds": round(seconds, 3)})
    return summary


def run_sweep(cfg: RunConfig, checkpoint=None) -> dict:
    """Antennae-length sweep from ``checkpoint``, or from a fresh model trained
    with ``cfg.optimizer`` when no checkpoint is given."""
    ds = load_dataset(cfg)
    out = _out_dir(cfg)
    if checkpoint is not None:
        state = _checked_checkpoint(checkpoint, ds, cfg)
    else:
        state, _ = train_with(cfg.optimizer, cfg, ds, fresh_state(cfg, ds))
        save_checkpoint(state, out / _ckpt_name(cfg, "base"))
    report = antennae_sweep(state, ds.train, ds.val, ds.test, cfg.refine_config(), cfg.sweep)
    report.to_csv(out / "sweep.csv")
    summary = {
        "command": "sweep",
        "base": _metrics(state, ds),
        "rows": [
            {"al0": r.al0, "test_rmse": r.test_rmse, "test_mae": r.test_mae, "rounds": r.rounds,
             "committed_rounds": r.committed_rounds, "val_rmse": r.val_rmse, "val_mae": r.val_mae}
            for r in report.rows
        ],
        "split": ds.manifest,
        "config": _summary_config(cfg),
    }
    _write_json(out / "summary.json", summary)
    _write_json(out / "timings.json", {"seconds": {repr(r.al0): round(r.seconds, 3) for r in report.rows}})
    return summary


COMPARE_METHODS = ("adam", "sgd", "plfa", "a2bas")


def run_compare(cfg: RunConfig) -> dict:
    """Adam-LFA, SGD-LFA, PLFA and PLFA followed by refinement on one split."""
    ds = load_dataset(cfg)
    out = _out_dir(cfg)
    init = fresh_state(cfg, ds)
    rows, timings, plfa = [], {}, None
    for method in COMPARE_METHODS:
        t0 = time.perf_counter()
        row = {"method": method, "status": "ok"}
        try:
            if method == "a2bas":
                if plfa is None:
                    raise DivergenceError("PLFA stage failed; nothing to refine")
                state, trace = sequential_refine(plfa[0], ds.train, ds.val, cfg.refine_config())
                iterations = trace.rounds_run
                extra = plfa[1]
            else:
                state, trace = train_with(method, cfg, ds, init.copy())
                iterations, extra = trace.epochs, 0.0
            seconds = time.perf_counter() - t0 + extra
            if method == "plfa":
                plfa = (state, seconds)
            save_checkpoint(state, out / _ckpt_name(cfg, method))
            t = evaluate(state, ds.test)
            row.update(test_rmse=t.rmse, test_mae=t.mae, iterations=iterations, checkpoint=_ckpt_name(cfg, method))
        except A2basError as exc:
            log.warning("%s failed: %s", method, exc)
            seconds = time.perf_counter() - t0
            row.update(status="failed", error=str(exc), test_rmse=None, test_mae=None, iterations=None)
        rows.append(row)
        timings[method] = round(seconds, 3)

    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "test_rmse", "test_mae", "seconds", "iterations", "status"])
        for row in rows:
            w.writerow([
                row["method"],
                "" if row["test_rmse"] is None else repr(row["test_rmse"]),
                "" if row["test_mae"] is None else repr(row["test_mae"]),
                f"{timings[row['method']]:.3f}",
                "" if row["iterations"] is None else row["iterations"],
                row["status"],
            ])
    summary = {
        "command": "compare",
        "rows": rows,
        "test_hash": ds.manifest["hashes"]["test"],
        "split": ds.manifest,
        "config": _summary_config(cfg),
    }
    _write_json(out / "summary.json", summary)
    _write_json(out / "timings.json", {"seconds": timings})
    return summary


def run_eval(cfg: RunConfig, checkpoint) -> dict:
    ds = load_dataset(cfg)
    state = _checked_checkpoint(checkpoint, ds, cfg)
    result = {"command": "eval", "checkpoint": str(checkpoint), **_metrics(state, ds), "split": ds.manifest}
    return result
