"""Experiment configuration (TOML) and run-directory artifacts.

A run directory is self-describing: it holds the fully resolved config next
to every artifact it produced.  Numeric exports use shortest round-trip
formatting, so replay audits can compare files byte for byte.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import tomli
import tomlkit

from .datasets import dataset_from_id
from .model import BridgeModel, estimate_endpoint_stats
from .rng import stream
from .schedule import NoiseSchedule, schedule_from_id
from .train import ConstantGap, PseudoHuber, SigmoidGap, SquaredL2

__all__ = [
    "load_config",
    "dump_config",
    "thread_cap",
    "build_schedule",
    "build_dataset",
    "build_model",
    "build_tschedule",
    "build_metric",
    "write_csv",
    "read_csv",
    "write_ndjson",
]

_TRAIN_DEFAULTS = {
    "objective": "dbsm",
    "steps": 1000,
    "lr": 1e-3,
    "batch": 128,
    "seed": 0,
    "weighting": "unit",
    "metric": "squared-l2",
    "dbsm_weighting": "unit",
    "schedule": "constant",
    "dt": 1.0 / 18.0,
    "q": 2.0,
    "s": 5000,
    "k": 8.0,
    "b": 20.0,
    "dt_max": 0.2,
    "dt_min": 0.005,
    "log_every": 100,
}

_SAMPLE_DEFAULTS = {"nfe": 2, "mode": "uniform", "n_samples": 1000, "seed": 0}
_EVAL_DEFAULTS = {"n_projections": 256, "seed": 0, "reference": "dataset"}


def load_config(path) -> dict:
    """Parse a TOML experiment config and fill in defaults."""
    with open(path, "rb") as fh:
        cfg = tomli.load(fh)
    cfg.setdefault("schedule", {"id": "brownian"})
    cfg.setdefault("dataset", {"id": "gauss1d"})
    cfg.setdefault("model", {})
    cfg["model"].setdefault("scheme", "edm")
    cfg["model"].setdefault("hidden", [64, 64, 64])
    cfg["train"] = {**_TRAIN_DEFAULTS, **cfg.get("train", {})}
    cfg["sample"] = {**_SAMPLE_DEFAULTS, **cfg.get("sample", {})}
    cfg["eval"] = {**_EVAL_DEFAULTS, **cfg.get("eval", {})}
    cfg.setdefault("out", {})
    return cfg


def dump_config(cfg: dict, path) -> None:
    doc = tomlkit.document()
    for section, table in cfg.items():
        if not isinstance(table, dict):
            doc[section] = table
            continue
        t = tomlkit.table()
        for key, value in table.items():
            if value is None:
                continue
            t[key] = value
        doc[section] = t
    Path(path).write_text(tomlkit.dumps(doc))


def thread_cap() -> int:
    """Worker cap for internal parallelism, from BRIDGEKIT_THREADS."""
    raw = os.environ.get("BRIDGEKIT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"BRIDGEKIT_THREADS must be an integer, got {raw!r}") from None


# -- builders -----------------------------------------------------------------


def build_schedule(cfg: dict) -> NoiseSchedule:
    section = dict(cfg["schedule"])
    return schedule_from_id(section.pop("id"), **section)


def build_dataset(cfg: dict):
    section = dict(cfg["dataset"])
    section.pop("stats_samples", None)
    return dataset_from_id(section.pop("id"), **section)


def build_model(cfg: dict, *, seed: int | None = None) -> BridgeModel:
    """Fresh model per the config; endpoint statistics come from the dataset."""
    spec = build_schedule(cfg)
    dataset = build_dataset(cfg)
    section = cfg["model"]
    scheme = section["scheme"]
    seed = cfg["train"]["seed"] if seed is None else seed
    stats = None
    if scheme == "edm":
        n = int(cfg["dataset"].get("stats_samples", 4096))
        xs, ys = dataset.sample(n, stream(seed, "endpoint-stats"))
        stats = estimate_endpoint_stats(xs, ys)
    return BridgeModel.create(
        spec,
        dataset.dim,
        scheme,
        hidden=tuple(section["hidden"]),
        stats=stats,
        eps=section.get("eps"),
        gamma=section.get("gamma"),
        seed=seed,
    )


def build_tschedule(train_cfg: dict):
    kind = train_cfg["schedule"]
    if kind == "constant":
        return ConstantGap(dt=float(train_cfg["dt"]))
    if kind == "sigmoid":
        return SigmoidGap(
            q=float(train_cfg["q"]),
            s=int(train_cfg["s"]),
            k=float(train_cfg["k"]),
            b=float(train_cfg["b"]),
            dt_max=float(train_cfg["dt_max"]),
            dt_min=float(train_cfg["dt_min"]),
        )
    raise ValueError(f"unknown training schedule {kind!r}")


def build_metric(train_cfg: dict, dim: int):
    kind = train_cfg["metric"]
    if kind == "squared-l2":
        return SquaredL2()
    if kind == "pseudo-huber":
        return PseudoHuber(c=0.03 * np.sqrt(dim))
    raise ValueError(f"unknown metric {kind!r}")


# -- artifact io ----------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    text = str(value)
    if any(ch in text for ch in ',"\n'):
        text = '"' + text.replace('"', '""') + '"'
    return text


def write_csv(path, columns, rows) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path):
    lines = Path(path).read_text().strip().splitlines()
    columns = lines[0].split(",")
    values = [line.split(",") for line in lines[1:]]
    return columns, values


def write_ndjson(path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
