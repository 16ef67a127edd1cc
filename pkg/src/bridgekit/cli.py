"""Command-line experiment runner.

Every command materializes a self-describing run directory: the resolved
config plus whatever artifacts the command produced (checkpoint, training
log, samples, tapes, metrics).  Failures leave a machine-readable
error.json and a nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from .config import (
    build_dataset,
    build_metric,
    build_model,
    build_tschedule,
    dump_config,
    load_config,
    read_csv,
    write_csv,
    write_ndjson,
)
from .evaluation import MetricReport, energy_distance, sliced_wasserstein2
from .model import load_checkpoint, save_checkpoint
from .rng import stream
from .sample import TimestepPlan, TrajectoryTape, cdbm_sample, ode_sample, replay
from .train import train_loop

__all__ = ["main"]


def _resolve_out(cfg: dict, args, command: str) -> Path:
    out = args.out or cfg["out"].get("dir") or f"runs/{command}"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    cfg["out"]["dir"] = str(path)
    return path


def _apply_seed(cfg: dict, args) -> None:
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
        cfg["sample"]["seed"] = args.seed


def _train_command(cfg: dict, out: Path, objective: str) -> None:
    tcfg = cfg["train"]
    seed = int(tcfg["seed"])
    dataset = build_dataset(cfg)

    teacher = None
    if objective == "cbd":
        if "teacher" not in tcfg:
            raise ValueError("distillation requires train.teacher = <checkpoint path>")
        teacher, _ = load_checkpoint(tcfg["teacher"])
        model = teacher.copy()
    elif objective == "cbt" and "init" in tcfg:
        model, _ = load_checkpoint(tcfg["init"])
    else:
        model = build_model(cfg, seed=seed)

    result = train_loop(
        model,
        dataset,
        objective,
        steps=int(tcfg["steps"]),
        lr=float(tcfg["lr"]),
        lr_final=None if tcfg.get("lr_final") is None else float(tcfg["lr_final"]),
        batch_size=int(tcfg["batch"]),
        seed=seed,
        tschedule=build_tschedule(tcfg) if objective in ("cbd", "cbt") else None,
        weighting=tcfg["weighting"],
        metric=build_metric(tcfg, model.dim),
        dbsm_weighting=tcfg["dbsm_weighting"],
        teacher=teacher,
        log_every=int(tcfg["log_every"]),
    )
    save_checkpoint(out / "checkpoint.json", model, seed=seed, step=result.steps_done)
    write_ndjson(out / "log.ndjson", result.log)
    if result.diverged:
        raise FloatingPointError(
            f"training diverged after {result.steps_done} steps; "
            f"last good checkpoint kept at {out / 'checkpoint.json'}"
        )


def cmd_pretrain(cfg: dict, out: Path, args) -> None:
    _train_command(cfg, out, "dbsm")


def cmd_distill(cfg: dict, out: Path, args) -> None:
    _train_command(cfg, out, "cbd")


def cmd_cbt(cfg: dict, out: Path, args) -> None:
    _train_command(cfg, out, "cbt")


def _build_plan(model, scfg: dict) -> TimestepPlan:
    nfe = int(scfg["nfe"])
    if scfg["mode"] == "uniform":
        return TimestepPlan.uniform(model.spec.T, model.eps, nfe)
    if scfg["mode"] == "pinned-second":
        t2 = float(scfg.get("t2", model.spec.T - 0.1))
        return TimestepPlan.pinned_second(model.spec.T, model.eps, nfe, t2)
    raise ValueError(f"unknown plan mode {scfg['mode']!r}")


def cmd_sample(cfg: dict, out: Path, args) -> None:
    scfg = cfg["sample"]
    if "checkpoint" not in scfg:
        raise ValueError("sampling requires sample.checkpoint = <checkpoint path>")
    model, _ = load_checkpoint(scfg["checkpoint"])
    dataset = build_dataset(cfg)
    seed = int(scfg["seed"])
    n = int(scfg["n_samples"])
    _, y = dataset.sample(n, stream(seed, "sample-inputs"))
    columns = [f"x{i + 1}" for i in range(model.dim)]
    write_csv(out / "inputs.csv", columns, y)

    sampler = scfg.get("sampler", "cdbm")
    if args.replay is not None:
        tape = TrajectoryTape.from_ndjson(Path(args.replay).read_text())
        samples = replay(model, y, tape)
    elif sampler == "cdbm":
        plan = _build_plan(model, scfg)
        samples, tape = cdbm_sample(
            model, y, plan, stream(seed, "sample-noise"), seed=seed
        )
        (out / "tape.ndjson").write_text(tape.to_ndjson())
    elif sampler in ("ode-ei", "ode-euler"):
        samples = ode_sample(
            model,
            y,
            int(scfg.get("n_steps", 100)),
            stream(seed, "sample-noise"),
            method=sampler.split("-")[1],
        )
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    write_csv(out / "samples.csv", columns, samples)


def _load_cloud(path) -> np.ndarray:
    _, rows = read_csv(path)
    return np.asarray([[float(v) for v in row] for row in rows])


def cmd_eval(cfg: dict, out: Path, args) -> None:
    ecfg = cfg["eval"]
    if "samples" not in ecfg:
        raise ValueError("evaluation requires eval.samples = <csv path>")
    cloud = _load_cloud(ecfg["samples"])
    seed = int(ecfg["seed"])
    if ecfg["reference"] == "dataset":
        reference, _ = build_dataset(cfg).sample(len(cloud), stream(seed, "reference"))
    else:
        reference = _load_cloud(ecfg["reference"])
    reports = [
        MetricReport(
            "sliced-w2",
            sliced_wasserstein2(
                cloud, reference, int(ecfg["n_projections"]), seed=seed
            ),
            len(cloud),
            n_projections=int(ecfg["n_projections"]),
            seed=seed,
        ),
        MetricReport("energy", energy_distance(cloud, reference), len(cloud), seed=seed),
    ]
    rows = [report.as_row() for report in reports]
    write_csv(
        out / "metrics.csv",
        ["metric", "value", "n_samples", "n_projections", "seed"],
        [[r["metric"], r["value"], r["n_samples"], r["n_projections"], r["seed"]] for r in rows],
    )
    for report in reports:
        print(f"{report.metric}: {report.value!r}")


def cmd_verify(cfg: dict, out: Path, args) -> None:
    from .verify import run_all

    only = None
    if args.only:
        only = {int(v) for v in args.only.split(",")}
    results = run_all(only=only)
    rows = []
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"[{status}] criterion {res.criterion:2d} {res.name} "
              f"({res.runtime:.1f}s) {res.detail}")
        rows.append([res.criterion, res.name, status, res.runtime, res.detail])
        for filename, artifact_rows in (res.artifacts or {}).items():
            write_ndjson(out / filename, artifact_rows)
    write_csv(
        out / "metrics.csv",
        ["criterion", "name", "status", "runtime_s", "detail"],
        rows,
    )
    if not all(res.passed for res in results):
        raise SystemExit(2)


_COMMANDS = {
    "pretrain": cmd_pretrain,
    "distill": cmd_distill,
    "cbt": cmd_cbt,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "verify": cmd_verify,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bridgekit",
        description="Diffusion-bridge training, few-step sampling, and verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="TOML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        if name == "sample":
            p.add_argument("--replay", default=None, help="re-run a recorded tape")
        if name == "verify":
            p.add_argument(
                "--only", default=None, help="comma-separated criteria subset"
            )
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.config is not None:
        cfg = load_config(args.config)
    elif args.command == "verify":
        cfg = _defaults()
    else:
        print(json.dumps({"error": "usage", "message": "--config is required"}),
              file=sys.stderr)
        return 1
    _apply_seed(cfg, args)
    out = _resolve_out(cfg, args, args.command)
    dump_config(cfg, out / "config.toml")
    started = time.monotonic()
    try:
        _COMMANDS[args.command](cfg, out, args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - error envelope is the contract
        record = {
            "error": type(exc).__name__,
            "message": str(exc),
            "command": args.command,
            "elapsed_s": time.monotonic() - started,
            "traceback": traceback.format_exc(),
        }
        (out / "error.json").write_text(json.dumps(record, indent=1) + "\n")
        print(json.dumps({k: record[k] for k in ("error", "message")}), file=sys.stderr)
        return 1
    return 0


def _defaults() -> dict:
    """Defaults-only config for commands that can run without a file."""
    from .config import _EVAL_DEFAULTS, _SAMPLE_DEFAULTS, _TRAIN_DEFAULTS

    return {
        "schedule": {"id": "brownian"},
        "dataset": {"id": "gauss1d"},
        "model": {"scheme": "edm", "hidden": [64, 64, 64]},
        "train": dict(_TRAIN_DEFAULTS),
        "sample": dict(_SAMPLE_DEFAULTS),
        "eval": dict(_EVAL_DEFAULTS),
        "out": {},
    }
