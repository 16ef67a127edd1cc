"""Few-step generation, trajectory tapes, and noise-space interpolation.

Generation alternates a stochastic re-noising step with a consistency-
function evaluation.  The reverse dynamics are only defined strictly before
the terminal time, so every evaluation time is clamped into [eps, T-gamma];
in particular the first evaluation runs on the raw endpoint y at T-gamma and
its output seeds the first re-noising step.

Each run records the (time, noise) pairs it consumed.  Replaying a tape
through the same checkpoint is bit-exact, and interpolating the noises of
two tapes sweeps a path between the two samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import BridgeModel
from .solver import ei_ode_step, euler_ode_step, posterior_sde_step

__all__ = [
    "TimestepPlan",
    "TrajectoryTape",
    "cdbm_sample",
    "replay",
    "integrate_ode",
    "ode_sample",
    "slerp",
    "interpolate",
]


@dataclass(frozen=True)
class TimestepPlan:
    """Strictly decreasing evaluation times from T down to eps."""

    timesteps: np.ndarray
    mode: str = "uniform"

    def __post_init__(self):
        ts = np.asarray(self.timesteps, dtype=float)
        if ts.ndim != 1 or ts.size < 2:
            raise ValueError("plan needs at least two function evaluations")
        if not np.all(np.diff(ts) < 0):
            raise ValueError("plan timesteps must be strictly decreasing")
        object.__setattr__(self, "timesteps", ts)

    @property
    def nfe(self) -> int:
        return self.timesteps.size

    @classmethod
    def uniform(cls, T: float, eps: float, nfe: int) -> "TimestepPlan":
        if nfe < 2:
            raise ValueError("plan needs at least two function evaluations")
        return cls(np.linspace(T, eps, nfe), mode="uniform")

    @classmethod
    def pinned_second(cls, T: float, eps: float, nfe: int, t2: float) -> "TimestepPlan":
        """Fix the second time (e.g. T - 0.1); spread the rest down to eps."""
        if nfe < 2:
            raise ValueError("plan needs at least two function evaluations")
        if not eps < t2 < T:
            raise ValueError("need eps < t2 < T")
        rest = np.linspace(t2, eps, nfe - 1)[1:]
        return cls(np.concatenate([[T], [t2], rest]), mode="pinned-second")


@dataclass(frozen=True)
class TrajectoryTape:
    """Recorded (time, noise) pairs that make a run exactly replayable."""

    plan: TimestepPlan
    records: tuple
    seed: int | None = None

    def to_ndjson(self) -> str:
        lines = [
            json.dumps(
                {
                    "kind": "tape",
                    "seed": self.seed,
                    "mode": self.plan.mode,
                    "timesteps": self.plan.timesteps.tolist(),
                }
            )
        ]
        for t, z in self.records:
            lines.append(json.dumps({"t": t, "z": np.asarray(z).tolist()}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_ndjson(cls, text: str) -> "TrajectoryTape":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        head = rows[0]
        if head.get("kind") != "tape":
            raise ValueError("not a trajectory tape")
        plan = TimestepPlan(np.asarray(head["timesteps"]), mode=head["mode"])
        records = tuple(
            (row["t"], np.asarray(row["z"], dtype=float)) for row in rows[1:]
        )
        return cls(plan=plan, records=records, seed=head["seed"])


def _validate_plan(model: BridgeModel, plan: TimestepPlan):
    ts = plan.timesteps
    T = model.spec.T
    if abs(ts[0] - T) > 1e-12 * max(T, 1.0):
        raise ValueError("plan must start at the terminal time T")
    if ts[-1] < model.eps - 1e-12 * max(T, 1.0):
        raise ValueError("plan must stay at or above eps")


def _eval_time(model: BridgeModel, t: float) -> float:
    return float(np.clip(t, model.eps, model.spec.T - model.gamma))


def cdbm_sample(
    model: BridgeModel,
    y,
    plan: TimestepPlan,
    rng: np.random.Generator,
    *,
    seed: int | None = None,
):
    """Alternating noising/consistency generation; returns (sample, tape).

    y may be a single endpoint (d,) or a batch (n, d).  The number of
    network evaluations equals the plan length; the noise consumed by each
    re-noising step is recorded on the returned tape.
    """
    _validate_plan(model, plan)
    y = np.asarray(y, dtype=float)
    records = []

    u_prev = _eval_time(model, plan.timesteps[0])
    x_hat = model.consistency(y.reshape(-1, model.dim), u_prev, y.reshape(-1, model.dim))
    for t in plan.timesteps[1:]:
        u = _eval_time(model, t)
        z = rng.standard_normal(x_hat.shape)
        state = posterior_sde_step(model.spec, u_prev, u, x_hat, y.reshape(-1, model.dim), z)
        x_hat = model.consistency(state, u, y.reshape(-1, model.dim))
        records.append((u, z))
        u_prev = u
        if not np.all(np.isfinite(x_hat)):
            raise FloatingPointError(f"non-finite state at evaluation time {u}")
    tape = TrajectoryTape(plan=plan, records=tuple(records), seed=seed)
    return x_hat.reshape(y.shape), tape


def replay(model: BridgeModel, y, tape: TrajectoryTape) -> np.ndarray:
    """Re-run a recorded trajectory; bit-exact on the same platform."""
    _validate_plan(model, tape.plan)
    y = np.asarray(y, dtype=float)
    yb = y.reshape(-1, model.dim)

    u_prev = _eval_time(model, tape.plan.timesteps[0])
    x_hat = model.consistency(yb, u_prev, yb)
    for u, z in tape.records:
        z = np.asarray(z, dtype=float)
        state = posterior_sde_step(model.spec, u_prev, u, x_hat, yb, z.reshape(x_hat.shape))
        x_hat = model.consistency(state, u, yb)
        u_prev = u
    return x_hat.reshape(y.shape)


def integrate_ode(spec, data_pred, x, y, t_hi: float, t_lo: float, n_steps: int, *, method: str = "ei"):
    """March the reverse ODE from t_hi down to t_lo on a uniform grid.

    data_pred maps (state, t, y) to the time-0 estimate; method selects the
    exponential-integrator step or the plain Euler baseline.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    step = {"ei": ei_ode_step, "euler": euler_ode_step}[method]
    grid = np.linspace(t_hi, t_lo, n_steps + 1)
    for t, r in zip(grid[:-1], grid[1:]):
        x = step(spec, t, r, x, y, data_pred(x, t, y))
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at time {r}")
    return x


def ode_sample(
    model: BridgeModel,
    y,
    n_steps: int,
    rng: np.random.Generator,
    *,
    method: str = "ei",
) -> np.ndarray:
    """Multi-step reverse-ODE baseline from a score/data-prediction model.

    One initial prediction at T-gamma seeds a stochastic skip off the
    terminal endpoint; the remaining integration is deterministic, so the
    total evaluation count is n_steps + 1.
    """
    y = np.asarray(y, dtype=float)
    yb = y.reshape(-1, model.dim)
    t_hi = model.spec.T - model.gamma

    x_hat = model.data_pred(yb, t_hi, yb)
    z = rng.standard_normal(x_hat.shape)
    state = posterior_sde_step(model.spec, model.spec.T, t_hi, x_hat, yb, z)
    out = integrate_ode(
        model.spec,
        lambda x, t, y_in: model.data_pred(x, t, y_in),
        state,
        yb,
        t_hi,
        model.eps,
        n_steps,
        method=method,
    )
    return out.reshape(y.shape)


def slerp(a, b, w: float) -> np.ndarray:
    """Spherical interpolation between noise vectors, row-wise for batches.

    Endpoints are reproduced exactly; nearly parallel rows fall back to
    linear interpolation.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("noise shapes differ")
    flat_a = a.reshape(1, -1) if a.ndim == 1 else a
    flat_b = b.reshape(1, -1) if b.ndim == 1 else b

    na = np.linalg.norm(flat_a, axis=1)
    nb = np.linalg.norm(flat_b, axis=1)
    denom = np.maximum(na * nb, 1e-300)
    cos = np.clip(np.sum(flat_a * flat_b, axis=1) / denom, -1.0, 1.0)
    omega = np.arccos(cos)
    sin = np.sin(omega)
    safe = sin > 1e-7
    sin = np.where(safe, sin, 1.0)
    wa = np.where(safe, np.sin((1.0 - w) * omega) / sin, 1.0 - w)
    wb = np.where(safe, np.sin(w * omega) / sin, w)
    out = wa[:, None] * flat_a + wb[:, None] * flat_b
    return out.reshape(a.shape)


def interpolate(
    model: BridgeModel, y, tape_a: TrajectoryTape, tape_b: TrajectoryTape, weights
) -> list:
    """Sweep samples between two recorded trajectories by blending noises."""
    if not np.array_equal(tape_a.plan.timesteps, tape_b.plan.timesteps):
        raise ValueError("tapes were recorded under different plans")
    if len(tape_a.records) != len(tape_b.records):
        raise ValueError("tapes have different record counts")
    out = []
    for w in np.asarray(weights, dtype=float):
        records = tuple(
            (ta, slerp(za, zb, float(w)))
            for (ta, za), (tb, zb) in zip(tape_a.records, tape_b.records)
        )
        mixed = TrajectoryTape(plan=tape_a.plan, records=records, seed=None)
        out.append(replay(model, y, mixed))
    return out
