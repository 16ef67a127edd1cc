"""Distributional metrics and the numerical verification experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .bridge import GaussianCouplingOracle, oracle_data_pred
from .rng import stream
from .sample import integrate_ode
from .schedule import BrownianBridge, NoiseSchedule
from .solver import brownian_oracle_ode, brownian_oracle_reverse_sde
from .train import SquaredL2, cbd_loss_terms, cbt_loss_terms

__all__ = [
    "MetricReport",
    "sliced_wasserstein2",
    "energy_distance",
    "ConvergenceResult",
    "convergence_order",
    "prop3_gap_ladder",
    "marginal_preservation_test",
]


@dataclass(frozen=True)
class MetricReport:
    """One measured distance between two point clouds."""

    metric: str
    value: float
    n_samples: int
    n_projections: int | None = None
    seed: int | None = None

    def as_row(self) -> dict:
        return {
            "metric": self.metric,
            "value": self.value,
            "n_samples": self.n_samples,
            "n_projections": self.n_projections,
            "seed": self.seed,
        }


def _as_cloud(points) -> np.ndarray:
    cloud = np.asarray(points, dtype=float)
    if cloud.ndim == 1:
        cloud = cloud[:, None]
    if cloud.size == 0:
        raise ValueError("empty point cloud")
    return cloud


def sliced_wasserstein2(cloud_a, cloud_b, n_projections: int = 256, seed: int = 0) -> float:
    """Monte-Carlo sliced 2-Wasserstein distance between point clouds.

    Averages the squared one-dimensional transport cost over random unit
    projections; unequal cloud sizes are aligned on a common quantile grid.
    """
    a, b = _as_cloud(cloud_a), _as_cloud(cloud_b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("clouds have different dimensions")
    rng = stream(seed, "sw-projections")
    dirs = rng.standard_normal((n_projections, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    pa = a @ dirs.T
    pb = b @ dirs.T
    pa.sort(axis=0)
    pb.sort(axis=0)
    if a.shape[0] != b.shape[0]:
        qs = (np.arange(max(a.shape[0], b.shape[0])) + 0.5) / max(a.shape[0], b.shape[0])
        pa = np.quantile(pa, qs, axis=0)
        pb = np.quantile(pb, qs, axis=0)
    return float(np.sqrt(np.mean((pa - pb) ** 2)))


def energy_distance(cloud_a, cloud_b) -> float:
    """Energy distance 2*E|a-b| - E|a-a'| - E|b-b'| between point clouds."""
    a, b = _as_cloud(cloud_a), _as_cloud(cloud_b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("clouds have different dimensions")
    cross = cdist(a, b).mean()
    within_a = cdist(a, a).mean()
    within_b = cdist(b, b).mean()
    return float(2.0 * cross - within_a - within_b)


@dataclass(frozen=True)
class ConvergenceResult:
    slope: float
    step_counts: tuple
    errors: tuple
    error_floor: bool


def convergence_order(
    spec: NoiseSchedule,
    data_pred,
    x_start: np.ndarray,
    y: np.ndarray,
    t_hi: float,
    t_lo: float,
    step_counts,
    *,
    method: str = "ei",
    ref_steps: int = 2**14,
) -> ConvergenceResult:
    """Fit the global-error order of a one-step method against a fine grid."""
    step_counts = [int(n) for n in step_counts]
    if not step_counts:
        raise ValueError("step_counts must be non-empty")
    ref = integrate_ode(spec, data_pred, x_start, y, t_hi, t_lo, ref_steps, method="ei")
    errors = []
    for n in step_counts:
        out = integrate_ode(spec, data_pred, x_start, y, t_hi, t_lo, n, method=method)
        errors.append(float(np.mean(np.abs(out - ref))))
    floor = min(errors) < 1e-12
    if len(step_counts) > 1:
        slope = -float(np.polyfit(np.log(step_counts), np.log(errors), 1)[0])
    else:
        slope = float("nan")
    return ConvergenceResult(
        slope=slope,
        step_counts=tuple(step_counts),
        errors=tuple(errors),
        error_floor=floor,
    )


def prop3_gap_ladder(
    model,
    dataset,
    oracle: GaussianCouplingOracle,
    dt_list,
    n_samples: int,
    seed: int,
    *,
    weighting="unit",
    metric=SquaredL2(),
) -> list:
    """Distillation-vs-training loss gap under common random numbers.

    With the exact conditional score standing in for the teacher, the two
    objectives are evaluated on one shared batch (same endpoints, times, and
    noises) for every gap size; rows report gap and gap/dt.
    """
    spec = model.spec
    dt_list = sorted((float(d) for d in dt_list), reverse=True)
    x, y = dataset.sample(n_samples, stream(seed, "ladder-data"))
    rng = stream(seed, "ladder-noise")
    t = rng.uniform(model.eps + max(dt_list), spec.T - model.gamma, size=n_samples)
    z = rng.standard_normal(x.shape)

    def teacher(x_t, tt, y_in):
        return oracle_data_pred(oracle, spec, tt, x_t, y_in)

    rows = []
    for dt in dt_list:
        r = t - dt
        l_cbd, _ = cbd_loss_terms(
            model, teacher, x, y, t, r, z,
            weighting=weighting, metric=metric, want_grad=False,
        )
        l_cbt, _ = cbt_loss_terms(
            model, x, y, t, r, z,
            weighting=weighting, metric=metric, want_grad=False,
        )
        gap = abs(l_cbd - l_cbt)
        rows.append(
            {"dt": dt, "cbd": l_cbd, "cbt": l_cbt, "gap": gap, "gap_per_dt": gap / dt}
        )
    return rows


def _require_unit_brownian(spec: NoiseSchedule):
    if not (isinstance(spec, BrownianBridge) and spec.sigma_diff == 1.0):
        raise ValueError("closed-form oracles require the unit Brownian bridge")


def marginal_preservation_test(
    spec: NoiseSchedule,
    gamma: float,
    s_grid,
    n_paths: int,
    x0: float,
    x1: float,
    seed: int,
    *,
    skip: bool = True,
) -> list:
    """Moment z-scores of the hybrid reverse run against the pinned-bridge law.

    One exact stochastic transition leaves the pinned terminal point and
    covers [1, 1-gamma]; the deterministic flow covers the rest.  With
    skip=False the flow starts at the singular time itself, which collapses
    the variance and must fail the variance test.
    """
    _require_unit_brownian(spec)
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    s_grid = sorted((float(s) for s in s_grid), reverse=True)
    if s_grid[0] >= 1.0 or s_grid[-1] <= 0.0:
        raise ValueError("grid times must lie strictly inside (0, 1)")
    rng = stream(seed, "marginal-test")
    x0_vec = np.full(n_paths, float(x0))
    x1_vec = np.full(n_paths, float(x1))
    t_switch = 1.0 - gamma

    rows = []
    t_cur = 1.0
    state = x1_vec.copy()
    for s in s_grid:
        if skip:
            while t_cur > s:
                if t_cur > t_switch and s < t_switch:
                    state = brownian_oracle_reverse_sde(t_cur, t_switch, state, x0_vec, rng)
                    t_cur = t_switch
                elif t_cur > t_switch:
                    state = brownian_oracle_reverse_sde(t_cur, s, state, x0_vec, rng)
                    t_cur = s
                else:
                    state = brownian_oracle_ode(t_cur, s, state, x0_vec, x1_vec)
                    t_cur = s
        else:
            state = brownian_oracle_ode(t_cur, s, state, x0_vec, x1_vec)
            t_cur = s

        mean = (1.0 - s) * x0 + s * x1
        var = s * (1.0 - s)
        z_mean = (state.mean() - mean) / np.sqrt(var / n_paths)
        z_var = (state.var(ddof=1) - var) / (var * np.sqrt(2.0 / (n_paths - 1)))
        rows.append({"s": s, "z_mean": float(z_mean), "z_var": float(z_var)})
    return rows
