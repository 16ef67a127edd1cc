"""Pinned-bridge distributions, forward simulation, and score transforms.

The forward process is a diffusion conditioned to hit a fixed terminal
endpoint y at time T.  Its time-t law given both endpoints is the Gaussian
N(a_t*y + b_t*x, c_t^2 I) from the schedule module; the conditioning also
gives a closed-form drift correction -(x_t - alpha_bar_t*y) / (alpha_t^2 *
rho_bar_t^2) used both for simulation and inside the reverse-time dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule

__all__ = [
    "Coupling",
    "GaussianCouplingOracle",
    "sample_bridge_point",
    "pinning_score",
    "simulate_forward_sde",
    "forward_marginal_rows",
    "score_from_data_pred",
    "data_pred_from_score",
    "oracle_posterior_score",
    "oracle_data_pred",
]


@dataclass(frozen=True)
class Coupling:
    """A jointly drawn endpoint pair (x at time 0, y at time T)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if x.shape != y.shape:
            raise ValueError(f"endpoint dimension mismatch: {x.shape} vs {y.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("endpoints must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def dim(self) -> int:
        return self.x.shape[-1]


@dataclass(frozen=True)
class GaussianCouplingOracle:
    """Componentwise-independent Gaussian data given the terminal endpoint.

    With x0 | y ~ N(mu0, s0^2 I), the bridge's time-t law given only y is
    N(a_t*y + b_t*mu0, (b_t^2 s0^2 + c_t^2) I), so its score is available in
    closed form and serves as ground truth for solver and loss tests.
    """

    mu0: float
    s0: float
    dim: int = 1

    def __post_init__(self):
        if self.s0 <= 0:
            raise ValueError("s0 must be positive")

    def sample_data(self, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.mu0 + self.s0 * rng.standard_normal(np.shape(y))


def _broadcast_coeff(k, ref: np.ndarray):
    """Expand a per-sample coefficient so it multiplies (n, d) states."""
    k = np.asarray(k, dtype=float)
    if k.ndim == 0 or ref.ndim == 1:
        return k
    return k[:, None]


def sample_bridge_point(spec: NoiseSchedule, t, x, y, z) -> np.ndarray:
    """Draw x_t = a_t*y + b_t*x + c_t*z with z standard normal."""
    x, y, z = (np.asarray(v, dtype=float) for v in (x, y, z))
    if not (x.shape == y.shape == z.shape):
        raise ValueError(
            f"dimension mismatch: x {x.shape}, y {y.shape}, z {z.shape}"
        )
    k = spec.coeffs(t)
    a, b, c = (_broadcast_coeff(v, x) for v in (k.a, k.b, k.c))
    return a * y + b * x + c * z


def pinning_score(spec: NoiseSchedule, t, x_t, y) -> np.ndarray:
    """Gradient of log p(terminal = y | x_t): -(x_t - alpha_bar*y) / (alpha^2 rho_bar^2)."""
    x_t, y = np.asarray(x_t, dtype=float), np.asarray(y, dtype=float)
    ev = spec.eval(t)
    denom = _broadcast_coeff(ev.alpha**2 * ev.rho_bar2, x_t)
    abar = _broadcast_coeff(ev.alpha_bar, x_t)
    return -(x_t - abar * y) / denom


def simulate_forward_sde(
    spec: NoiseSchedule,
    coupling: Coupling,
    n_steps: int,
    rng: np.random.Generator,
    *,
    gamma_sim: float | None = None,
    record_times=None,
):
    """Euler-Maruyama simulation of the endpoint-pinned forward SDE.

    Integrates on [0, T - gamma_sim]; the pinning drift diverges at T, so the
    simulation never touches the terminal endpoint itself.  Returns
    (times, states): the full grid by default, or snapshots at the grid
    points nearest each requested record time.
    """
    if n_steps < 2:
        raise ValueError("n_steps must be at least 2")
    if gamma_sim is None:
        gamma_sim = spec.default_gamma
    if not 0 < gamma_sim < spec.T:
        raise ValueError("gamma_sim must lie in (0, T)")

    grid = np.linspace(0.0, spec.T - gamma_sim, n_steps + 1)
    dt = grid[1] - grid[0]
    x = coupling.x.astype(float).copy()
    y = coupling.y

    if record_times is None:
        record_idx = np.arange(n_steps + 1)
    else:
        record_idx = np.unique(
            np.searchsorted(grid + dt / 2, np.asarray(record_times, dtype=float))
        )
        record_idx = np.clip(record_idx, 0, n_steps)
    snapshots = np.empty((len(record_idx), x.shape[-1]))
    rec = {int(i): j for j, i in enumerate(record_idx)}

    if 0 in rec:
        snapshots[rec[0]] = x
    for i in range(n_steps):
        t = grid[i]
        drift = spec.f(t) * x + spec.g2(t) * pinning_score(spec, t, x, y)
        noise = np.sqrt(spec.g2(t) * dt) * rng.standard_normal(x.shape)
        x = x + drift * dt + noise
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at step {i + 1}")
        if i + 1 in rec:
            snapshots[rec[i + 1]] = x
    return grid[record_idx], snapshots


def forward_marginal_rows(spec, coupling, n_steps, rng, times) -> list:
    """Empirical marginal moments of a forward run as {t, mean, var} rows."""
    got, states = simulate_forward_sde(
        spec, coupling, n_steps, rng, record_times=times
    )
    return [
        {"t": float(t), "mean": [float(s.mean())], "var": [float(s.var(ddof=1))]}
        for t, s in zip(got, states)
    ]


def _bridge_var(spec: NoiseSchedule, t, ref: np.ndarray):
    k = spec.coeffs(t)
    c2 = np.asarray(k.c, dtype=float) ** 2
    if np.any(c2 <= 0):
        raise ValueError("bridge variance vanishes at a pinned endpoint")
    return k, _broadcast_coeff(c2, ref)


def score_from_data_pred(spec: NoiseSchedule, t, x_t, y, x_pred) -> np.ndarray:
    """Score of the two-endpoint Gaussian law implied by a data prediction."""
    x_t, y, x_pred = (np.asarray(v, dtype=float) for v in (x_t, y, x_pred))
    k, c2 = _bridge_var(spec, t, x_t)
    a, b = _broadcast_coeff(k.a, x_t), _broadcast_coeff(k.b, x_t)
    return -(x_t - a * y - b * x_pred) / c2


def data_pred_from_score(spec: NoiseSchedule, t, x_t, y, score) -> np.ndarray:
    """Inverse transform of score_from_data_pred."""
    x_t, y, score = (np.asarray(v, dtype=float) for v in (x_t, y, score))
    k, c2 = _bridge_var(spec, t, x_t)
    a, b = _broadcast_coeff(k.a, x_t), _broadcast_coeff(k.b, x_t)
    return (x_t - a * y + c2 * score) / b


def oracle_posterior_score(
    oracle: GaussianCouplingOracle, spec: NoiseSchedule, t, x_t, y
) -> np.ndarray:
    """Exact terminal-conditioned score for Gaussian-coupling data."""
    x_t, y = np.asarray(x_t, dtype=float), np.asarray(y, dtype=float)
    k = spec.coeffs(t)
    a, b, c = (np.asarray(v, dtype=float) for v in (k.a, k.b, k.c))
    var = b**2 * oracle.s0**2 + c**2
    return -(x_t - _broadcast_coeff(a, x_t) * y - _broadcast_coeff(b * oracle.mu0, x_t)) / _broadcast_coeff(var, x_t)


def oracle_data_pred(
    oracle: GaussianCouplingOracle, spec: NoiseSchedule, t, x_t, y
) -> np.ndarray:
    """Data prediction equivalent to the oracle score (the posterior mean)."""
    score = oracle_posterior_score(oracle, spec, t, x_t, y)
    return data_pred_from_score(spec, t, x_t, y, score)
