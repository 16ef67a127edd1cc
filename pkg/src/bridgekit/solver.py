"""One-step integrators for the bridge dynamics and closed-form oracles.

The exponential-integrator step treats the linear part of the reverse-time
ODE exactly and freezes only the data prediction over the step, which makes
it exact whenever the prediction is constant along the trajectory.  A plain
Euler step of the same vector field is kept as the discretization-error
baseline, and the unit Brownian bridge's analytic reverse-SDE and ODE
transitions serve as ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bridge import _broadcast_coeff, pinning_score
from .schedule import NoiseSchedule

__all__ = [
    "OdeStepCoeffs",
    "ode_step_coeffs",
    "ei_ode_step",
    "euler_ode_step",
    "posterior_sde_step",
    "brownian_oracle_reverse_sde",
    "brownian_oracle_ode",
]

# Bridge standard deviations below this are treated as exactly pinned.
_C_FLOOR = 1e-15


@dataclass(frozen=True)
class OdeStepCoeffs:
    """Coefficients of one exponential-integrator step: x, prediction, endpoint."""

    k1: float | np.ndarray
    k2: float | np.ndarray
    k3: float | np.ndarray


def ode_step_coeffs(spec: NoiseSchedule, t, r) -> OdeStepCoeffs:
    """Step coefficients from time t to time r (degenerate r == t allowed)."""
    if np.ndim(t) == 0 and np.ndim(r) == 0 and float(t) == float(r):
        return OdeStepCoeffs(1.0, 0.0, 0.0)
    ev_t, ev_r = spec.eval(t), spec.eval(r)
    rho_t, rhob_t = np.sqrt(ev_t.rho2), np.sqrt(ev_t.rho_bar2)
    rho_r, rhob_r = np.sqrt(ev_r.rho2), np.sqrt(ev_r.rho_bar2)
    rho_T2 = float(spec.rho2(spec.T))
    alpha_T = float(spec.alpha(spec.T))

    k1 = (ev_r.alpha * rho_r * rhob_r) / (ev_t.alpha * rho_t * rhob_t)
    k2 = ev_r.alpha / rho_T2 * (ev_r.rho_bar2 - rho_r * rhob_r * (rhob_t / rho_t))
    k3 = ev_r.alpha / (alpha_T * rho_T2) * (ev_r.rho2 - rho_r * rhob_r * (rho_t / rhob_t))
    return OdeStepCoeffs(k1, k2, k3)


def _check_step_order(t, r):
    if np.any(np.asarray(r) > np.asarray(t)):
        raise ValueError("step must move backward in time (r <= t)")


def ei_ode_step(spec: NoiseSchedule, t, r, x_t, y, x_pred) -> np.ndarray:
    """Exponential-integrator step of the reverse ODE from t down to r."""
    x_t, y, x_pred = (np.asarray(v, dtype=float) for v in (x_t, y, x_pred))
    _check_step_order(t, r)
    c_t = spec.coeffs(t).c
    if np.any(np.asarray(c_t) <= _C_FLOOR):
        raise ValueError("step must start strictly inside the bridge (c_t > 0)")
    k = ode_step_coeffs(spec, t, r)
    k1, k2, k3 = (_broadcast_coeff(v, x_t) for v in (k.k1, k.k2, k.k3))
    return k1 * x_t + k2 * x_pred + k3 * y


def euler_ode_step(spec: NoiseSchedule, t, r, x_t, y, x_pred) -> np.ndarray:
    """Explicit Euler step of the reverse ODE in data-prediction form."""
    x_t, y, x_pred = (np.asarray(v, dtype=float) for v in (x_t, y, x_pred))
    _check_step_order(t, r)
    ev = spec.eval(t)
    g2 = np.asarray(spec.g2(t), dtype=float)
    drift = np.asarray(spec.f(t), dtype=float) * x_t
    if np.any(g2 != 0.0):
        pin = 0.5 * g2 * pinning_score(spec, t, x_t, y)
        denoise = (
            0.5
            * _broadcast_coeff(g2 / (ev.alpha**2 * ev.rho2), x_t)
            * (x_t - _broadcast_coeff(ev.alpha, x_t) * x_pred)
        )
        drift = drift + pin + denoise
    dt = np.asarray(r, dtype=float) - np.asarray(t, dtype=float)
    return x_t + _broadcast_coeff(dt, x_t) * drift


def posterior_sde_step(spec: NoiseSchedule, t, r, x0_hat, y, z) -> np.ndarray:
    """Stochastic re-noising: draw the bridge point at r given endpoints (x0_hat, y)."""
    x0_hat, y, z = (np.asarray(v, dtype=float) for v in (x0_hat, y, z))
    if not (x0_hat.shape == y.shape == z.shape):
        raise ValueError(
            f"dimension mismatch: x0_hat {x0_hat.shape}, y {y.shape}, z {z.shape}"
        )
    if np.any(np.asarray(r) > np.asarray(t)):
        raise ValueError("posterior step must move backward in time (r <= t)")
    k = spec.coeffs(r)
    a, b, c = (_broadcast_coeff(v, x0_hat) for v in (k.a, k.b, k.c))
    c = np.where(np.asarray(c) < _C_FLOOR, 0.0, c)
    return a * y + b * x0_hat + c * z


def brownian_oracle_reverse_sde(t, s, x_t, x0, rng: np.random.Generator) -> np.ndarray:
    """Exact reverse-SDE transition of the unit Brownian bridge from t to s.

    Valid from any t <= 1, including the pinned start t = 1.
    """
    if not 0.0 < s < t <= 1.0:
        raise ValueError("need 0 < s < t <= 1")
    x_t, x0 = np.asarray(x_t, dtype=float), np.asarray(x0, dtype=float)
    noise = rng.standard_normal(x_t.shape)
    return (s / t) * x_t + (1.0 - s / t) * x0 + np.sqrt(s * (t - s) / t) * noise


def brownian_oracle_ode(t, s, x_t, x0, x1) -> np.ndarray:
    """Exact reverse-ODE transition of the unit Brownian bridge from t to s.

    At t = 1 the flow is singular: every trajectory leaves the pinned point,
    and the map collapses to the deterministic mean path (1-s)*x0 + s*x1.
    """
    if not 0.0 < s <= t <= 1.0:
        raise ValueError("need 0 < s <= t <= 1")
    x_t, x0, x1 = (np.asarray(v, dtype=float) for v in (x_t, x0, x1))
    if t == 1.0:
        return (1.0 - s) * x0 + s * x1 + 0.0 * x_t
    ratio = np.sqrt(s * (1.0 - s)) / np.sqrt(t * (1.0 - t))
    return ratio * x_t + (s - ratio * t) * x1 + (1.0 - s - ratio * (1.0 - t)) * x0
