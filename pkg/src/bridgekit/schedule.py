"""Noise-schedule algebra for linear-drift diffusion bridges.

A schedule is defined by a drift rate f(t) and a diffusion rate g2(t) on a
horizon [0, T].  Everything else derives from four quantities::

    alpha(t)     = exp(int_0^t f)
    alpha_bar(t) = alpha(t) / alpha(T)
    rho2(t)      = int_0^t g2(tau) / alpha(tau)^2 dtau
    rho_bar2(t)  = rho2(T) - rho2(t)

which in turn give the coefficients of the Gaussian pinned-bridge law
N(a_t * y + b_t * x, c_t^2 I) for a process conditioned on x at time 0 and
y at time T.  The built-in presets carry closed forms; custom (f, g2) pairs
fall back to cached quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import PchipInterpolator

__all__ = [
    "ScheduleEval",
    "BridgeCoeffs",
    "NoiseSchedule",
    "BrownianBridge",
    "I2SB",
    "DdbmVp",
    "DdbmVe",
    "BridgeTtsGmax",
    "BridgeTtsVp",
    "CustomSchedule",
    "SCHEDULE_IDS",
    "schedule_from_id",
]

# Times this close to 0 or T (relative to T) are snapped to the boundary,
# where the closed forms are exact.
_BOUNDARY_SNAP = 1e-12

# Default fractions of T for the training/sampling horizon [eps, T - gamma].
EPS_FRACTION = 1e-4
GAMMA_FRACTION = 1e-3


@dataclass(frozen=True)
class ScheduleEval:
    """Schedule quantities at one time."""

    t: float | np.ndarray
    alpha: float | np.ndarray
    alpha_bar: float | np.ndarray
    rho2: float | np.ndarray
    rho_bar2: float | np.ndarray
    sigma: float | np.ndarray


@dataclass(frozen=True)
class BridgeCoeffs:
    """Pinned-bridge Gaussian coefficients: mean a*y + b*x, stddev c."""

    a: float | np.ndarray
    b: float | np.ndarray
    c: float | np.ndarray


class NoiseSchedule:
    """Base class; subclasses provide T, f, g2, alpha and rho2."""

    T: float
    id: str

    def f(self, t):
        raise NotImplementedError

    def g2(self, t):
        raise NotImplementedError

    def alpha(self, t):
        raise NotImplementedError

    def rho2(self, t):
        raise NotImplementedError

    def alpha_bar(self, t):
        return self.alpha(t) / self.alpha(self.T)

    def rho_bar2(self, t):
        return self.rho2(self.T) - self.rho2(t)

    def params(self) -> dict:
        raise NotImplementedError

    @property
    def default_eps(self) -> float:
        return EPS_FRACTION * self.T

    @property
    def default_gamma(self) -> float:
        return GAMMA_FRACTION * self.T

    def normalize_time(self, t):
        """Validate t in [0, T], absorbing float drift at the boundaries."""
        t = np.asarray(t, dtype=float)
        snap = _BOUNDARY_SNAP * max(self.T, 1.0)
        if np.any(t < -snap) or np.any(t > self.T + snap):
            raise ValueError(f"time out of range [0, {self.T}]: {t}")
        t = np.clip(t, 0.0, self.T)
        return t if t.ndim else float(t)

    def eval(self, t) -> ScheduleEval:
        t = self.normalize_time(t)
        scalar = np.ndim(t) == 0
        alpha = self.alpha(t)
        rho2 = self.rho2(t)
        fields = (t, alpha, self.alpha_bar(t), rho2, self.rho_bar2(t), alpha * np.sqrt(rho2))
        if scalar:
            fields = tuple(float(v) for v in fields)
        return ScheduleEval(*fields)

    def coeffs(self, t) -> BridgeCoeffs:
        """Pinned-bridge coefficients (a_t, b_t, c_t)."""
        ev = self.eval(t)
        rho_T2 = float(self.rho2(self.T))
        a = ev.alpha_bar * ev.rho2 / rho_T2
        b = ev.alpha * ev.rho_bar2 / rho_T2
        c = ev.alpha * np.sqrt(ev.rho2 * ev.rho_bar2) / math.sqrt(rho_T2)
        if np.ndim(ev.t) == 0:
            return BridgeCoeffs(a=float(a), b=float(b), c=float(c))
        return BridgeCoeffs(a=a, b=b, c=c)


class BrownianBridge(NoiseSchedule):
    """Constant diffusion sigma^2, no drift, unit horizon."""

    id = "brownian"

    def __init__(self, sigma: float = 1.0):
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.sigma_diff = float(sigma)
        self.T = 1.0

    def params(self):
        return {"sigma": self.sigma_diff}

    def f(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def g2(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.sigma_diff**2)

    def alpha(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def alpha_bar(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def rho2(self, t):
        return self.sigma_diff**2 * np.asarray(t, dtype=float)

    def rho_bar2(self, t):
        return self.sigma_diff**2 * (1.0 - np.asarray(t, dtype=float))


class I2SB(NoiseSchedule):
    """Symmetric triangular diffusion rate on a unit horizon.

    g2(t) = (eta1 - eta0*|2t - 1|)^2 with eta0 = (sqrt(beta1) - sqrt(beta0))/2
    and eta1 = (sqrt(beta1) + sqrt(beta0))/2; the discrete original is used
    in its continuous approximation.
    """

    id = "i2sb"

    def __init__(self, beta0: float = 0.1, beta1: float = 0.3):
        if not 0 < beta0 <= beta1:
            raise ValueError("need 0 < beta0 <= beta1")
        self.beta0 = float(beta0)
        self.beta1 = float(beta1)
        self.eta0 = (math.sqrt(beta1) - math.sqrt(beta0)) / 2.0
        self.eta1 = (math.sqrt(beta1) + math.sqrt(beta0)) / 2.0
        self.T = 1.0

    def params(self):
        return {"beta0": self.beta0, "beta1": self.beta1}

    def f(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def g2(self, t):
        t = np.asarray(t, dtype=float)
        return (self.eta1 - self.eta0 * np.abs(2.0 * t - 1.0)) ** 2

    def alpha(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def alpha_bar(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def rho2(self, t):
        # Piecewise antiderivative of g2; the integrand rises on [0, 1/2]
        # and falls symmetrically on [1/2, 1].
        t = np.asarray(t, dtype=float)
        e0, e1 = self.eta0, self.eta1
        if e0 == 0.0:
            out = e1**2 * t
            return out if out.ndim else float(out)
        lo = e1 - e0  # g(0)
        rising = ((lo + 2.0 * e0 * np.minimum(t, 0.5)) ** 3 - lo**3) / (6.0 * e0)
        falling = np.where(
            t > 0.5,
            (e1**3 - (e1 + e0 - 2.0 * e0 * np.maximum(t, 0.5)) ** 3) / (6.0 * e0),
            0.0,
        )
        out = rising + falling
        return out if out.ndim else float(out)


class DdbmVp(NoiseSchedule):
    """Variance-preserving bridge with constant rate beta0 on a unit horizon."""

    id = "ddbm-vp"

    def __init__(self, beta0: float = 0.1):
        if beta0 <= 0:
            raise ValueError("beta0 must be positive")
        self.beta0 = float(beta0)
        self.T = 1.0

    def params(self):
        return {"beta0": self.beta0}

    def f(self, t):
        return np.full_like(np.asarray(t, dtype=float), -0.5 * self.beta0)

    def g2(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.beta0)

    def alpha(self, t):
        return np.exp(-0.5 * self.beta0 * np.asarray(t, dtype=float))

    def alpha_bar(self, t):
        return np.exp(0.5 * self.beta0 * (1.0 - np.asarray(t, dtype=float)))

    def rho2(self, t):
        return np.expm1(self.beta0 * np.asarray(t, dtype=float))

    def rho_bar2(self, t):
        b = self.beta0
        return np.exp(b) - np.exp(b * np.asarray(t, dtype=float))


class DdbmVe(NoiseSchedule):
    """Variance-exploding bridge: g2(t) = 2t, horizon T."""

    id = "ddbm-ve"

    def __init__(self, T: float = 80.0):
        if T <= 0:
            raise ValueError("T must be positive")
        self.T = float(T)

    def params(self):
        return {"T": self.T}

    def f(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def g2(self, t):
        return 2.0 * np.asarray(t, dtype=float)

    def alpha(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def alpha_bar(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def rho2(self, t):
        return np.asarray(t, dtype=float) ** 2

    def rho_bar2(self, t):
        return self.T**2 - np.asarray(t, dtype=float) ** 2


class BridgeTtsGmax(NoiseSchedule):
    """Driftless bridge with linearly growing diffusion rate beta0 + beta_d*t."""

    id = "bridge-tts-gmax"

    def __init__(self, beta0: float = 0.01, beta_d: float = 49.99):
        if beta0 <= 0 or beta_d < 0:
            raise ValueError("need beta0 > 0 and beta_d >= 0")
        self.beta0 = float(beta0)
        self.beta_d = float(beta_d)
        self.T = 1.0

    def params(self):
        return {"beta0": self.beta0, "beta_d": self.beta_d}

    def f(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def g2(self, t):
        return self.beta0 + self.beta_d * np.asarray(t, dtype=float)

    def alpha(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def alpha_bar(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def rho2(self, t):
        t = np.asarray(t, dtype=float)
        return self.beta0 * t + 0.5 * self.beta_d * t**2


class BridgeTtsVp(NoiseSchedule):
    """Variance-preserving bridge with linearly growing rate beta0 + beta_d*t."""

    id = "bridge-tts-vp"

    def __init__(self, beta0: float = 0.01, beta_d: float = 19.99):
        if beta0 <= 0 or beta_d < 0:
            raise ValueError("need beta0 > 0 and beta_d >= 0")
        self.beta0 = float(beta0)
        self.beta_d = float(beta_d)
        self.T = 1.0

    def params(self):
        return {"beta0": self.beta0, "beta_d": self.beta_d}

    def _ramp(self, t):
        return self.beta0 * t + 0.5 * self.beta_d * t**2

    def f(self, t):
        t = np.asarray(t, dtype=float)
        return -0.5 * (self.beta0 + self.beta_d * t)

    def g2(self, t):
        return self.beta0 + self.beta_d * np.asarray(t, dtype=float)

    def alpha(self, t):
        return np.exp(-0.5 * self._ramp(np.asarray(t, dtype=float)))

    def rho2(self, t):
        return np.expm1(self._ramp(np.asarray(t, dtype=float)))


class CustomSchedule(NoiseSchedule):
    """Schedule from arbitrary callables f(t), g2(t) on [0, T].

    Integrals are cached once on a fixed Gauss-Legendre panel grid and
    queried through monotone cubic interpolation, so repeated evaluation is
    deterministic and cheap.
    """

    id = "custom"

    _PANELS = 512
    _GL_ORDER = 8

    def __init__(self, f: Callable, g2: Callable, T: float):
        if T <= 0:
            raise ValueError("T must be positive")
        self.T = float(T)
        self._f = f
        self._g2 = g2
        self._build_cache()

    def params(self):
        raise ValueError("custom schedules are not serializable by id")

    def _build_cache(self):
        nodes, weights = np.polynomial.legendre.leggauss(self._GL_ORDER)
        edges = np.linspace(0.0, self.T, self._PANELS + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        # (panels, order) evaluation points for all panels at once
        ts = mid[:, None] + half[:, None] * nodes[None, :]

        fv = np.asarray(self._f(ts), dtype=float)
        g2v = np.asarray(self._g2(ts), dtype=float)
        fv = np.broadcast_to(fv, ts.shape)
        g2v = np.broadcast_to(g2v, ts.shape)
        if not (np.all(np.isfinite(fv)) and np.all(np.isfinite(g2v))):
            raise ValueError("custom integrand is non-finite on [0, T]")

        log_alpha = np.concatenate(
            [[0.0], np.cumsum((fv * weights).sum(axis=1) * half)]
        )
        self._log_alpha = PchipInterpolator(edges, log_alpha)

        alpha_nodes = np.exp(self._log_alpha(ts))
        rho2 = np.concatenate(
            [[0.0], np.cumsum((g2v / alpha_nodes**2 * weights).sum(axis=1) * half)]
        )
        self._rho2 = PchipInterpolator(edges, rho2)

    def f(self, t):
        return np.asarray(self._f(np.asarray(t, dtype=float)), dtype=float)

    def g2(self, t):
        return np.asarray(self._g2(np.asarray(t, dtype=float)), dtype=float)

    def alpha(self, t):
        out = np.exp(self._log_alpha(np.asarray(t, dtype=float)))
        return out if out.ndim else float(out)

    def rho2(self, t):
        out = self._rho2(np.asarray(t, dtype=float))
        return out if out.ndim else float(out)


SCHEDULE_IDS = {
    "brownian": BrownianBridge,
    "i2sb": I2SB,
    "ddbm-vp": DdbmVp,
    "ddbm-ve": DdbmVe,
    "bridge-tts-gmax": BridgeTtsGmax,
    "bridge-tts-vp": BridgeTtsVp,
}


def schedule_from_id(schedule_id: str, **params) -> NoiseSchedule:
    """Build a preset schedule addressable by its string id."""
    try:
        cls = SCHEDULE_IDS[schedule_id]
    except KeyError:
        raise ValueError(
            f"unknown schedule id {schedule_id!r}; known: {sorted(SCHEDULE_IDS)}"
        ) from None
    return cls(**params)
