"""Learning objectives and the optimization loop.

Three objectives are supported:

* score-matching pretraining in data-prediction form (``dbsm``): regress the
  wrapped network onto the time-0 endpoint at bridge points;
* consistency distillation (``cbd``): match the online consistency output at
  t against the frozen-target output at r, where the target input is one
  exponential-integrator step of the empirical reverse ODE under a frozen
  teacher;
* consistency training (``cbt``): same comparison, but the target input is
  the bridge point at r rebuilt from the same endpoints and the same noise,
  which needs no teacher.

Targets always go through a stop-gradient copy of the parameters (an exact
copy every step, no averaging), so gradients flow only through the online
branch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .bridge import sample_bridge_point
from .model import BridgeModel
from .rng import stream
from .solver import ode_step_coeffs

__all__ = [
    "ConstantGap",
    "SigmoidGap",
    "UnitWeight",
    "InverseGapWeight",
    "SquaredL2",
    "PseudoHuber",
    "Adam",
    "dbsm_loss",
    "cbd_loss",
    "cbt_loss",
    "cbd_loss_terms",
    "cbt_loss_terms",
    "train_loop",
    "TrainResult",
]

DIVERGENCE_LIMIT = 1e6


# -- training schedules r(t) ------------------------------------------------


@dataclass(frozen=True)
class ConstantGap:
    """Fixed target gap: r(t) = max(t - dt, eps)."""

    dt: float

    def r(self, t, iters: int, eps: float):
        return np.maximum(np.asarray(t, dtype=float) - self.dt, eps)

    def state(self, iters: int) -> dict:
        return {"dt": self.dt}


@dataclass(frozen=True)
class SigmoidGap:
    """Gap that shrinks over training via a staged sigmoid factor.

    The raw map t * (1 - q^-floor(iters/s)) * (1 + k / (1 + exp(b*t))) can
    exceed t for small t, so the result is clamped into
    [t - dt_max, t - dt_min] and then onto [eps, t).
    """

    q: float = 2.0
    s: int = 5000
    k: float = 8.0
    b: float = 20.0
    dt_max: float = 0.2
    dt_min: float = 0.005

    def r(self, t, iters: int, eps: float):
        t = np.asarray(t, dtype=float)
        shrink = 1.0 - self.q ** (-(iters // self.s))
        raw = t * shrink * (1.0 + self.k / (1.0 + np.exp(self.b * t)))
        clamped = np.clip(raw, t - self.dt_max, t - self.dt_min)
        return np.maximum(clamped, eps)

    def state(self, iters: int) -> dict:
        stage = int(iters // self.s)
        return {"stage": stage, "shrink": 1.0 - self.q**-stage}


# -- loss weightings ---------------------------------------------------------


@dataclass(frozen=True)
class UnitWeight:
    def __call__(self, t, r):
        return np.ones_like(np.asarray(t, dtype=float))


@dataclass(frozen=True)
class InverseGapWeight:
    """lambda(t) = 1 / (t - r(t)), with the clamped r."""

    def __call__(self, t, r):
        return 1.0 / (np.asarray(t, dtype=float) - np.asarray(r, dtype=float))


# -- metrics ------------------------------------------------------------------


@dataclass(frozen=True)
class SquaredL2:
    def value(self, diff: np.ndarray) -> np.ndarray:
        return np.sum(diff**2, axis=1)

    def grad(self, diff: np.ndarray) -> np.ndarray:
        return 2.0 * diff


@dataclass(frozen=True)
class PseudoHuber:
    """Smooth robust metric sqrt(|d|^2 + c^2) - c."""

    c: float = 0.03

    def value(self, diff: np.ndarray) -> np.ndarray:
        return np.sqrt(np.sum(diff**2, axis=1) + self.c**2) - self.c

    def grad(self, diff: np.ndarray) -> np.ndarray:
        root = np.sqrt(np.sum(diff**2, axis=1) + self.c**2)
        return diff / root[:, None]


def _check_finite(loss: float, what: str, t=None):
    if not np.isfinite(loss):
        extra = "" if t is None else f" (t range [{np.min(t)}, {np.max(t)}])"
        raise FloatingPointError(f"non-finite {what} loss{extra}")


# -- score-matching pretraining ----------------------------------------------


def dbsm_loss_terms(
    model: BridgeModel, x, y, t, z, *, weighting: str = "unit", want_grad: bool = True
):
    """Data-prediction regression loss at given times and noises."""
    spec = model.spec
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    x_t = sample_bridge_point(spec, t, x, y, z)
    pred, pullback = model.data_pred_with_grad(x_t, t, y)
    resid = pred - x
    if weighting == "unit":
        w = np.ones(x.shape[0])
    elif weighting == "score":
        k = spec.coeffs(t)
        w = np.asarray(k.b) ** 2 / np.asarray(k.c) ** 2
    else:
        raise ValueError(f"unknown dbsm weighting {weighting!r}")
    loss = float(np.mean(w * np.sum(resid**2, axis=1)))
    _check_finite(loss, "dbsm", t)
    if not want_grad:
        return loss, None
    grad = pullback(2.0 * w[:, None] * resid / x.shape[0])
    return loss, grad


def dbsm_loss(
    model: BridgeModel,
    x,
    y,
    rng: np.random.Generator,
    *,
    weighting: str = "unit",
    want_grad: bool = True,
):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = rng.uniform(model.eps, model.spec.T - model.gamma, size=x.shape[0])
    z = rng.standard_normal(x.shape)
    return dbsm_loss_terms(model, x, y, t, z, weighting=weighting, want_grad=want_grad)


# -- consistency objectives ----------------------------------------------------


def _resolve_weight(weighting):
    if isinstance(weighting, str):
        return {"unit": UnitWeight(), "inverse-gap": InverseGapWeight()}[weighting]
    return weighting


def cbd_loss_terms(
    model: BridgeModel,
    teacher,
    x,
    y,
    t,
    r,
    z,
    *,
    target_model: BridgeModel | None = None,
    weighting="unit",
    metric: SquaredL2 | PseudoHuber = SquaredL2(),
    want_grad: bool = True,
):
    """Distillation loss at explicit draws; teacher maps (x_t, t, y) to x0-hat."""
    spec = model.spec
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    t, r = np.asarray(t, dtype=float), np.asarray(r, dtype=float)
    assert np.all(r < t), "training schedule must produce r < t"
    target_net = model if target_model is None else target_model

    x_t = sample_bridge_point(spec, t, x, y, z)
    teacher_pred = teacher.data_pred if isinstance(teacher, BridgeModel) else teacher
    x_phi = teacher_pred(x_t, t, y)
    k = ode_step_coeffs(spec, t, r)
    x_hat_r = (
        np.asarray(k.k1)[:, None] * x_t
        + np.asarray(k.k2)[:, None] * np.asarray(x_phi, dtype=float)
        + np.asarray(k.k3)[:, None] * y
    )

    online, pullback = model.consistency_with_grad(x_t, t, y)
    target = target_net.consistency(x_hat_r, r, y)
    diff = online - target
    lam = _resolve_weight(weighting)(t, r)
    loss = float(np.mean(lam * metric.value(diff)))
    _check_finite(loss, "cbd", t)
    if not want_grad:
        return loss, None
    grad = pullback(lam[:, None] * metric.grad(diff) / x.shape[0])
    return loss, grad


def cbd_loss(
    model: BridgeModel,
    teacher,
    x,
    y,
    rng: np.random.Generator,
    *,
    tschedule,
    iters: int = 0,
    target_model: BridgeModel | None = None,
    weighting="unit",
    metric=SquaredL2(),
    want_grad: bool = True,
):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = rng.uniform(model.eps, model.spec.T - model.gamma, size=x.shape[0])
    r = tschedule.r(t, iters, model.eps)
    z = rng.standard_normal(x.shape)
    return cbd_loss_terms(
        model,
        teacher,
        x,
        y,
        t,
        r,
        z,
        target_model=target_model,
        weighting=weighting,
        metric=metric,
        want_grad=want_grad,
    )


def cbt_loss_terms(
    model: BridgeModel,
    x,
    y,
    t,
    r,
    z,
    *,
    target_model: BridgeModel | None = None,
    weighting="unit",
    metric=SquaredL2(),
    want_grad: bool = True,
):
    """Teacher-free loss at explicit draws; one shared noise builds both inputs."""
    spec = model.spec
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    t, r = np.asarray(t, dtype=float), np.asarray(r, dtype=float)
    assert np.all(r < t), "training schedule must produce r < t"
    target_net = model if target_model is None else target_model

    x_t = sample_bridge_point(spec, t, x, y, z)
    x_r = sample_bridge_point(spec, r, x, y, z)

    online, pullback = model.consistency_with_grad(x_t, t, y)
    target = target_net.consistency(x_r, r, y)
    diff = online - target
    lam = _resolve_weight(weighting)(t, r)
    loss = float(np.mean(lam * metric.value(diff)))
    _check_finite(loss, "cbt", t)
    if not want_grad:
        return loss, None
    grad = pullback(lam[:, None] * metric.grad(diff) / x.shape[0])
    return loss, grad


def cbt_loss(
    model: BridgeModel,
    x,
    y,
    rng: np.random.Generator,
    *,
    tschedule,
    iters: int = 0,
    target_model: BridgeModel | None = None,
    weighting="unit",
    metric=SquaredL2(),
    want_grad: bool = True,
):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = rng.uniform(model.eps, model.spec.T - model.gamma, size=x.shape[0])
    r = tschedule.r(t, iters, model.eps)
    z = rng.standard_normal(x.shape)
    return cbt_loss_terms(
        model,
        x,
        y,
        t,
        r,
        z,
        target_model=target_model,
        weighting=weighting,
        metric=metric,
        want_grad=want_grad,
    )


# -- optimizer and loop --------------------------------------------------------


class Adam:
    """Adaptive-moment gradient descent on a flat parameter vector."""

    def __init__(self, n_params: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.step = 0

    def update(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.step += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        mhat = self.m / (1 - self.beta1**self.step)
        vhat = self.v / (1 - self.beta2**self.step)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainResult:
    model: BridgeModel
    log: list = field(default_factory=list)
    diverged: bool = False
    steps_done: int = 0


def train_loop(
    model: BridgeModel,
    dataset,
    objective: str,
    *,
    steps: int,
    lr: float = 1e-3,
    lr_final: float | None = None,
    batch_size: int = 128,
    seed: int = 0,
    tschedule=None,
    weighting="unit",
    metric=SquaredL2(),
    dbsm_weighting: str = "unit",
    teacher: BridgeModel | None = None,
    log_every: int = 100,
) -> TrainResult:
    """Optimize the model in place; deterministic given the seed.

    The learning rate decays linearly to lr_final when given.  Stops early
    (keeping the last finite parameters) when the loss is non-finite or
    exceeds the divergence limit.
    """
    if objective not in ("dbsm", "cbd", "cbt"):
        raise ValueError(f"unknown objective {objective!r}")
    if objective == "cbd" and teacher is None:
        raise ValueError("cbd requires a frozen teacher")
    if objective in ("cbd", "cbt") and tschedule is None:
        raise ValueError(f"{objective} requires a training schedule")

    adam = Adam(model.net.n_params, lr)
    result = TrainResult(model=model)
    t0 = time.monotonic()

    for i in range(steps):
        if lr_final is not None and steps > 1:
            adam.lr = lr + (lr_final - lr) * (i / (steps - 1))
        x, y = dataset.sample(batch_size, stream(seed, "data", i))
        noise_rng = stream(seed, "noise", i)
        try:
            if objective == "dbsm":
                loss, grad = dbsm_loss(model, x, y, noise_rng, weighting=dbsm_weighting)
                state = {}
            elif objective == "cbd":
                loss, grad = cbd_loss(
                    model, teacher, x, y, noise_rng,
                    tschedule=tschedule, iters=i, weighting=weighting, metric=metric,
                )
                state = tschedule.state(i)
            else:
                loss, grad = cbt_loss(
                    model, x, y, noise_rng,
                    tschedule=tschedule, iters=i, weighting=weighting, metric=metric,
                )
                state = tschedule.state(i)
        except FloatingPointError:
            result.diverged = True
            break
        if loss > DIVERGENCE_LIMIT or not np.all(np.isfinite(grad)):
            result.diverged = True
            break

        adam.update(model.net.params, grad)
        result.steps_done = i + 1
        if i % log_every == 0 or i == steps - 1:
            result.log.append(
                {
                    "step": i,
                    "loss": loss,
                    "schedule": state,
                    "wallclock": time.monotonic() - t0,
                }
            )
    return result
