"""Function approximator with built-in boundary-preserving preconditions.

A plain fully-connected tanh network (explicit forward and reverse passes,
no autodiff dependency) is wrapped by one of three input/output rescalings
so that the wrapped map equals the identity at the starting time eps before
any training happens:

* ``edm``        skip/output coefficients built from endpoint statistics,
                 with the output coefficient vanishing at the shifted origin;
* ``i2sb``       residual form x_t - sigma(t - eps) * F(...), where sigma
                 vanishes at the shifted origin;
* ``universal``  a one-step exponential-integrator solve from t to eps
                 around the raw network prediction, which degenerates to the
                 identity at t = eps for any schedule.

The same wrapped network is read either as a data predictor (estimate of the
time-0 endpoint) or as a consistency function (estimate of the reverse-ODE
solution at eps).
"""

from __future__ import annotations

import base64
import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import solver
from .rng import stream
from .schedule import NoiseSchedule, schedule_from_id

__all__ = [
    "Mlp",
    "EndpointStats",
    "estimate_endpoint_stats",
    "BridgeModel",
    "save_checkpoint",
    "load_checkpoint",
]

_SCHEMES = ("edm", "i2sb", "universal")
_N_FREQS = 8  # sinusoidal time embedding width = 2 * _N_FREQS
_RADICAL_FLOOR = 1e-12
CHECKPOINT_SCHEMA = 1


def _silu(z: np.ndarray):
    s = np.empty_like(z)
    pos = z >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    s[~pos] = ez / (1.0 + ez)
    return z * s, s


def _silu_slope(z: np.ndarray, s: np.ndarray) -> np.ndarray:
    return s * (1.0 + z * (1.0 - s))


class Mlp:
    """Fully-connected network (SiLU hidden units) over a flat parameter vector."""

    def __init__(self, widths, params: np.ndarray):
        self.widths = [int(w) for w in widths]
        if any(w <= 0 for w in self.widths) or len(self.widths) < 2:
            raise ValueError("widths must be positive and include input and output")
        expected = sum(
            i * o + o for i, o in zip(self.widths[:-1], self.widths[1:])
        )
        params = np.asarray(params, dtype=float)
        if params.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got {params.shape}")
        self.params = params

    @classmethod
    def create(cls, widths, rng: np.random.Generator) -> "Mlp":
        # zero output layer: the wrapped model starts at its skip connection
        parts = []
        n_layers = len(widths) - 1
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            if i == n_layers - 1:
                parts.append(np.zeros(fan_in * fan_out))
            else:
                parts.append(rng.standard_normal(fan_in * fan_out) / np.sqrt(fan_in))
            parts.append(np.zeros(fan_out))
        return cls(widths, np.concatenate(parts))

    @property
    def n_params(self) -> int:
        return self.params.size

    def _layers(self, flat: np.ndarray):
        off = 0
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            w = flat[off : off + fan_in * fan_out].reshape(fan_in, fan_out)
            off += fan_in * fan_out
            b = flat[off : off + fan_out]
            off += fan_out
            yield w, b

    def forward(self, x: np.ndarray):
        """Returns (output, cache); cache holds activations for backward."""
        acts = [np.asarray(x, dtype=float)]
        pre = []
        layers = list(self._layers(self.params))
        for i, (w, b) in enumerate(layers):
            z = acts[-1] @ w + b
            if i < len(layers) - 1:
                a, s = _silu(z)
                pre.append((z, s))
                acts.append(a)
            else:
                acts.append(z)
        return acts[-1], (acts, pre)

    def backward(self, cache, dout: np.ndarray) -> np.ndarray:
        """Accumulate d(loss)/d(params) given d(loss)/d(output)."""
        acts, pre = cache
        grad = np.zeros_like(self.params)
        layers = list(self._layers(self.params))
        grad_views = list(self._layers(grad))
        delta = np.asarray(dout, dtype=float)
        for i in reversed(range(len(layers))):
            w, _ = layers[i]
            gw, gb = grad_views[i]
            gw += acts[i].T @ delta
            gb += delta.sum(axis=0)
            if i > 0:
                delta = (delta @ w.T) * _silu_slope(*pre[i - 1])
        return grad


@dataclass(frozen=True)
class EndpointStats:
    """Pooled per-dimension second moments of the endpoint pair."""

    var0: float
    varT: float
    cov0T: float


def estimate_endpoint_stats(xs: np.ndarray, ys: np.ndarray) -> EndpointStats:
    """Unbiased sample moments of (x, y), pooled over dimensions."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if xs.shape != ys.shape:
        raise ValueError("endpoint arrays must have matching shapes")
    if xs.shape[0] < 2:
        raise ValueError("need at least 2 samples to estimate endpoint statistics")
    x, y = xs.ravel(), ys.ravel()
    n = x.size
    dx, dy = x - x.mean(), y - y.mean()
    var0 = float(dx @ dx / (n - 1))
    varT = float(dy @ dy / (n - 1))
    cov = float(dx @ dy / (n - 1))
    if var0 <= 0.0 or varT <= 0.0:
        warnings.warn("degenerate endpoint statistics (zero variance)", RuntimeWarning)
    return EndpointStats(var0=var0, varT=varT, cov0T=cov)


def _sinusoidal_features(u: np.ndarray) -> np.ndarray:
    freqs = 2.0 ** np.arange(_N_FREQS)
    phase = 2.0 * np.pi * u[:, None] * freqs[None, :]
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)


class BridgeModel:
    """A network bound to a schedule, a precondition scheme, and a horizon."""

    def __init__(
        self,
        spec: NoiseSchedule,
        scheme: str,
        net: Mlp,
        *,
        stats: EndpointStats | None = None,
        eps: float | None = None,
        gamma: float | None = None,
    ):
        if scheme not in _SCHEMES:
            raise ValueError(f"unknown precondition scheme {scheme!r}")
        if scheme == "edm" and stats is None:
            raise ValueError("edm precondition requires endpoint statistics")
        self.spec = spec
        self.scheme = scheme
        self.net = net
        self.stats = stats
        self.eps = spec.default_eps if eps is None else float(eps)
        self.gamma = spec.default_gamma if gamma is None else float(gamma)
        if not 0 < self.eps < spec.T - self.gamma:
            raise ValueError("need 0 < eps < T - gamma")
        self.dim = net.widths[-1]
        time_dim = 1 if scheme == "edm" else 2 * _N_FREQS
        if net.widths[0] != 2 * self.dim + time_dim:
            raise ValueError(
                f"net input width {net.widths[0]} does not match "
                f"2*{self.dim} + {time_dim}"
            )

    @classmethod
    def create(
        cls,
        spec: NoiseSchedule,
        dim: int,
        scheme: str = "edm",
        *,
        hidden=(64, 64, 64),
        stats: EndpointStats | None = None,
        eps: float | None = None,
        gamma: float | None = None,
        seed: int = 0,
    ) -> "BridgeModel":
        time_dim = 1 if scheme == "edm" else 2 * _N_FREQS
        widths = [2 * dim + time_dim, *hidden, dim]
        net = Mlp.create(widths, stream(seed, "init"))
        return cls(spec, scheme, net, stats=stats, eps=eps, gamma=gamma)

    def copy(self) -> "BridgeModel":
        return BridgeModel(
            self.spec,
            self.scheme,
            Mlp(self.net.widths, self.net.params.copy()),
            stats=self.stats,
            eps=self.eps,
            gamma=self.gamma,
        )

    # -- plumbing ---------------------------------------------------------

    def _as_batch(self, x, t, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],)).astype(float)
        if x.shape != y.shape or x.shape[1] != self.dim:
            raise ValueError("state/endpoint shapes do not match the model dimension")
        slack = 1e-9 * self.spec.T
        if np.any(t < self.eps - slack) or np.any(t > self.spec.T - self.gamma + slack):
            raise ValueError("time outside the model horizon [eps, T - gamma]")
        return x, np.clip(t, self.eps, self.spec.T - self.gamma), y

    def _edm_coeffs(self, t_shift: np.ndarray):
        st = self.stats
        k = self.spec.coeffs(t_shift)
        a, b, c = np.asarray(k.a), np.asarray(k.b), np.asarray(k.c)
        radical = a**2 * st.varT + b**2 * st.var0 + 2 * a * b * st.cov0T + c**2
        c_in = 1.0 / np.sqrt(np.maximum(radical, _RADICAL_FLOOR))
        c_out = (
            np.sqrt(
                np.maximum(
                    a**2 * (st.varT * st.var0 - st.cov0T**2) + st.var0 * c**2, 0.0
                )
            )
            * c_in
        )
        c_skip = (b * st.var0 + a * st.cov0T) * c_in**2
        c_noise = 0.25 * np.log(np.maximum(t_shift, 1e-20))
        return c_in, c_out, c_skip, c_noise

    def _net_eval(self, x, t, y):
        """Shared forward pass: returns (raw_pred, cache, out_scale, skip_term)."""
        t_shift = t - self.eps
        if self.scheme == "edm":
            c_in, c_out, c_skip, c_noise = self._edm_coeffs(t_shift)
            inputs = np.concatenate([c_in[:, None] * x, c_noise[:, None], y], axis=1)
            raw, cache = self.net.forward(inputs)
            return raw, cache, c_out, c_skip[:, None] * x
        feats = _sinusoidal_features(t_shift / self.spec.T)
        inputs = np.concatenate([x, feats, y], axis=1)
        raw, cache = self.net.forward(inputs)
        if self.scheme == "i2sb":
            ev = self.spec.eval(t_shift)
            sig = np.asarray(ev.sigma)
            return raw, cache, -sig, x
        return raw, cache, np.ones(x.shape[0]), np.zeros_like(x)

    # -- heads ------------------------------------------------------------

    def data_pred(self, x, t, y) -> np.ndarray:
        """Estimate of the time-0 endpoint from the state at time t."""
        out, _ = self.data_pred_with_grad(x, t, y)
        return out

    def data_pred_with_grad(self, x, t, y):
        x, t, y = self._as_batch(x, t, y)
        raw, cache, scale, skip = self._net_eval(x, t, y)
        scale = np.broadcast_to(np.asarray(scale, dtype=float), (x.shape[0],))
        out = skip + scale[:, None] * raw
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite prediction")

        def pullback(dout: np.ndarray) -> np.ndarray:
            return self.net.backward(
                cache, np.asarray(dout, dtype=float) * scale[:, None]
            )

        return out, pullback

    def consistency(self, x, t, y) -> np.ndarray:
        """Estimate of the reverse-ODE solution at time eps."""
        out, _ = self.consistency_with_grad(x, t, y)
        return out

    def consistency_with_grad(self, x, t, y):
        if self.scheme != "universal":
            return self.data_pred_with_grad(x, t, y)
        x, t, y = self._as_batch(x, t, y)
        raw, cache, _, _ = self._net_eval(x, t, y)
        if np.all(t == t[0]):
            k = solver.ode_step_coeffs(self.spec, float(t[0]), self.eps)
            k1 = np.full(t.shape, k.k1)
            k2 = np.full(t.shape, k.k2)
            k3 = np.full(t.shape, k.k3)
        else:
            k = solver.ode_step_coeffs(self.spec, t, np.full(t.shape, self.eps))
            k1, k2, k3 = (np.asarray(v) for v in (k.k1, k.k2, k.k3))
        out = k1[:, None] * x + k2[:, None] * raw + k3[:, None] * y
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite prediction")

        def pullback(dout: np.ndarray) -> np.ndarray:
            return self.net.backward(cache, np.asarray(dout, dtype=float) * k2[:, None])

        return out, pullback


def save_checkpoint(path, model: BridgeModel, *, seed: int = 0, step: int = 0) -> None:
    """Serialize a model to JSON with a bit-exact parameter round trip."""
    doc = {
        "schema_version": CHECKPOINT_SCHEMA,
        "schedule": {"id": model.spec.id, "params": model.spec.params()},
        "precond": {
            "scheme": model.scheme,
            "stats": None
            if model.stats is None
            else {
                "var0": model.stats.var0,
                "varT": model.stats.varT,
                "cov0T": model.stats.cov0T,
            },
            "eps": model.eps,
            "gamma": model.gamma,
        },
        "widths": model.net.widths,
        "params_b64": base64.b64encode(
            np.ascontiguousarray(model.net.params, dtype="<f8").tobytes()
        ).decode("ascii"),
        "rng_seed": int(seed),
        "step": int(step),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path):
    """Load a model; returns (model, meta) with meta = {rng_seed, step}."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema: {doc.get('schema_version')}")
    spec = schedule_from_id(doc["schedule"]["id"], **doc["schedule"]["params"])
    params = np.frombuffer(
        base64.b64decode(doc["params_b64"]), dtype="<f8"
    ).astype(float)
    stats_doc = doc["precond"]["stats"]
    stats = None if stats_doc is None else EndpointStats(**stats_doc)
    model = BridgeModel(
        spec,
        doc["precond"]["scheme"],
        Mlp(doc["widths"], params),
        stats=stats,
        eps=doc["precond"]["eps"],
        gamma=doc["precond"]["gamma"],
    )
    return model, {"rng_seed": doc["rng_seed"], "step": doc["step"]}
