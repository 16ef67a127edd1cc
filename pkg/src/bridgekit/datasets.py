"""Synthetic coupled-endpoint datasets for desk-scale experiments.

Each dataset draws i.i.d. endpoint pairs (x, y): x is the generation target
at time 0 and y the conditioning endpoint at time T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bridge import GaussianCouplingOracle

__all__ = ["Gauss1d", "Mixture2dShifted", "Masked2d", "DATASET_IDS", "dataset_from_id"]


@dataclass(frozen=True)
class Gauss1d:
    """Scalar Gaussian data with a pinned or independently noised endpoint.

    x is independent of y, so the conditional law of x given y is exactly
    N(mu0, s0^2) and the matching closed-form oracle applies.
    """

    mu0: float = 0.0
    s0: float = 1.0
    y0: float = 0.0
    sy: float = 0.0

    dim = 1

    def sample(self, n: int, rng: np.random.Generator):
        x = self.mu0 + self.s0 * rng.standard_normal((n, 1))
        y = self.y0 + self.sy * rng.standard_normal((n, 1))
        return x, y

    def oracle(self) -> GaussianCouplingOracle:
        return GaussianCouplingOracle(mu0=self.mu0, s0=self.s0, dim=1)


_MODES = np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])


@dataclass(frozen=True)
class Mixture2dShifted:
    """Four-mode planar mixture whose endpoint is a translated, blurred copy.

    y = x + shift + y_sigma * eta keeps the pair coupled while leaving the
    mode identity ambiguous, so the conditional law of x given y is
    multimodal and few-step reverse integration visibly blurs it.
    """

    shift: tuple = (2.5, 0.0)
    mode_sigma: float = 0.2
    y_sigma: float = 0.8

    dim = 2

    def sample(self, n: int, rng: np.random.Generator):
        x = _MODES[rng.integers(0, len(_MODES), size=n)]
        x = x + self.mode_sigma * rng.standard_normal((n, 2))
        y = x + np.asarray(self.shift) + self.y_sigma * rng.standard_normal((n, 2))
        return x, y


@dataclass(frozen=True)
class Masked2d:
    """Coordinate-masked mixture: the endpoint keeps only the first coordinate."""

    mode_sigma: float = 0.2

    dim = 2

    def sample(self, n: int, rng: np.random.Generator):
        x = _MODES[rng.integers(0, len(_MODES), size=n)]
        x = x + self.mode_sigma * rng.standard_normal((n, 2))
        y = np.column_stack([x[:, 0], np.zeros(n)])
        return x, y


DATASET_IDS = {
    "gauss1d": Gauss1d,
    "mixture2d": Mixture2dShifted,
    "masked2d": Masked2d,
}


def dataset_from_id(dataset_id: str, **params):
    try:
        cls = DATASET_IDS[dataset_id]
    except KeyError:
        raise ValueError(
            f"unknown dataset id {dataset_id!r}; known: {sorted(DATASET_IDS)}"
        ) from None
    if "shift" in params:
        params["shift"] = tuple(params["shift"])
    return cls(**params)
