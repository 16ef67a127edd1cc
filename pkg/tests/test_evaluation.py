"""Metrics and verification experiments."""

import numpy as np
import pytest

from bridgekit.bridge import GaussianCouplingOracle, oracle_data_pred
from bridgekit.datasets import Gauss1d
from bridgekit.evaluation import (
    MetricReport,
    convergence_order,
    energy_distance,
    marginal_preservation_test,
    prop3_gap_ladder,
    sliced_wasserstein2,
)
from bridgekit.model import BridgeModel, EndpointStats
from bridgekit.rng import stream
from bridgekit.schedule import BrownianBridge, DdbmVe
from bridgekit.train import cbd_loss_terms, cbt_loss_terms

BROWNIAN = BrownianBridge()
ORACLE = GaussianCouplingOracle(mu0=0.0, s0=1.0)


def oracle_pred(x, t, y):
    return oracle_data_pred(ORACLE, BROWNIAN, t, x, y)


class TestSlicedWasserstein:
    def test_identical_clouds(self):
        cloud = stream(0, 0).standard_normal((500, 3))
        assert sliced_wasserstein2(cloud, cloud.copy(), 64, seed=0) == 0.0

    def test_shifted_gaussians_recover_mean_gap(self):
        rng = stream(1, 0)
        m = 0.7
        a = rng.standard_normal((10_000, 1))
        b = m + rng.standard_normal((10_000, 1))
        value = sliced_wasserstein2(a, b, 64, seed=1)
        assert value == pytest.approx(m, rel=0.05)

    def test_rotation_invariance(self):
        rng = stream(2, 0)
        a = rng.standard_normal((2000, 2))
        b = rng.standard_normal((2000, 2)) * 1.3 + np.array([0.5, -0.2])
        theta = 0.77
        q = np.array(
            [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
        )
        v0 = sliced_wasserstein2(a, b, 1024, seed=2)
        v1 = sliced_wasserstein2(a @ q, b @ q, 1024, seed=2)
        assert abs(v0 - v1) / v0 < 0.02

    def test_unequal_sizes_align_on_quantiles(self):
        rng = stream(3, 0)
        a = rng.standard_normal((500, 1))
        b = rng.standard_normal((700, 1))
        assert sliced_wasserstein2(a, b, 32, seed=3) < 0.2

    def test_empty_cloud_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            sliced_wasserstein2(np.zeros((0, 2)), np.zeros((5, 2)))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dimensions"):
            sliced_wasserstein2(np.zeros((5, 2)), np.zeros((5, 3)))


class TestEnergyDistance:
    def test_identical_clouds(self):
        cloud = stream(4, 0).standard_normal((400, 2))
        assert energy_distance(cloud, cloud.copy()) == pytest.approx(0.0, abs=1e-12)

    def test_separated_clouds_positive(self):
        rng = stream(4, 1)
        a = rng.standard_normal((400, 2))
        b = rng.standard_normal((400, 2)) + 3.0
        assert energy_distance(a, b) > 1.0


class TestConvergenceOrder:
    @staticmethod
    def _start(t_hi, n=8):
        rng = stream(5, 0)
        y = np.full((n, 1), 0.8)
        k = BROWNIAN.coeffs(t_hi)
        x = k.a * y + k.b * rng.standard_normal((n, 1)) + k.c * rng.standard_normal((n, 1))
        return x, y

    def test_ei_is_first_order(self):
        t_hi, t_lo = 1.0 - BROWNIAN.default_gamma, BROWNIAN.default_eps
        x, y = self._start(t_hi)
        res = convergence_order(
            BROWNIAN, oracle_pred, x, y, t_hi, t_lo, [8, 16, 32, 64, 128]
        )
        assert 0.8 <= res.slope <= 1.2
        assert not res.error_floor

    def test_euler_is_first_order_with_larger_constant(self):
        t_hi, t_lo = 0.8, 0.1
        x, y = self._start(t_hi)
        euler = convergence_order(
            BROWNIAN, oracle_pred, x, y, t_hi, t_lo, [8, 16, 32, 64, 128],
            method="euler",
        )
        ei = convergence_order(
            BROWNIAN, oracle_pred, x, y, t_hi, t_lo, [8, 16, 32, 64, 128]
        )
        assert 0.8 <= euler.slope <= 1.2
        assert all(e <= u for e, u in zip(ei.errors, euler.errors))

    def test_constant_prediction_hits_error_floor(self):
        # the integrator is exact for a constant prediction, so every step
        # count reproduces the reference and the fit is flagged
        t_hi, t_lo = 0.9, 0.1
        x, y = self._start(t_hi)
        res = convergence_order(
            BROWNIAN, lambda xx, t, yy: np.zeros_like(xx), x, y, t_hi, t_lo, [8, 16]
        )
        assert res.error_floor

    def test_empty_step_counts_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            convergence_order(
                BROWNIAN, oracle_pred, np.zeros((1, 1)), np.zeros((1, 1)), 0.9, 0.1, []
            )


class TestProp3GapLadder:
    def test_gap_rate_strictly_decreasing(self):
        model = BridgeModel.create(
            BROWNIAN, 1, "edm", hidden=(16, 16),
            stats=EndpointStats(1.0, 1.0, 0.0), seed=1,
        )
        model.net.params += 0.4 * stream(1, "j").standard_normal(model.net.n_params)
        rows = prop3_gap_ladder(
            model, Gauss1d(), ORACLE, [0.2, 0.1, 0.05, 0.025], 10_000, seed=2
        )
        rates = [r["gap_per_dt"] for r in rows]
        assert all(a > b for a, b in zip(rates, rates[1:]))

    def test_perfect_predictor_gives_zero_gap(self):
        # constant data with a constant-output model: both objectives vanish
        model = BridgeModel.create(
            BROWNIAN, 1, "universal", hidden=(8,), seed=3
        )
        model.net.params[:] = 0.0
        model.net.params[-1] = 0.7
        dataset = Gauss1d(mu0=0.7, s0=1e-9, y0=2.0, sy=0.3)
        oracle = GaussianCouplingOracle(mu0=0.7, s0=1e-9)
        rows = prop3_gap_ladder(model, dataset, oracle, [0.2, 0.05], 256, seed=4)
        for row in rows:
            assert row["cbd"] < 1e-12
            assert row["cbt"] < 1e-12
            assert row["gap"] < 1e-12

    def test_extreme_gap_stays_bounded(self):
        # pushing r all the way down to eps keeps both losses finite
        model = BridgeModel.create(
            BROWNIAN, 1, "edm", hidden=(8,),
            stats=EndpointStats(1.0, 1.0, 0.0), seed=5,
        )
        rng = stream(5, 1)
        n = 64
        x, y = Gauss1d().sample(n, rng)
        t = np.full(n, model.eps + 0.01)
        r = np.full(n, model.eps)
        z = rng.standard_normal((n, 1))
        l_cbd, _ = cbd_loss_terms(
            model, oracle_pred, x, y, t, r, z, want_grad=False
        )
        l_cbt, _ = cbt_loss_terms(model, x, y, t, r, z, want_grad=False)
        assert np.isfinite(l_cbd) and np.isfinite(l_cbt)


class TestMarginalPreservation:
    def test_hybrid_passes(self):
        rows = marginal_preservation_test(
            BROWNIAN, 0.1, [0.8, 0.5, 0.2], 100_000, 0.4, -0.6, seed=3
        )
        assert all(abs(r["z_mean"]) < 4 and abs(r["z_var"]) < 4 for r in rows)

    def test_no_skip_fails_variance(self):
        rows = marginal_preservation_test(
            BROWNIAN, 0.1, [0.8, 0.5, 0.2], 100_000, 0.4, -0.6, seed=3, skip=False
        )
        assert all(abs(r["z_var"]) > 4 for r in rows)

    def test_pure_stochastic_run_passes(self):
        rows = marginal_preservation_test(
            BROWNIAN, 1.0, [0.8, 0.5, 0.2], 100_000, 0.4, -0.6, seed=4
        )
        assert all(abs(r["z_mean"]) < 4 and abs(r["z_var"]) < 4 for r in rows)

    def test_requires_unit_brownian(self):
        with pytest.raises(ValueError, match="unit Brownian"):
            marginal_preservation_test(DdbmVe(), 0.1, [0.5], 100, 0.0, 0.0, seed=0)


class TestMetricReport:
    def test_row_serialization(self):
        report = MetricReport("sliced-w2", 0.5, 1000, n_projections=256, seed=3)
        assert report.as_row() == {
            "metric": "sliced-w2",
            "value": 0.5,
            "n_samples": 1000,
            "n_projections": 256,
            "seed": 3,
        }
