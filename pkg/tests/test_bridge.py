"""Bridge distributions: point sampling, forward simulation, score transforms."""

import numpy as np
import pytest

from bridgekit.bridge import (
    Coupling,
    GaussianCouplingOracle,
    data_pred_from_score,
    oracle_data_pred,
    oracle_posterior_score,
    sample_bridge_point,
    score_from_data_pred,
    simulate_forward_sde,
)
from bridgekit.rng import stream
from bridgekit.schedule import BrownianBridge, DdbmVe, DdbmVp

BROWNIAN = BrownianBridge()


class TestSampleBridgePoint:
    def test_origin_returns_data_endpoint(self):
        out = sample_bridge_point(BROWNIAN, 0.0, x=[2.0], y=[5.0], z=[0.7])
        np.testing.assert_array_equal(out, [2.0])

    def test_midpoint_by_hand(self):
        out = sample_bridge_point(BROWNIAN, 0.5, x=[0.0], y=[1.0], z=[1.0])
        np.testing.assert_allclose(out, [1.0], atol=1e-15)

    def test_ve_midpoint_by_hand(self):
        # a=0.25, b=0.75 at t=40 on the T=80 exploding schedule
        out = sample_bridge_point(DdbmVe(T=80.0), 40.0, x=[1.0], y=[-1.0], z=[0.0])
        np.testing.assert_allclose(out, [0.5], rtol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            sample_bridge_point(BROWNIAN, 0.5, x=[0.0, 1.0], y=[1.0], z=[1.0])

    def test_batched_times(self):
        n = 8
        rng = stream(0, 1)
        x = rng.standard_normal((n, 2))
        y = rng.standard_normal((n, 2))
        z = rng.standard_normal((n, 2))
        ts = rng.uniform(0.1, 0.9, size=n)
        batched = sample_bridge_point(BROWNIAN, ts, x, y, z)
        rows = [
            sample_bridge_point(BROWNIAN, ts[i], x[i], y[i], z[i]) for i in range(n)
        ]
        np.testing.assert_allclose(batched, np.stack(rows), rtol=1e-15)


def moments_match(samples, mean, var, z_crit=3.0):
    n = samples.size
    se_mean = np.sqrt(var / n)
    z_mean = (samples.mean() - mean) / se_mean
    se_var = var * np.sqrt(2.0 / (n - 1))
    z_var = (samples.var(ddof=1) - var) / se_var
    return abs(z_mean) < z_crit and abs(z_var) < z_crit


class TestForwardSde:
    def test_too_few_steps(self):
        with pytest.raises(ValueError, match="at least 2"):
            simulate_forward_sde(BROWNIAN, Coupling([0.0], [0.0]), 1, stream(0, 2))

    def test_brownian_midpoint_moments(self):
        # 10^4 independent scalar paths as one componentwise simulation
        n = 10_000
        coupling = Coupling(np.zeros(n), np.zeros(n))
        times, states = simulate_forward_sde(
            BROWNIAN, coupling, 1000, stream(11, 3), record_times=[0.5]
        )
        assert times[0] == pytest.approx(0.5, abs=1e-3)
        t = times[0]
        assert moments_match(states[0], mean=0.0, var=t * (1 - t))

    def test_vp_midpoint_moments(self):
        n = 10_000
        spec = DdbmVp(beta0=0.1)
        coupling = Coupling(np.ones(n), np.ones(n))
        times, states = simulate_forward_sde(
            spec, coupling, 4000, stream(12, 4), record_times=[0.5]
        )
        t = times[0]
        k = spec.coeffs(t)
        assert moments_match(states[0], mean=k.a + k.b, var=k.c**2)

    def test_full_path_shape(self):
        times, states = simulate_forward_sde(
            BROWNIAN, Coupling([0.0], [1.0]), 10, stream(0, 5)
        )
        assert times.shape == (11,)
        assert states.shape == (11, 1)
        assert times[-1] == pytest.approx(1.0 - 1e-3)


class TestScoreTransforms:
    def test_hand_value(self):
        # t=0.5 on the unit Brownian bridge: a=b=1/2, c^2=1/4
        s = score_from_data_pred(BROWNIAN, 0.5, x_t=[0.6], y=[1.0], x_pred=[0.0])
        np.testing.assert_allclose(s, [-0.4], rtol=1e-12)

    def test_zero_at_conditional_mean(self):
        x, y = np.array([0.3]), np.array([1.2])
        k = BROWNIAN.coeffs(0.5)
        x_t = k.a * y + k.b * x
        s = score_from_data_pred(BROWNIAN, 0.5, x_t, y, x_pred=x)
        np.testing.assert_allclose(s, [0.0], atol=1e-15)

    def test_round_trip(self):
        rng = stream(2, 6)
        for spec in (BROWNIAN, DdbmVp(), DdbmVe(T=80.0)):
            t = rng.uniform(0.1, 0.9) * spec.T
            x_t = rng.standard_normal(5)
            y = rng.standard_normal(5)
            v = rng.standard_normal(5)
            back = data_pred_from_score(
                spec, t, x_t, y, score_from_data_pred(spec, t, x_t, y, v)
            )
            np.testing.assert_allclose(back, v, atol=1e-9)

    def test_pinned_endpoint_rejected(self):
        with pytest.raises(ValueError, match="pinned"):
            score_from_data_pred(BROWNIAN, 0.0, [0.1], [0.2], [0.0])


class TestCouplingOracle:
    def test_zero_at_marginal_mean(self):
        oracle = GaussianCouplingOracle(mu0=0.3, s0=0.8)
        y = np.array([1.0])
        k = BROWNIAN.coeffs(0.4)
        x_t = k.a * y + k.b * oracle.mu0
        s = oracle_posterior_score(oracle, BROWNIAN, 0.4, x_t, y)
        np.testing.assert_allclose(s, [0.0], atol=1e-15)

    def test_hand_value(self):
        # variance 0.25*1 + 0.25 = 0.5, score = -(1-0)/0.5
        oracle = GaussianCouplingOracle(mu0=0.0, s0=1.0)
        s = oracle_posterior_score(oracle, BROWNIAN, 0.5, x_t=[1.0], y=[0.0])
        np.testing.assert_allclose(s, [-2.0], rtol=1e-14)

    def test_matches_log_density_derivative(self):
        # independent oracle: central differences of the closed-form log pdf
        oracle = GaussianCouplingOracle(mu0=0.2, s0=0.7)
        spec = BROWNIAN
        t, y = 0.35, np.array([0.9])
        k = spec.coeffs(t)
        var = k.b**2 * oracle.s0**2 + k.c**2
        mean = k.a * y + k.b * oracle.mu0

        def logpdf(v):
            return -0.5 * (v - mean) ** 2 / var

        h = 1e-6
        for x_t in (np.array([0.1]), np.array([0.8]), np.array([1.4])):
            fd = (logpdf(x_t + h) - logpdf(x_t - h)) / (2 * h)
            s = oracle_posterior_score(oracle, spec, t, x_t, y)
            np.testing.assert_allclose(s, fd, atol=1e-6)

    def test_degenerate_prior_recovers_transform(self):
        # s0 -> 0 collapses the posterior onto mu0
        oracle = GaussianCouplingOracle(mu0=0.4, s0=1e-9)
        x_t, y = np.array([0.7]), np.array([1.1])
        s = oracle_posterior_score(oracle, BROWNIAN, 0.5, x_t, y)
        ref = score_from_data_pred(BROWNIAN, 0.5, x_t, y, x_pred=[oracle.mu0])
        np.testing.assert_allclose(s, ref, rtol=1e-6)

    def test_data_pred_is_posterior_mean(self):
        # Gaussian conditioning: E[x0 | x_t, y] has a closed form
        oracle = GaussianCouplingOracle(mu0=-0.3, s0=1.4)
        spec = BROWNIAN
        t, y = 0.6, np.array([0.5])
        x_t = np.array([0.9])
        k = spec.coeffs(t)
        u = x_t - k.a * y
        expect = (u * k.b * oracle.s0**2 + k.c**2 * oracle.mu0) / (
            k.b**2 * oracle.s0**2 + k.c**2
        )
        got = oracle_data_pred(oracle, spec, t, x_t, y)
        np.testing.assert_allclose(got, expect, rtol=1e-12)

    def test_invalid_s0(self):
        with pytest.raises(ValueError):
            GaussianCouplingOracle(mu0=0.0, s0=0.0)
