"""Approximator and preconditions: boundaries, gradients, stats, checkpoints."""

import numpy as np
import pytest

from bridgekit.model import (
    BridgeModel,
    EndpointStats,
    Mlp,
    estimate_endpoint_stats,
    load_checkpoint,
    save_checkpoint,
)
from bridgekit.rng import stream
from bridgekit.schedule import BrownianBridge

BROWNIAN = BrownianBridge()
STATS = EndpointStats(var0=1.0, varT=1.0, cov0T=0.0)


def make_model(scheme, dim=1, hidden=(16, 16), seed=0):
    return BridgeModel.create(
        BROWNIAN, dim, scheme, hidden=hidden, stats=STATS, seed=seed
    )


def fd_param_grad(model, head, x, t, y, probe, h=1e-6):
    """Central-difference gradient of probe . head(x, t, y) in the parameters."""
    params = model.net.params
    grad = np.zeros_like(params)
    for j in range(params.size):
        orig = params[j]
        params[j] = orig + h
        hi = float(np.sum(probe * getattr(model, head)(x, t, y)))
        params[j] = orig - h
        lo = float(np.sum(probe * getattr(model, head)(x, t, y)))
        params[j] = orig
        grad[j] = (hi - lo) / (2 * h)
    return grad


class TestMlp:
    def test_forward_shapes(self):
        net = Mlp.create([3, 8, 2], stream(0, 0))
        out, (acts, pre) = net.forward(np.zeros((5, 3)))
        assert out.shape == (5, 2)
        assert len(acts) == 3
        assert len(pre) == 1

    def test_param_count(self):
        net = Mlp.create([3, 8, 2], stream(0, 0))
        assert net.n_params == 3 * 8 + 8 + 8 * 2 + 2

    def test_gradient_matches_finite_differences(self):
        net = Mlp.create([4, 8, 3], stream(1, 0))
        rng = stream(1, 1)
        x = rng.standard_normal((6, 4))
        probe = rng.standard_normal((6, 3))
        _, cache = net.forward(x)
        grad = net.backward(cache, probe)

        fd = np.zeros_like(net.params)
        h = 1e-6
        for j in range(net.params.size):
            orig = net.params[j]
            net.params[j] = orig + h
            hi = float(np.sum(probe * net.forward(x)[0]))
            net.params[j] = orig - h
            lo = float(np.sum(probe * net.forward(x)[0]))
            net.params[j] = orig
            fd[j] = (hi - lo) / (2 * h)
        denom = np.maximum(np.abs(fd), 1e-8)
        assert np.max(np.abs(grad - fd) / denom) < 1e-4

    def test_bad_param_vector(self):
        with pytest.raises(ValueError, match="parameters"):
            Mlp([3, 8, 2], np.zeros(7))


class TestBoundaryCondition:
    @pytest.mark.parametrize("scheme", ["edm", "i2sb", "universal"])
    def test_untrained_identity_at_eps(self, scheme):
        model = make_model(scheme, dim=2)
        rng = stream(2, 0)
        x = rng.standard_normal((8, 2))
        y = rng.standard_normal((8, 2))
        out = model.consistency(x, model.eps, y)
        np.testing.assert_allclose(out, x, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("scheme", ["edm", "i2sb", "universal"])
    def test_trained_identity_at_eps(self, scheme):
        # boundary is structural, so arbitrary parameter values keep it
        model = make_model(scheme, dim=2)
        model.net.params += stream(2, 1).standard_normal(model.net.n_params)
        rng = stream(2, 2)
        x = rng.standard_normal((8, 2))
        y = rng.standard_normal((8, 2))
        out = model.consistency(x, model.eps, y)
        np.testing.assert_allclose(out, x, rtol=1e-12, atol=1e-12)


class TestEdmPrecondition:
    def test_input_scale_by_hand(self):
        # unit endpoint variances, zero covariance, shifted time 0.5 on the
        # unit Brownian bridge: a=b=1/2, bridge variance 1/4, so the radical
        # is 0.25 + 0.25 + 0.25 and the input scale is 2/sqrt(3)
        model = make_model("edm")
        c_in, c_out, c_skip, _ = model._edm_coeffs(np.array([0.5]))
        assert c_in[0] == pytest.approx(2.0 / np.sqrt(3.0), rel=1e-12)
        assert c_skip[0] == pytest.approx(0.5 / 0.75, rel=1e-12)
        assert c_out[0] == pytest.approx(np.sqrt(0.25 + 0.25) / np.sqrt(0.75), rel=1e-12)

    def test_prediction_at_eps_returns_state(self):
        model = make_model("edm")
        x, y = np.array([[0.4]]), np.array([[1.0]])
        np.testing.assert_allclose(
            model.data_pred(x, model.eps, y), x, rtol=1e-12
        )

    def test_missing_stats_rejected(self):
        with pytest.raises(ValueError, match="statistics"):
            BridgeModel.create(BROWNIAN, 1, "edm", stats=None)


class TestI2sbPrecondition:
    def test_zero_network_is_identity_everywhere(self):
        model = make_model("i2sb")
        model.net.params[:] = 0.0
        rng = stream(3, 0)
        x = rng.standard_normal((5, 1))
        y = rng.standard_normal((5, 1))
        for t in (model.eps, 0.3, 0.7, 1.0 - model.gamma):
            np.testing.assert_allclose(model.data_pred(x, t, y), x, rtol=1e-12)


class TestUniversalPrecondition:
    def test_perfect_inner_predictor_transports_bridge_points(self):
        # replace the network by the exact data endpoint: the wrapped map must
        # send any on-bridge point at t to the on-bridge point at eps with the
        # same underlying noise
        model = make_model("universal", dim=1)
        rng = stream(4, 0)
        x, y, z = rng.standard_normal((3, 6, 1))
        t = 0.62
        k_t = BROWNIAN.coeffs(t)
        k_e = BROWNIAN.coeffs(model.eps)
        x_t = k_t.a * y + k_t.b * x + k_t.c * z

        from bridgekit.solver import ei_ode_step

        out = ei_ode_step(BROWNIAN, t, model.eps, x_t, y, x_pred=x)
        np.testing.assert_allclose(
            out, k_e.a * y + k_e.b * x + k_e.c * z, rtol=1e-9, atol=1e-12
        )


class TestHeadGradients:
    @pytest.mark.parametrize("scheme", ["edm", "i2sb", "universal"])
    @pytest.mark.parametrize("head", ["data_pred", "consistency"])
    def test_matches_finite_differences(self, scheme, head):
        model = make_model(scheme, dim=1, hidden=(8,), seed=5)
        rng = stream(5, 1)
        x = rng.standard_normal((4, 1))
        y = rng.standard_normal((4, 1))
        probe = rng.standard_normal((4, 1))
        t = 0.41
        with_grad = getattr(model, head + "_with_grad")
        _, pullback = with_grad(x, t, y)
        grad = pullback(probe)
        fd = fd_param_grad(model, head, x, t, y, probe)
        denom = np.maximum(np.abs(fd), 1e-8)
        assert np.max(np.abs(grad - fd) / denom) < 1e-4

    def test_data_pred_lipschitz_on_compacts(self):
        model = make_model("edm", dim=1, hidden=(32, 32), seed=6)
        model.net.params += 0.5 * stream(6, 0).standard_normal(model.net.n_params)
        xs = np.linspace(-3.0, 3.0, 301)[:, None]
        y = np.full_like(xs, 0.7)
        out = model.data_pred(xs, 0.5, y)
        slopes = np.abs(np.diff(out[:, 0]) / np.diff(xs[:, 0]))
        assert np.max(slopes) < 1e3


class TestEndpointStats:
    def test_two_point_dataset_by_hand(self):
        st = estimate_endpoint_stats(np.array([[0.0], [2.0]]), np.array([[0.0], [2.0]]))
        assert st.var0 == pytest.approx(2.0)
        assert st.varT == pytest.approx(2.0)
        assert st.cov0T == pytest.approx(2.0)

    def test_independent_endpoints_decorrelate(self):
        rng = stream(7, 0)
        measured = []
        for n in (100, 100_000):
            xs = rng.standard_normal((n, 1))
            ys = rng.standard_normal((n, 1))
            measured.append(abs(estimate_endpoint_stats(xs, ys).cov0T))
        assert measured[1] < 0.02

    def test_single_sample_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            estimate_endpoint_stats(np.array([[1.0]]), np.array([[1.0]]))

    def test_degenerate_dataset_flagged(self):
        with pytest.warns(RuntimeWarning, match="degenerate"):
            estimate_endpoint_stats(np.ones((4, 1)), np.ones((4, 1)))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        model = make_model("edm", dim=2, hidden=(8, 8), seed=9)
        model.net.params += stream(9, 1).standard_normal(model.net.n_params)
        path = tmp_path / "checkpoint.json"
        save_checkpoint(path, model, seed=123, step=42)
        loaded, meta = load_checkpoint(path)
        assert meta == {"rng_seed": 123, "step": 42}
        np.testing.assert_array_equal(loaded.net.params, model.net.params)
        assert loaded.net.widths == model.net.widths
        assert loaded.scheme == model.scheme
        assert loaded.stats == model.stats
        assert (loaded.eps, loaded.gamma) == (model.eps, model.gamma)
        assert loaded.spec.id == "brownian"

        # saving the loaded model reproduces the file byte-for-byte
        path2 = tmp_path / "again.json"
        save_checkpoint(path2, loaded, seed=123, step=42)
        assert path.read_bytes() == path2.read_bytes()

    def test_schema_version_checked(self, tmp_path):
        model = make_model("i2sb")
        path = tmp_path / "checkpoint.json"
        save_checkpoint(path, model)
        doc = path.read_text().replace('"schema_version": 1', '"schema_version": 99')
        path.write_text(doc)
        with pytest.raises(ValueError, match="schema"):
            load_checkpoint(path)
