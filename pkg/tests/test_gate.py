from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offgraph_vc.gate import (
    GateConfig,
    GateData,
    GateInput,
    GateModel,
    _forward,
    evaluate_gate,
    gate_forward,
    gate_weights_for_manager,
    loss_and_grads,
    planted_gate_data,
    random_weights,
    train_gate,
    write_gate_log,
)

from gradcheck import max_relative_error, numeric_grads


def small_model(attention=False, seed=0, scorer_scale=0.5):
    model = GateModel.init(rationale_dim=5, attr_dim=4, hidden=6, seed=seed, attention=attention, key_dim=3)
    rng = np.random.default_rng(seed + 100)
    # move the zero-initialized layers off zero so every path carries gradient
    model.params["g_W2"] = rng.normal(scale=scorer_scale, size=model.params["g_W2"].shape)
    if attention:
        model.params["W_Q"] = rng.normal(scale=scorer_scale, size=model.params["W_Q"].shape)
    return model


def random_batch(n=5, seed=0):
    rng = np.random.default_rng(seed)
    r = rng.normal(size=(n, 3, 5))
    a = np.zeros((n, 4))
    a[np.arange(n), rng.integers(4, size=n)] = 1
    y = (rng.random(n) < 0.5).astype(float)
    return r, a, y


def smooth_batch(model, attention, seed, margin=1e-2):
    """A random batch whose rectifier inputs all sit at least ``margin`` from
    the kink, where central differences are well defined."""
    for s in range(seed * 1000, seed * 1000 + 1000):
        r, a, y = random_batch(5, s)
        c = _forward(model.params, r, a, attention)
        if min(np.abs(c["z"]).min(), np.abs(c["zh"]).min()) > margin:
            return r, a, y
    raise AssertionError("no smooth batch found")


class TestForward:
    def test_zero_init_gives_equal_weights(self):
        model = GateModel.init(rationale_dim=8, attr_dim=4, hidden=16)
        w = gate_weights_for_manager(GateInput(np.random.default_rng(0).normal(size=(3, 8)), np.eye(4)[1]), model)
        np.testing.assert_allclose(w, [1 / 3] * 3, atol=1e-12)

    def test_zero_init_attention_still_equal(self):
        model = GateModel.init(rationale_dim=8, attr_dim=4, hidden=16, attention=True, key_dim=4)
        w = gate_forward(GateInput(np.ones((3, 8)), np.eye(4)[0]), model).weights
        np.testing.assert_allclose(w, [1 / 3] * 3, atol=1e-12)

    def test_fused_is_weighted_sum(self):
        model = small_model()
        r, a, _ = random_batch(1)
        out = gate_forward(GateInput(r[0], a[0]), model)
        np.testing.assert_allclose(out.fused, out.weights @ r[0])
        assert 0.0 < out.p < 1.0

    def test_bad_shapes(self):
        with pytest.raises(ValueError):
            GateInput(np.ones((2, 5)), np.ones(4))
        with pytest.raises(ValueError):
            GateData(np.ones((4, 3, 5)), np.ones((3, 4)), np.ones(4))

    @settings(max_examples=30, deadline=None)
    # positivity is exact only while score gaps stay inside exp's float64 range
    @given(st.integers(0, 10_000), st.floats(0.1, 5))
    def test_weights_are_distribution(self, seed, scale):
        model = small_model(seed=seed % 50, scorer_scale=scale)
        r, a, _ = random_batch(4, seed)
        w, _, _ = model.forward_batch(r * scale, a)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(w > 0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.permutations([0, 1, 2]))
    def test_permutation_equivariance(self, seed, perm):
        model = small_model(seed=seed % 20)
        r, a, _ = random_batch(3, seed)
        w, _, p = model.forward_batch(r, a)
        w2, _, p2 = model.forward_batch(r[:, perm, :], a)
        np.testing.assert_allclose(w2, w[:, perm], atol=1e-12)
        np.testing.assert_allclose(p2, p, atol=1e-12)


class TestGradients:
    @pytest.mark.parametrize("attention", [False, True])
    @pytest.mark.parametrize("seed", [0, 1])
    def test_matches_finite_differences(self, attention, seed):
        model = small_model(attention, seed)
        r, a, y = smooth_batch(model, attention, seed)
        _, analytic = loss_and_grads(model.params, r, a, y, attention)

        def loss(params):
            return loss_and_grads(params, r, a, y, attention)[0]

        assert set(analytic) == set(model.params)
        assert max_relative_error(analytic, numeric_grads(loss, model.params)) <= 1e-4

    def test_fixed_weights_touch_only_head(self):
        model = small_model()
        r, a, y = random_batch(5)
        _, g = loss_and_grads(model.params, r, a, y, weights=random_weights(5))
        assert set(g) == {"h_W1", "h_b1", "h_W2", "h_b2"}


class TestTraining:
    def test_recovers_informative_view(self, tmp_path):
        data = planted_gate_data(900, seed=3)
        train, val, test = data.subset(slice(0, 600)), data.subset(slice(600, 750)), data.subset(slice(750, 900))
        res = train_gate(train, GateConfig(epochs=15, batch_size=32, seed=3), val)
        ev = evaluate_gate(res.model, test)
        assert ev["f1"] > 0.9
        assert ev["mean_weights"][2] > 0.5
        assert 1 <= res.best_epoch <= 15
        write_gate_log(tmp_path / "g.csv", res.log)
        assert (tmp_path / "g.csv").read_text().splitlines()[0] == "epoch,loss,val_precision,val_f1"

    def test_single_class_rejected(self):
        data = planted_gate_data(50)
        data.y[:] = 0
        with pytest.raises(ValueError):
            train_gate(data, GateConfig(epochs=1))

    def test_checkpoint_round_trip(self, tmp_path):
        model = small_model(attention=True)
        model.save(tmp_path / "gate.json")
        again = GateModel.load(tmp_path / "gate.json")
        r, a, _ = random_batch(3)
        for x, z in zip(model.forward_batch(r, a), again.forward_batch(r, a)):
            np.testing.assert_array_equal(x, z)

    def test_deterministic(self):
        data = planted_gate_data(120, seed=1)
        cfg = GateConfig(epochs=2, batch_size=32, hidden=8)
        a = train_gate(data, cfg).model
        b = train_gate(data, cfg).model
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])


def test_random_weights_on_simplex():
    w = random_weights(100, seed=2)
    np.testing.assert_allclose(w.sum(axis=1), 1.0)
    assert np.all(w >= 0)
