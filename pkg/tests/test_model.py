import time
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detectornet.autograd import Tensor
from detectornet.errors import ConfigurationError, DimensionError
from detectornet.graph import DetectorGraph
from detectornet.model import (ABLATIONS, DetectorNet, ModelConfig, PredictorParams,
                               apply_ablation, input_projection, masked_mae_loss, parameter_count,
                               predictor_head)
from detectornet.optim import AdamState, adam_step
from detectornet.training import gradient_check_model

from test_spatial import oracle_dsgcn
from test_temporal import oracle_mtam


def ring_graph(n, rng=None):
    adj = np.zeros((n, n))
    for i in range(n):
        adj[i, (i + 1) % n] = 1.0 if rng is None else rng.uniform(0.2, 1.0)
    return DetectorGraph.from_adjacency(adj)


TOY = dict(n_nodes=3, input_len=3, output_len=3, input_dim=2, hidden=4, layers=1,
           diffusion_order=2, embed_dim=3, predictor_mid=5, dropout=0.0)


class TestInputProjection:
    def test_identity(self, rng):
        x = rng.standard_normal((2, 3, 4))
        np.testing.assert_array_equal(input_projection(x, Tensor(np.eye(4)), Tensor(np.zeros(4))).data, x)

    def test_zero_weights_give_bias(self, rng):
        out = input_projection(rng.standard_normal((2, 3, 2)), Tensor(np.zeros((2, 5))),
                               Tensor(np.arange(5.0))).data
        np.testing.assert_array_equal(out, np.broadcast_to(np.arange(5.0), out.shape))

    def test_matmul_oracle(self, rng):
        x, w, b = rng.standard_normal((3, 4, 2)), rng.standard_normal((2, 6)), rng.standard_normal(6)
        expect = np.einsum("npd,dc->npc", x, w) + b
        np.testing.assert_allclose(input_projection(x, Tensor(w), Tensor(b)).data, expect, atol=1e-12)


class TestPredictorHead:
    def head(self, rng, c_st, mid, c_p, zero=False):
        make = (lambda s: np.zeros(s)) if zero else rng.standard_normal
        return PredictorParams(*(Tensor(make(s)) for s in ((c_st, mid), (mid,), (mid, c_p), (c_p,))))

    def test_p_equals_q_keeps_channels(self, rng):
        head = self.head(rng, 4, 3, 1)
        assert predictor_head(rng.standard_normal((2, 6, 4)), head, 6).shape == (2, 6, 1)

    def test_zero_weights_give_final_bias(self, rng):
        head = self.head(rng, 8, 3, 2, zero=True)
        head.b2.data[...] = [1.5, -2.0]
        out = predictor_head(rng.standard_normal((2, 4, 4)), head, 2).data
        np.testing.assert_array_equal(out, np.broadcast_to([1.5, -2.0], out.shape))

    def test_reshape_two_affine_oracle(self, rng):
        x = rng.standard_normal((3, 6, 4))  # N, P, C with Q = 3 -> C_ST = 8
        head = self.head(rng, 8, 5, 2)
        got = predictor_head(x, head, 3).data
        for i in range(3):
            flat = x[i].reshape(-1)
            for q in range(3):
                st_in = flat[q * 8:(q + 1) * 8]
                h = np.maximum(st_in @ head.w1.data + head.b1.data, 0)
                np.testing.assert_allclose(got[i, q], h @ head.w2.data + head.b2.data, atol=1e-12)

    def test_indivisible_rejected(self, rng):
        with pytest.raises(ConfigurationError):
            predictor_head(rng.standard_normal((1, 4, 1)), self.head(rng, 1, 2, 1), 3)


class TestForward:
    def test_table_geometry_shape_and_time(self):
        rng = np.random.default_rng(0)
        model = DetectorNet(ModelConfig(n_nodes=207), ring_graph(207))
        x = rng.standard_normal((207, 12, 2))
        started = time.perf_counter()
        out = model.predict(x)
        assert out.shape == (207, 12, 1)
        assert time.perf_counter() - started <= 10.0

    def test_single_node_smoke(self):
        cfg = ModelConfig(n_nodes=1, input_len=3, output_len=3, hidden=4, embed_dim=2)
        out = DetectorNet(cfg, DetectorGraph.from_adjacency([[0.0]])).predict(np.ones((1, 3, 2)))
        assert out.shape == (1, 3, 1) and np.all(np.isfinite(out))

    def test_straight_line_oracle(self, rng):
        cfg = ModelConfig(**dict(TOY, input_len=6, output_len=6, layers=2, seed=3))
        adj = rng.random((3, 3))
        model = DetectorNet(cfg, DetectorGraph.from_adjacency(adj))
        for name, p in model.store.items():
            if p.ndim == 1:
                p.data[...] = rng.standard_normal(p.shape) * 0.3
        w = {k: v.data for k, v in model.store.items()}
        x = rng.standard_normal((3, 6, 2))

        h = x @ w["input.w"] + w["input.b"]
        for layer in range(2):
            h = oracle_mtam(h, w, f"layer{layer}.mtam")
            h = oracle_dsgcn(h, adj, w, f"layer{layer}.dsgcn")
        expect = np.empty((3, 6, 1))
        for i in range(3):
            for q in range(6):
                mid = np.maximum(h[i, q] @ w["head.w1"] + w["head.b1"], 0)
                expect[i, q] = mid @ w["head.w2"] + w["head.b2"]
        np.testing.assert_allclose(model.predict(x), expect, rtol=0, atol=1e-9)

    def test_wrong_window_shape(self):
        model = DetectorNet(ModelConfig(**TOY), ring_graph(3))
        with pytest.raises(DimensionError):
            model.predict(np.zeros((3, 4, 2)))

    def test_eval_is_deterministic(self, rng):
        model = DetectorNet(ModelConfig(**dict(TOY, dropout=0.3)), ring_graph(3))
        x = rng.standard_normal((2, 3, 3, 2))
        assert np.array_equal(model.predict(x), model.predict(x))


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 5), m=st.integers(1, 3), q=st.sampled_from([1, 3]), c=st.integers(1, 5),
       layers=st.integers(1, 2), order=st.integers(0, 3), d=st.integers(1, 3),
       flag=st.sampled_from((None,) + ABLATIONS), learn=st.booleans(), batch=st.integers(1, 2))
def test_shape_contract_and_parameter_count(n, m, q, c, layers, order, d, flag, learn, batch):
    p = 3 * m
    cfg = ModelConfig(n_nodes=n, input_len=p, output_len=q, hidden=c, layers=layers,
                      diffusion_order=order, embed_dim=d, predictor_mid=3, learnable_coeffs=learn,
                      **({flag: True} if flag else {}))
    model = DetectorNet(cfg, ring_graph(n) if n > 1 else DetectorGraph.from_adjacency([[0.0]]))
    assert model.n_parameters() == parameter_count(cfg)
    out = model.predict(np.random.default_rng(0).standard_normal((batch, n, p, 2)))
    assert out.shape == (batch, n, q, 1) and np.all(np.isfinite(out))


class TestMaskedMae:
    def test_hand_example(self):
        assert masked_mae_loss(np.array([2.0, 4.0]), np.array([1.0, 0.0]),
                               np.array([1.0, 0.0]) != 0).item() == 1.0

    def test_identity(self, rng):
        y = rng.standard_normal((3, 4))
        assert masked_mae_loss(y, y).item() == 0.0

    def test_loop_oracle(self, rng):
        pred, truth = rng.standard_normal((4, 3, 5)), rng.standard_normal((4, 3, 5))
        mask = rng.random((4, 3, 5)) > 0.4
        total, count = 0.0, 0
        for idx in np.ndindex(pred.shape):
            if mask[idx]:
                total += abs(pred[idx] - truth[idx])
                count += 1
        assert abs(masked_mae_loss(pred, truth, mask).item() - total / count) <= 1e-12

    def test_empty_mask_warns(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            loss = masked_mae_loss(np.ones(3), np.ones(3), np.zeros(3, dtype=bool))
        assert loss.item() == 0.0
        assert any(issubclass(w.category, RuntimeWarning) for w in caught)


class TestAblations:
    cfg = ModelConfig(n_nodes=3, input_len=6, output_len=6, hidden=4, layers=2, embed_dim=3)

    def test_every_flag_reduces_parameters(self):
        full = parameter_count(self.cfg)
        for flag in ABLATIONS:
            assert parameter_count(self.cfg.replace(**{flag: True})) < full, flag

    def test_without_da_drops_dynamic_weights_and_graph_params(self):
        c, k, n, p, d = 4, 2, 3, 6, 3
        diff = parameter_count(self.cfg) - parameter_count(self.cfg.replace(without_da=True))
        per_layer = (k + 1) * c * c + (2 * n * d + 2 * n * n + 2 * p * c * c)
        assert diff == 2 * per_layer

    def test_without_mta_accepts_indivisible_length(self):
        cfg = ModelConfig(n_nodes=3, input_len=4, output_len=4, hidden=3, without_mta=True)
        assert DetectorNet(cfg, ring_graph(3)).predict(np.zeros((3, 4, 2))).shape == (3, 4, 1)

    def test_indivisible_length_needs_views_off(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(n_nodes=3, input_len=4, output_len=4)

    def test_mta_and_gta_together_rejected(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(n_nodes=3, without_mta=True, without_gta=True)

    def test_unknown_flag(self):
        with pytest.raises(ConfigurationError):
            apply_ablation(ModelConfig(**TOY), "without_everything", ring_graph(3))

    @pytest.mark.parametrize("flag", ABLATIONS)
    def test_one_training_step_changes_loss(self, flag, rng):
        cfg = ModelConfig(**TOY)
        model = apply_ablation(cfg, flag, ring_graph(3, rng))
        assert getattr(model.config, flag)
        x = rng.standard_normal((4, 3, cfg.input_len, 2))
        y = rng.standard_normal((4, 3, 3, 1))
        before = masked_mae_loss(model.forward(x), y)
        model.store.zero_grad()
        before.backward()
        adam_step(model.store, AdamState(lr=1e-2))
        after = masked_mae_loss(model.predict(x), y).item()
        assert after != before.item()


def test_end_to_end_gradient_check():
    report = gradient_check_model(ModelConfig(**TOY), seed=0, coords=10_000, tolerance=1e-4)
    assert report.passed, report.lines()
    assert report.worst <= 1e-4
