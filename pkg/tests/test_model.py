"""End-to-end model behavior: determinism, leakage, gradients, training."""

import numpy as np
import pytest

from holink import tensor as T
from holink.data import build_index, chronological_split, concat_streams
from holink.model import (HistoryView, LinkPredictor, ModelConfig, bce_loss,
                          toy_config, train)
from holink.synth import generate_synthetic
from holink.tensor import Tensor

from helpers import finite_diff_check


@pytest.fixture(scope="module")
def periodic():
    stream = generate_synthetic(
        "periodic-bipartite",
        dict(num_left=12, num_right=12, num_events=600, period=60.0), seed=0)
    return stream


@pytest.fixture(scope="module")
def toy_model(periodic):
    model = LinkPredictor(toy_config(), periodic.d_node, periodic.d_edge)
    return model


class TestForwardPair:
    def test_deterministic_without_dropout(self, periodic, toy_model):
        history = HistoryView.from_stream(periodic)
        a = toy_model.forward_pair(1, 13, 900.0, history)
        b = toy_model.forward_pair(1, 13, 900.0, history)
        assert a == b
        assert 0.0 < a < 1.0

    def test_fresh_nodes_fully_padded_path(self, periodic, toy_model):
        history = HistoryView.from_stream(periodic)
        # nodes with no events before t=0.5: histories are empty
        p = toy_model.forward_pair(1, 2, 0.5, history)
        assert np.isfinite(p) and 0.0 < p < 1.0

    def test_unknown_node_transductive_error(self, periodic, toy_model):
        history = HistoryView.from_stream(periodic)
        with pytest.raises(KeyError):
            toy_model.forward_pair(999, 1, 10.0, history)

    def test_unknown_node_inductive_allowed(self, periodic, toy_model):
        history = HistoryView.from_stream(periodic)
        p = toy_model.forward_pair(999, 1, 10.0, history, allow_unknown=True)
        assert 0.0 < p < 1.0

    def test_leakage_guard_bit_identical(self, periodic, toy_model):
        i = 400
        t = float(periodic.timestamps[i])
        u = int(periodic.sources[i])
        v = int(periodic.destinations[i])
        full = HistoryView.from_stream(periodic)
        truncated = HistoryView.from_stream(periodic.select(periodic.timestamps < t))
        assert (toy_model.forward_pair(u, v, t, full)
                == toy_model.forward_pair(u, v, t, truncated))

    def test_both_orders_defined(self, periodic, toy_model):
        history = HistoryView.from_stream(periodic)
        a = toy_model.forward_pair(3, 20, 800.0, history)
        b = toy_model.forward_pair(20, 3, 800.0, history)
        assert np.isfinite(a) and np.isfinite(b)

    def test_dropout_is_training_only_noise(self, periodic):
        cfg = toy_config(dropout=0.5)
        model = LinkPredictor(cfg, periodic.d_node, periodic.d_edge)
        history = HistoryView.from_stream(periodic)
        src = np.array([1]); dst = np.array([13]); ts = np.array([900.0])
        eval_a = model.score_pairs(src, dst, ts, history)
        eval_b = model.score_pairs(src, dst, ts, history)
        assert np.array_equal(eval_a, eval_b)
        t1 = model.score_batch(src, dst, ts, history, training=True,
                               rng=np.random.default_rng(1)).values
        t2 = model.score_batch(src, dst, ts, history, training=True,
                               rng=np.random.default_rng(2)).values
        assert not np.array_equal(t1, t2)


class TestBceLoss:
    def test_perfect_predictions_near_zero(self):
        loss = bce_loss(Tensor(np.ones(4)), Tensor(np.zeros(4)))
        assert loss.item() < 2e-7  # clamped at 1e-7

    def test_half_everywhere_is_log2(self):
        loss = bce_loss(Tensor(np.full(5, 0.5)), Tensor(np.full(5, 0.5)))
        assert abs(loss.item() - np.log(2.0)) < 1e-12

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(1)
        pos = rng.uniform(0.01, 0.99, 20)
        neg = rng.uniform(0.01, 0.99, 20)
        expected = np.mean(np.concatenate([-np.log(pos), -np.log(1 - neg)]))
        got = bce_loss(Tensor(pos), Tensor(neg)).item()
        assert abs(got - expected) < 1e-12

    def test_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            bce_loss(Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_gradient(self):
        rng = np.random.default_rng(2)
        pos = Tensor(rng.uniform(0.2, 0.8, 6), requires_grad=True)
        neg = Tensor(rng.uniform(0.2, 0.8, 6), requires_grad=True)
        finite_diff_check(lambda: bce_loss(pos, neg), [pos, neg], rng, samples=4)


class TestEndToEndGradients:
    def test_every_parameter_against_finite_differences(self, periodic):
        """Toy-dimension model, full pipeline, sampled-coordinate fd check.

        Parameters are re-drawn at a generic random point first: the zero
        bias init leaves ReLU units exactly at their kink for zero
        co-occurrence counts, where central differences are ill-defined.
        """
        cfg = toy_config()
        model = LinkPredictor(cfg, periodic.d_node, periodic.d_edge)
        scatter = np.random.default_rng(99)
        for _, t in model.store.items():
            t.values[...] = scatter.uniform(-0.4, 0.4, t.values.shape)
        history = HistoryView.from_stream(periodic)
        src = periodic.sources[300:304]
        dst = periodic.destinations[300:304]
        ts = periodic.timestamps[300:304]
        neg_dst = np.array([2, 3, 4, 5])

        def loss():
            probs = model.score_batch(np.concatenate([src, src]),
                                      np.concatenate([dst, neg_dst]),
                                      np.concatenate([ts, ts]), history)
            return bce_loss(T.slice_axis(probs, 0, 0, 4),
                            T.slice_axis(probs, 0, 4, 8))

        rng = np.random.default_rng(3)
        finite_diff_check(loss, model.store.tensors(), rng, samples=2)


class TestCheckpoint:
    def test_save_load_bit_identical(self, periodic, tmp_path):
        cfg = toy_config(s2=1)
        model = LinkPredictor(cfg, periodic.d_node, periodic.d_edge)
        history = HistoryView.from_stream(periodic)
        before = model.forward_pair(1, 13, 700.0, history)
        path = tmp_path / "model.npz"
        model.save(path, {"best_val_ap": 0.5, "epoch": 3})
        loaded, extra = LinkPredictor.load(path)
        assert extra == {"best_val_ap": 0.5, "epoch": 3}
        assert loaded.config == cfg
        assert loaded.forward_pair(1, 13, 700.0, history) == before

    def test_mismatched_state_rejected(self, periodic, tmp_path):
        model = LinkPredictor(toy_config(), periodic.d_node, periodic.d_edge)
        state = model.store.state()
        state.pop(next(iter(state)))
        with pytest.raises(ValueError, match="missing"):
            model.store.load_state(state)


class TestTraining:
    def test_loss_decreases_on_overfit_stream(self, periodic):
        train_s, val_s, _ = chronological_split(periodic)
        cfg = toy_config(s1=6, s2=0, seq_len=8, patch_size=2, epochs=5,
                         batch_size=60, learning_rate=3e-3)
        model = LinkPredictor(cfg, periodic.d_node, periodic.d_edge)
        result = train(model, train_s, val_s)
        losses = [row.train_loss for row in result.history]
        assert len(losses) >= 3
        # monotone decrease over the first epochs, one violation allowed
        violations = sum(1 for a, b in zip(losses, losses[1:]) if b > a + 1e-9)
        assert violations <= 1
        assert losses[-1] < losses[0]

    def test_seed_reproducibility(self, periodic):
        train_s, val_s, _ = chronological_split(periodic)
        cfg = toy_config(epochs=2, batch_size=100, dropout=0.1)

        def run():
            model = LinkPredictor(cfg, periodic.d_node, periodic.d_edge)
            return train(model, train_s, val_s).model.store.state()

        a, b = run(), run()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_patience_zero_stops_at_first_non_improvement(self, periodic):
        train_s, val_s, _ = chronological_split(periodic)
        cfg = toy_config(epochs=50, patience=0, batch_size=100)
        model = LinkPredictor(cfg, periodic.d_node, periodic.d_edge)
        result = train(model, train_s, val_s)
        aps = [row.val_ap for row in result.history]
        # stopped exactly one epoch after the first non-improving one
        assert len(aps) < 50
        best_so_far = -1.0
        for i, ap in enumerate(aps[:-1]):
            assert ap > best_so_far
            best_so_far = ap
        assert aps[-1] <= best_so_far

    def test_empty_train_split_rejected(self, periodic):
        cfg = toy_config()
        model = LinkPredictor(cfg, periodic.d_node, periodic.d_edge)
        with pytest.raises(ValueError):
            train(model, periodic.view(0, 0), periodic.view(0, 10))

    def test_log_file_format(self, periodic, tmp_path):
        train_s, val_s, _ = chronological_split(periodic)
        cfg = toy_config(epochs=2, batch_size=200)
        model = LinkPredictor(cfg, periodic.d_node, periodic.d_edge)
        log = tmp_path / "log.csv"
        train(model, train_s, val_s, log_path=log)
        lines = log.read_text().strip().split("\n")
        assert lines[0] == "epoch,train_loss,val_ap,val_auc,elapsed_s"
        assert len(lines) >= 2
        first = lines[1].split(",")
        assert int(first[0]) == 0 and len(first) == 5
