"""Feature encodings: time intervals, co-occurrence projection, patching,
alignment, and pair concatenation."""

import numpy as np
import pytest

from holink import tensor as T
from holink.encoder import (AlignParams, CooccurrenceProjector,
                            TimeEncoderParams, align_concat, encode_nodes_edges,
                            encode_time, gather_node_edge_features, hop_onehot,
                            init_time_frequencies, pair_concat, patch,
                            patch_validity, project_cooccurrence, unpatch)
from holink.nn import ParameterStore, add_linear
from holink.sampler import PaddedNeighborhood
from holink.tensor import ShapeError, Tensor

from helpers import finite_diff_check


def padded(neigh, times, eids, hops, valid):
    return PaddedNeighborhood(np.array(neigh), np.array(times, dtype=float),
                              np.array(eids), np.array(hops),
                              np.array(valid, dtype=bool))


class TestNodeEdgeEncoding:
    def test_hop_two_marker(self):
        marks = hop_onehot(np.array([1, 2, 0, 3]))
        assert marks.tolist() == [[1, 0], [0, 1], [0, 0], [0, 1]]

    def test_featureless_nodes_give_marker_rows(self):
        node_feats = np.zeros((4, 0))
        edge_feats = np.zeros((3, 0))
        p = padded([1, 2, 0], [1.0, 2.0, 0.0], [0, 1, -1], [1, 2, 0], [1, 1, 0])
        x_n, x_e = encode_nodes_edges(p, node_feats, edge_feats)
        assert x_n.tolist() == [[1, 0], [0, 1], [0, 0]]
        assert x_e.shape == (3, 0)

    def test_shape_arithmetic(self):
        node_feats = np.arange(8, dtype=float).reshape(4, 2)
        edge_feats = np.ones((5, 3))
        p = padded([1, 3, 2], [1, 2, 3], [0, 2, 4], [1, 1, 2], [1, 1, 1])
        x_n, x_e = encode_nodes_edges(p, node_feats, edge_feats)
        assert x_n.shape == (3, 4)  # d_N + 2
        assert np.array_equal(x_n[0], [2.0, 3.0, 1.0, 0.0])
        assert x_e.shape == (3, 3)

    def test_padding_rows_zero(self):
        node_feats = np.vstack([np.zeros(2), np.ones((3, 2))])
        edge_feats = np.ones((2, 2))
        p = padded([1, 0], [1.0, 0.0], [0, -1], [1, 0], [1, 0])
        x_n, x_e = encode_nodes_edges(p, node_feats, edge_feats)
        assert np.array_equal(x_n[1], np.zeros(4))
        assert np.array_equal(x_e[1], np.zeros(2))

    def test_unknown_node_raises(self):
        p = padded([9], [1.0], [0], [1], [1])
        with pytest.raises(KeyError):
            encode_nodes_edges(p, np.zeros((4, 1)), np.zeros((1, 1)))

    def test_batched_gather_matches_single(self):
        rng = np.random.default_rng(0)
        node_feats = rng.uniform(-1, 1, (6, 3))
        node_feats[0] = 0.0
        edge_feats = rng.uniform(-1, 1, (7, 2))
        singles = [padded([1 + i, 0], [1.0, 0.0], [i, -1], [1, 0], [1, 0])
                   for i in range(3)]
        batch_n, batch_e = gather_node_edge_features(
            np.stack([p.neighbors for p in singles]),
            np.stack([p.hops for p in singles]),
            np.stack([p.event_ids for p in singles]),
            node_feats, edge_feats)
        for i, p in enumerate(singles):
            x_n, x_e = encode_nodes_edges(p, node_feats, edge_feats)
            assert np.array_equal(batch_n[i], x_n)
            assert np.array_equal(batch_e[i], x_e)


class TestTimeEncoding:
    def test_zero_interval(self):
        params = TimeEncoderParams(Tensor(np.array([0.3, 0.7])))
        out = encode_time(np.array([0.0]), params).values
        expected = np.sqrt(0.5) * np.array([1.0, 0.0, 1.0, 0.0])
        assert np.allclose(out[0], expected, atol=1e-15)

    def test_zero_frequencies(self):
        params = TimeEncoderParams(Tensor(np.zeros(3)))
        out = encode_time(np.array([0.0, 5.0, 123.0]), params).values
        assert np.allclose(out, out[0])

    def test_closed_form_pi(self):
        params = TimeEncoderParams(Tensor(np.array([1.0, 2.0])))
        out = encode_time(np.array([np.pi]), params).values
        expected = np.sqrt(0.5) * np.array([-1.0, 0.0, 1.0, 0.0])
        assert np.abs(out[0] - expected).max() < 1e-12

    def test_row_norm_exactly_one(self):
        rng = np.random.default_rng(1)
        params = TimeEncoderParams(Tensor(init_time_frequencies(16)))
        out = encode_time(rng.uniform(0, 1e4, (5, 20)), params).values
        norms = np.linalg.norm(out, axis=-1)
        assert np.abs(norms - 1.0).max() < 1e-9

    def test_padding_rows_zeroed(self):
        params = TimeEncoderParams(Tensor(np.array([0.5])))
        valid = np.array([[True, False]])
        out = encode_time(np.array([[1.0, 0.0]]), params, valid).values
        assert np.array_equal(out[0, 1], np.zeros(2))
        assert np.abs(out[0, 0]).max() > 0

    def test_negative_interval_rejected(self):
        params = TimeEncoderParams(Tensor(np.ones(2)))
        with pytest.raises(ValueError):
            encode_time(np.array([-0.5]), params)

    def test_frequency_gradient(self):
        rng = np.random.default_rng(2)
        freq = Tensor(init_time_frequencies(4), requires_grad=True)
        params = TimeEncoderParams(freq)
        dts = rng.uniform(0, 10, (3, 5))
        w = Tensor(rng.uniform(-1, 1, (3, 5, 8)))
        finite_diff_check(
            lambda: T.tsum(T.mul(encode_time(dts, params), w)), [freq], rng,
            samples=4)


class TestCooccurrenceProjection:
    def _projector(self, d_c, rng):
        store = ParameterStore()
        proj = CooccurrenceProjector(
            *add_linear(store, "own.h", 1, d_c, rng),
            *add_linear(store, "own.o", d_c, d_c, rng),
            *add_linear(store, "other.h", 1, d_c, rng),
            *add_linear(store, "other.o", d_c, d_c, rng))
        return store, proj

    def test_zero_counts_zero_biases(self):
        store, proj = self._projector(4, np.random.default_rng(3))
        for name, t in store.items():
            if name.endswith("bias"):
                t.values[...] = 0.0
        out = project_cooccurrence(np.zeros((3, 2)), proj).values
        assert np.abs(out).max() == 0.0

    def test_output_width(self):
        _, proj = self._projector(50, np.random.default_rng(4))
        out = project_cooccurrence(np.ones((7, 2)), proj)
        assert out.shape == (7, 50)

    def test_matches_scalar_mlp_oracle(self):
        rng = np.random.default_rng(5)
        store, proj = self._projector(3, rng)
        counts = rng.integers(0, 6, (10, 2)).astype(float)

        def scalar_mlp(x, w1, b1, w2, b2):
            h = np.maximum(0.0, x * w1[0] + b1)
            return h @ w2 + b2

        expected = np.zeros((10, 3))
        for i in range(10):
            expected[i] = (scalar_mlp(counts[i, 0], proj.own_w1.values,
                                      proj.own_b1.values, proj.own_w2.values,
                                      proj.own_b2.values)
                           + scalar_mlp(counts[i, 1], proj.other_w1.values,
                                        proj.other_b1.values, proj.other_w2.values,
                                        proj.other_b2.values))
        got = project_cooccurrence(counts, proj).values
        assert np.abs(got - expected).max() < 1e-12

    def test_second_list_changes_only_other_branch(self):
        rng = np.random.default_rng(6)
        _, proj = self._projector(4, rng)
        counts_a = np.array([[2.0, 1.0], [1.0, 0.0]])
        counts_b = counts_a.copy()
        counts_b[:, 1] = [3.0, 2.0]  # second endpoint's history changed
        delta = (project_cooccurrence(counts_b, proj).values
                 - project_cooccurrence(counts_a, proj).values)
        counts_c = counts_a.copy()
        counts_c[:, 0] += 1.0
        assert np.abs(delta).max() > 0
        # own-branch weights did not participate in the delta
        only_other = (project_cooccurrence(np.stack([counts_a[:, 0], counts_b[:, 1]], 1), proj).values
                      - project_cooccurrence(counts_a, proj).values)
        assert np.allclose(delta, only_other)


class TestPatching:
    def test_row_count(self):
        assert patch(np.zeros((256, 5)), 8).shape == (32, 40)

    def test_identity_patch(self):
        x = np.random.default_rng(7).uniform(-1, 1, (6, 3))
        assert np.array_equal(patch(x, 1), x)

    def test_partial_patch_zero_padded(self):
        x = np.ones((5, 2))
        m = patch(x, 2)
        assert m.shape == (3, 4)
        assert np.array_equal(m[2], [1.0, 1.0, 0.0, 0.0])

    def test_time_order_flattening(self):
        x = np.arange(12, dtype=float).reshape(6, 2)
        m = patch(x, 3)
        assert m[0].tolist() == [0, 1, 2, 3, 4, 5]

    def test_unpatch_roundtrip(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(-1, 1, (7, 3))
        m = patch(x, 4)
        back = unpatch(m, 4, 3)
        assert np.array_equal(back[:7], x)
        assert np.abs(back[7:]).max() == 0.0

    def test_tensor_patch_gradient(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.uniform(-1, 1, (2, 6, 3)), requires_grad=True)
        w = Tensor(rng.uniform(-1, 1, (2, 2, 9)))
        finite_diff_check(lambda: T.tsum(T.mul(patch(x, 3), w)), [x], rng,
                          samples=6)

    def test_validity_any_semantics(self):
        valid = np.array([True, False, False, False, True, False])
        assert patch_validity(valid, 2).tolist() == [True, False, True]
        assert patch_validity(valid, 4).tolist() == [True, True]


class TestAlignConcat:
    def _params(self, widths, d, rng):
        store = ParameterStore()
        names = ("nodes", "edges", "time", "cooc")
        flat = []
        for name, w in zip(names, widths):
            flat.extend(add_linear(store, f"align.{name}", w, d, rng))
        return store, AlignParams(*flat)

    def test_width_4d(self):
        rng = np.random.default_rng(10)
        store, params = self._params((3, 4, 5, 6), 50, rng)
        ms = [np.ones((2, w)) for w in (3, 4, 5, 6)]
        z = align_concat(*ms, params)
        assert z.shape == (2, 200)

    def test_zero_weights_give_bias_rows(self):
        rng = np.random.default_rng(11)
        store, params = self._params((2, 2, 2, 2), 3, rng)
        for name, t in store.items():
            if name.endswith("weight"):
                t.values[...] = 0.0
        z = align_concat(*[np.random.default_rng(12).uniform(-1, 1, (4, 2))
                           for _ in range(4)], params).values
        expected_row = np.concatenate([params.b_nodes.values, params.b_edges.values,
                                       params.b_time.values, params.b_cooc.values])
        assert np.allclose(z, np.tile(expected_row, (4, 1)))

    def test_affine_linearity(self):
        rng = np.random.default_rng(13)
        store, params = self._params((3, 3, 3, 3), 4, rng)
        ms = [rng.uniform(-1, 1, (5, 3)) for _ in range(4)]
        alpha = 2.75
        z1 = align_concat(*ms, params).values
        z2 = align_concat(*[alpha * m for m in ms], params).values
        bias_row = np.concatenate([params.b_nodes.values, params.b_edges.values,
                                   params.b_time.values, params.b_cooc.values])
        assert np.abs(z2 - (alpha * z1 + (1 - alpha) * bias_row)).max() < 1e-10


class TestPairConcat:
    def test_equal_lengths_no_padding(self):
        rng = np.random.default_rng(14)
        z_u = Tensor(rng.uniform(-1, 1, (32, 8)))
        z_v = Tensor(rng.uniform(-1, 1, (32, 8)))
        pair = pair_concat(z_u, z_v, np.ones(32, bool), np.ones(32, bool))
        assert pair.z.shape == (32, 16)
        assert pair.row_valid.all()

    def test_shorter_side_zero_padded_and_flagged(self):
        z_u = Tensor(np.ones((3, 4)))
        z_v = Tensor(np.ones((5, 4)))
        pair = pair_concat(z_u, z_v, np.ones(3, bool), np.ones(5, bool))
        assert pair.z.shape == (5, 8)
        assert np.abs(pair.z.values[3:, :4]).max() == 0.0
        assert pair.left_valid.tolist() == [True, True, True, False, False]
        assert pair.row_valid.tolist() == [True] * 5

    def test_width_with_default_dims(self):
        z_u = Tensor(np.zeros((4, 200)))
        z_v = Tensor(np.zeros((4, 200)))
        pair = pair_concat(z_u, z_v, np.ones(4, bool), np.ones(4, bool))
        assert pair.z.shape[-1] == 400

    def test_width_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            pair_concat(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))),
                        np.ones(2, bool), np.ones(2, bool))

    def test_row_alignment(self):
        # row j of the pair holds patch j of u beside patch j of v
        z_u = Tensor(np.arange(6, dtype=float).reshape(3, 2))
        z_v = Tensor(-np.arange(6, dtype=float).reshape(3, 2))
        pair = pair_concat(z_u, z_v, np.ones(3, bool), np.ones(3, bool))
        assert pair.z.values[1].tolist() == [2.0, 3.0, -2.0, -3.0]
