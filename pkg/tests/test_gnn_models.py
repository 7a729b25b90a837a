import unittest

import numpy as np

from autodiff import Tensor
from exceptions import ConfigError, ShapeError
from gnn_models import (
    ARCHITECTURES, BlockOperator, DenseOperator, GnnSpec, IdentityOperator, SparseOperator,
    forward, generate_adjacency, init_adj_generator, init_params,
)
from graph_core import SparseGraph, densify, normalize_adjacency, receptive_field


def ring_graph(n):
    i = np.arange(n)
    return SparseGraph.from_edges(n, i, (i + 1) % n)


def features(n, d, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal((n, d)).astype(np.float32))


class TestSpec(unittest.TestCase):

    def test_unknown_arch(self):
        with self.assertRaises(ConfigError):
            GnnSpec('gat')

    def test_hops(self):
        self.assertEqual(GnnSpec('mlp', layers=3).hops, 0)
        self.assertEqual(GnnSpec('appnp', appnp_k=4).hops, 4)
        self.assertEqual(GnnSpec('gcn', layers=3).hops, 3)

    def test_bad_dropout(self):
        with self.assertRaises(ConfigError):
            GnnSpec('gcn', dropout=1.0)


class TestInit(unittest.TestCase):

    def test_deterministic_per_seed(self):
        spec = GnnSpec('gcn', hidden=16)
        a, b = init_params(spec, 8, 3, seed=5), init_params(spec, 8, 3, seed=5)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa.data, wb.data)
        c = init_params(spec, 8, 3, seed=6)
        self.assertFalse(np.array_equal(a.weights[0].data, c.weights[0].data))

    def test_glorot_bounds_and_variance(self):
        params = init_params(GnnSpec('gcn', layers=2, hidden=200), 300, 100, seed=0)
        w = params.weights[0].data
        limit = np.sqrt(6.0 / (300 + 200))
        self.assertLessEqual(np.abs(w).max(), limit)
        self.assertAlmostEqual(w.var(), limit ** 2 / 3, delta=0.05 * limit ** 2 / 3)
        self.assertTrue(np.all(params.biases[0].data == 0))

    def test_layer_shapes(self):
        self.assertEqual([w.shape for w in init_params(GnnSpec('gcn', layers=3, hidden=4), 6, 2, 0).weights],
                         [(6, 4), (4, 4), (4, 2)])
        self.assertEqual([w.shape for w in init_params(GnnSpec('sgc', layers=3), 6, 2, 0).weights], [(6, 2)])
        self.assertEqual([w.shape for w in init_params(GnnSpec('sage', hidden=4), 6, 2, 0).weights],
                         [(12, 4), (8, 2)])


class TestForward(unittest.TestCase):

    def test_sgc_on_identity_is_linear(self):
        spec = GnnSpec('sgc', layers=2)
        params = init_params(spec, 5, 3, seed=0)
        x = features(4, 5)
        out = forward(spec, params, IdentityOperator(4), x).data
        expected = x.data @ params.weights[0].data + params.biases[0].data
        np.testing.assert_allclose(out, expected, atol=1e-5)

    def test_sgc_matches_collapsed_propagation(self):
        g = ring_graph(6)
        spec = GnnSpec('sgc', layers=2)
        params = init_params(spec, 4, 2, seed=1)
        x = features(6, 4)
        a_hat = densify(normalize_adjacency(g)).data.astype(np.float64)
        expected = a_hat @ a_hat @ x.data @ params.weights[0].data
        out = forward(spec, params, SparseOperator(g), x).data
        np.testing.assert_allclose(out, expected, atol=1e-5)

    def test_gcn_matches_dense_formula(self):
        g = ring_graph(5)
        spec = GnnSpec('gcn', layers=2, hidden=3)
        params = init_params(spec, 4, 2, seed=2)
        x = features(5, 4)
        a_hat = densify(normalize_adjacency(g)).data
        w0, w1 = params.weights[0].data, params.weights[1].data
        expected = a_hat @ np.maximum(a_hat @ x.data @ w0, 0) @ w1
        out = forward(spec, params, SparseOperator(g), x).data
        np.testing.assert_allclose(out, expected, atol=1e-5)

    def test_dense_operator_matches_sparse(self):
        g = ring_graph(5)
        spec = GnnSpec('gcn', layers=2, hidden=3)
        params = init_params(spec, 4, 2, seed=3)
        x = features(5, 4)
        adjacency = densify(g).data + np.eye(5, dtype=np.float32)
        dense_out = forward(spec, params, DenseOperator(Tensor(adjacency)), x).data
        sparse_out = forward(spec, params, SparseOperator(g), x).data
        np.testing.assert_allclose(dense_out, sparse_out, atol=1e-5)

    def test_gcn_locality(self):
        g = SparseGraph.from_edges(8, np.arange(7), np.arange(1, 8))
        spec = GnnSpec('gcn', layers=2, hidden=6)
        params = init_params(spec, 3, 2, seed=4)
        x = features(8, 3)
        before = forward(spec, params, SparseOperator(g), x).data[0].copy()
        moved = x.data.copy()
        moved[3:] += 10.0
        after = forward(spec, params, SparseOperator(g), Tensor(moved)).data[0]
        np.testing.assert_array_equal(before, after)

    def test_out_of_field_features_do_not_reach_target(self):
        rng = np.random.default_rng(10)
        for trial in range(50):
            n = int(rng.integers(10, 40))
            i, j = np.triu_indices(n, k=1)
            keep = rng.random(len(i)) < 3.0 / n
            g = SparseGraph.from_edges(n, i[keep], j[keep])
            x = features(n, 3, seed=trial)
            target = int(rng.integers(n))
            for depth in (1, 2, 3):
                outside = np.setdiff1d(np.arange(n), receptive_field(g, target, depth))
                if outside.size == 0:
                    continue
                moved = x.data.copy()
                moved[outside] += rng.standard_normal((outside.size, 3)).astype(np.float32)
                for arch in ('gcn', 'sgc', 'sage'):
                    spec = GnnSpec(arch, layers=depth, hidden=4)
                    params = init_params(spec, 3, 2, seed=trial)
                    op = SparseOperator(g)
                    before = forward(spec, params, op, x).data[target]
                    after = forward(spec, params, op, Tensor(moved)).data[target]
                    np.testing.assert_array_equal(before, after, err_msg=f"{arch} L={depth}")

    def test_sage_on_identity_has_zero_neighbour_half(self):
        spec = GnnSpec('sage', layers=1)
        params = init_params(spec, 3, 2, seed=0)
        x = features(4, 3)
        out = forward(spec, params, IdentityOperator(4), x).data
        expected = x.data @ params.weights[0].data[:3]
        np.testing.assert_allclose(out, expected, atol=1e-5)

    def test_embeddings_stop_before_head(self):
        spec = GnnSpec('gcn', layers=2, hidden=7)
        params = init_params(spec, 4, 3, seed=0)
        out = forward(spec, params, SparseOperator(ring_graph(5)), features(5, 4), output='embeddings')
        self.assertEqual(out.shape, (5, 7))
        headless = init_params(spec, 4, 7, seed=0, head=False)
        out = forward(spec, headless, SparseOperator(ring_graph(5)), features(5, 4), output='embeddings')
        self.assertEqual(out.shape, (5, 7))

    def test_appnp_embeddings_are_propagated_hidden_rows(self):
        spec = GnnSpec('appnp', layers=2, hidden=6, appnp_k=3)
        params = init_params(spec, 4, 3, seed=0)
        op = SparseOperator(ring_graph(7))
        x = features(7, 4)
        embeddings = forward(spec, params, op, x, output='embeddings').data
        logits = forward(spec, params, op, x).data
        self.assertEqual(embeddings.shape, (7, 6))
        self.assertEqual(logits.shape, (7, 3))
        # biases start at zero, so propagation commutes with the head
        np.testing.assert_allclose(embeddings @ params.weights[-1].data, logits, atol=1e-5)

    def test_mismatched_params(self):
        spec = GnnSpec('gcn')
        params = init_params(spec, 4, 2, seed=0)
        with self.assertRaises(ShapeError):
            forward(spec, params, IdentityOperator(3), features(3, 5))
        with self.assertRaises(ShapeError):
            forward(GnnSpec('sgc'), params, IdentityOperator(3), features(3, 4))

    def test_dropout_needs_rng(self):
        spec = GnnSpec('mlp', dropout=0.5)
        params = init_params(spec, 4, 2, seed=0)
        with self.assertRaises(ValueError):
            forward(spec, params, IdentityOperator(3), features(3, 4), training=True)


class TestBlockOperator(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        i, j = np.triu_indices(30, k=1)
        keep = rng.random(len(i)) < 0.08
        self.graph = SparseGraph.from_edges(30, i[keep], j[keep])
        self.x = features(30, 5, seed=1)
        self.targets = np.array([7, 2, 19, 11])

    def test_block_rows_equal_full_forward(self):
        base = SparseOperator(self.graph)
        for arch in ARCHITECTURES:
            spec = GnnSpec(arch, layers=2, hidden=6, appnp_k=3)
            params = init_params(spec, 5, 3, seed=2)
            full = forward(spec, params, base, self.x).data
            block = BlockOperator(base, self.targets, spec.hops)
            restricted = forward(spec, params, block, self.x).data
            np.testing.assert_allclose(restricted, full[self.targets], atol=1e-5, err_msg=arch)

    def test_layers_grow_outward(self):
        block = BlockOperator(SparseOperator(self.graph), self.targets, 2)
        self.assertEqual(block.targets.tolist(), self.targets.tolist())
        sizes = [len(layer) for layer in block.layers]
        self.assertEqual(sizes, sorted(sizes))


class TestAdjacencyGenerator(unittest.TestCase):

    def test_zero_output_layer_gives_half(self):
        gen = init_adj_generator(4, 8, seed=0)
        gen.w2.data[:] = 0
        adjacency = generate_adjacency(gen, features(5, 4)).data
        off_diagonal = adjacency[~np.eye(5, dtype=bool)]
        np.testing.assert_allclose(off_diagonal, 0.5)
        np.testing.assert_allclose(np.diag(adjacency), 1.0)

    def test_symmetric_with_unit_diagonal(self):
        adjacency = generate_adjacency(init_adj_generator(3, 6, seed=1), features(6, 3)).data
        np.testing.assert_allclose(adjacency, adjacency.T, atol=1e-7)
        np.testing.assert_allclose(np.diag(adjacency), 1.0)
        self.assertTrue(np.all((adjacency >= 0) & (adjacency <= 1)))

    def test_permutation_equivariance(self):
        gen = init_adj_generator(3, 6, seed=2)
        x = features(5, 3)
        perm = np.array([3, 0, 4, 1, 2])
        base = generate_adjacency(gen, x).data
        permuted = generate_adjacency(gen, Tensor(x.data[perm])).data
        np.testing.assert_allclose(permuted, base[np.ix_(perm, perm)], atol=1e-6)

    def test_width_mismatch(self):
        with self.assertRaises(ShapeError):
            generate_adjacency(init_adj_generator(3, 6, seed=0), features(4, 2))


if __name__ == '__main__':
    unittest.main()
