"""Checks against converted public datasets.

Point GCDM_CORA_DIR / GCDM_CITESEER_DIR at directories written by
convert_planetoid.py. The condensation-quality checks take tens of minutes
and also need GCDM_RUN_SLOW=1.
"""
import os
import unittest

import numpy as np

from baselines import select_random
from condensation import condense, synthetic_node_count
from config import CondenseConfig, TrainConfig
from data_io import load_dataset
from trainer import cross_arch_eval

CORA_DIR = os.environ.get('GCDM_CORA_DIR')
CITESEER_DIR = os.environ.get('GCDM_CITESEER_DIR')
RUN_SLOW = os.environ.get('GCDM_RUN_SLOW') == '1'

EVAL_CONFIG = TrainConfig(epochs=600, lr=0.01, weight_decay=5e-4, dropout=0.5, patience=100, hidden=256)


def gcn_accuracy(train_ds, ds, repeats=5):
    return cross_arch_eval(train_ds, ds, ['gcn'], EVAL_CONFIG, repeats).arch('gcn').mean


@unittest.skipUnless(CORA_DIR, 'GCDM_CORA_DIR not set')
class TestCora(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.ds = load_dataset(CORA_DIR)

    def test_statistics(self):
        self.assertEqual(self.ds.num_nodes, 2708)
        self.assertEqual(self.ds.num_classes, 7)
        self.assertEqual(self.ds.num_features, 1433)
        # the raw distribution lists 5429 edges, 5278 after deduplication
        self.assertIn(self.ds.graph.num_undirected_edges, (5278, 5429))
        self.assertEqual(len(self.ds.splits.train), 140)
        self.assertEqual(np.bincount(self.ds.labels.labels[self.ds.splits.train]).tolist(), [20] * 7)

    def test_node_budget(self):
        self.assertEqual(synthetic_node_count(self.ds.num_nodes, 0.026), 70)

    def test_whole_graph_gcn(self):
        self.assertAlmostEqual(gcn_accuracy(self.ds, self.ds), 82.5, delta=2.0)

    @unittest.skipUnless(RUN_SLOW, 'GCDM_RUN_SLOW not set')
    def test_graphless_condensation_quality(self):
        cg = condense(self.ds, CondenseConfig(ratio=0.026, variant='gcdm-x'))
        self.assertEqual(np.bincount(cg.labels.labels).tolist(), [10] * 7)
        condensed_acc = gcn_accuracy(cg.as_dataset(), self.ds)
        self.assertGreaterEqual(condensed_acc, 76.0)

        random_accs = [gcn_accuracy(select_random(self.ds, 70, seed).as_dataset(), self.ds, repeats=1)
                       for seed in range(5)]
        self.assertGreaterEqual(condensed_acc - float(np.mean(random_accs)), 2.0)

    @unittest.skipUnless(RUN_SLOW, 'GCDM_RUN_SLOW not set')
    def test_structure_condensation_quality(self):
        cg = condense(self.ds, CondenseConfig(ratio=0.026, variant='gcdm'))
        self.assertTrue(cg.graph.is_symmetric())
        self.assertGreaterEqual(gcn_accuracy(cg.as_dataset(), self.ds), 72.0)


@unittest.skipUnless(CITESEER_DIR, 'GCDM_CITESEER_DIR not set')
class TestCiteseer(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.ds = load_dataset(CITESEER_DIR)

    def test_whole_graph_gcn(self):
        self.assertAlmostEqual(gcn_accuracy(self.ds, self.ds), 73.0, delta=2.0)

    @unittest.skipUnless(RUN_SLOW, 'GCDM_RUN_SLOW not set')
    def test_graphless_condensation_quality(self):
        cg = condense(self.ds, CondenseConfig(ratio=0.018, variant='gcdm-x'))
        self.assertGreaterEqual(gcn_accuracy(cg.as_dataset(), self.ds), 66.0)


if __name__ == '__main__':
    unittest.main()
