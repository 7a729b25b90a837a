import csv
import json
import os
import shutil
import tempfile
import unittest

import numpy as np

from autodiff import Tensor
from condensation import condense_x
from config import CondenseConfig
from data_io import (
    CONDENSE_META_FILE, META_FILE, export_embeddings, format_weight, load_condensed, load_dataset,
    read_meta, save_condensed, save_coreset, save_dataset,
)
from baselines import select_random
from exceptions import ChecksumMismatch, CountMismatch, DataFormatError, DatasetIOError, MalformedFile
from fixtures import random_dataset, two_clique_dataset
from gnn_models import GnnSpec, SparseOperator, forward, init_params
from graph_core import Dataset, FeatureMatrix, LabelVector, SparseGraph, SplitMasks


def write_text(path, text):
    with open(path, 'w', encoding='ascii', newline='\n') as f:
        f.write(text)


class TestDatasetIO(unittest.TestCase):

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.temp_dir, 'ds')

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def write_small(self, edges, verify=False, **meta):
        """Hand-written three-node dataset without checksums."""
        os.makedirs(self.path, exist_ok=True)
        write_text(os.path.join(self.path, 'edges.tsv'), edges)
        np.arange(6, dtype='<f4').tofile(os.path.join(self.path, 'features.bin'))
        write_text(os.path.join(self.path, 'labels.txt'), "0\n1\n0\n")
        write_text(os.path.join(self.path, 'split_train.txt'), "0\n1\n")
        write_text(os.path.join(self.path, 'split_val.txt'), "2\n")
        write_text(os.path.join(self.path, 'split_test.txt'), "")
        payload = {'name': 'small', 'num_nodes': 3, 'num_features': 2, 'num_classes': 2}
        payload.update(meta)
        with open(os.path.join(self.path, META_FILE), 'w') as f:
            json.dump(payload, f)

    def test_round_trip(self):
        ds = random_dataset(seed=1)
        save_dataset(ds, self.path)
        loaded = load_dataset(self.path)
        self.assertEqual(loaded.graph, ds.graph)
        self.assertEqual(loaded.features, ds.features)
        self.assertEqual(loaded.labels, ds.labels)
        self.assertEqual(loaded.splits, ds.splits)
        self.assertEqual(loaded.name, ds.name)

    def test_weighted_edge_line(self):
        graph = SparseGraph.from_edges(2, [0], [1], weights=[0.73])
        ds = Dataset('w', graph, FeatureMatrix(np.zeros((2, 1))), LabelVector([0, 1], 2), SplitMasks([0], [1], []))
        save_dataset(ds, self.path)
        with open(os.path.join(self.path, 'edges.tsv')) as f:
            self.assertEqual(f.read(), "0\t1\t0.73\n")
        self.assertEqual(load_dataset(self.path).graph, graph)

    def test_format_weight(self):
        self.assertEqual(format_weight(1.0), '1')
        self.assertEqual(format_weight(0.5), '0.5')

    def test_duplicate_and_mirrored_edges_collapse(self):
        self.write_small("0\t1\n1\t0\n0\t1\n1\t2\n")
        ds = load_dataset(self.path)
        self.assertEqual(ds.graph.num_undirected_edges, 2)
        self.assertTrue(ds.graph.is_symmetric())

    def test_malformed_edge_line_number(self):
        self.write_small("0\t1\n1 2\n")
        with self.assertRaises(MalformedFile) as ctx:
            load_dataset(self.path)
        self.assertEqual(ctx.exception.line, 2)

    def test_edge_out_of_range(self):
        self.write_small("0\t1\n1\t3\n")
        with self.assertRaises(MalformedFile) as ctx:
            load_dataset(self.path)
        self.assertEqual(ctx.exception.line, 2)

    def test_bad_weight(self):
        self.write_small("0\t1\tabc\n")
        with self.assertRaises(MalformedFile):
            load_dataset(self.path)

    def test_features_size_mismatch(self):
        self.write_small("0\t1\n", num_features=3)
        with self.assertRaises(CountMismatch):
            load_dataset(self.path)

    def test_label_count_mismatch(self):
        self.write_small("0\t1\n")
        write_text(os.path.join(self.path, 'labels.txt'), "0\n1\n")
        with self.assertRaises(CountMismatch):
            load_dataset(self.path)

    def test_label_out_of_range(self):
        self.write_small("0\t1\n")
        write_text(os.path.join(self.path, 'labels.txt'), "0\n1\n2\n")
        with self.assertRaises(MalformedFile) as ctx:
            load_dataset(self.path)
        self.assertEqual(ctx.exception.line, 3)

    def test_overlapping_splits(self):
        self.write_small("0\t1\n")
        write_text(os.path.join(self.path, 'split_val.txt'), "1\n")
        with self.assertRaises(DataFormatError):
            load_dataset(self.path)

    def test_missing_meta_keys(self):
        self.write_small("0\t1\n")
        with open(os.path.join(self.path, META_FILE), 'w') as f:
            json.dump({'name': 'small'}, f)
        with self.assertRaises(MalformedFile):
            read_meta(self.path)

    def test_malformed_file_entries(self):
        save_dataset(two_clique_dataset(seed=0), self.path)
        meta_path = os.path.join(self.path, META_FILE)
        with open(meta_path) as f:
            good = json.load(f)
        for files in (['x'], {'edges': 'abc'}, {'edges': {'path': 'edges.tsv', 'sha256': 7}}, 'edges.tsv'):
            with open(meta_path, 'w') as f:
                json.dump(dict(good, files=files), f)
            with self.assertRaises(MalformedFile) as ctx:
                load_dataset(self.path)
            self.assertEqual(ctx.exception.path, meta_path)
        with open(meta_path, 'w') as f:
            json.dump([good], f)
        with self.assertRaises(MalformedFile):
            load_dataset(self.path)

    def test_checksum_for_missing_file(self):
        save_dataset(two_clique_dataset(seed=0), self.path)
        meta_path = os.path.join(self.path, META_FILE)
        with open(meta_path) as f:
            meta = json.load(f)
        meta['files']['extra'] = {'path': 'extra.bin', 'sha256': '0' * 64}
        with open(meta_path, 'w') as f:
            json.dump(meta, f)
        with self.assertRaises(DatasetIOError):
            load_dataset(self.path)

    def test_missing_file(self):
        self.write_small("0\t1\n")
        os.remove(os.path.join(self.path, 'labels.txt'))
        with self.assertRaises(DatasetIOError):
            load_dataset(self.path)

    def test_checksum_mismatch(self):
        save_dataset(two_clique_dataset(seed=0), self.path)
        with open(os.path.join(self.path, 'labels.txt'), 'a') as f:
            f.write("0\n")
        with self.assertRaises(ChecksumMismatch):
            load_dataset(self.path)
        with self.assertRaises(CountMismatch):
            load_dataset(self.path, verify_checksums=False)

    def test_meta_records_checksums(self):
        save_dataset(two_clique_dataset(seed=0), self.path, extra_meta={'origin': 'fixture'})
        meta = read_meta(self.path)
        self.assertEqual(set(meta['files']), {'edges', 'features', 'labels', 'split_train', 'split_val',
                                              'split_test'})
        self.assertEqual(len(meta['files']['edges']['sha256']), 64)
        self.assertFalse(meta['directed'])
        self.assertEqual(meta['origin'], 'fixture')


class TestCondensedIO(unittest.TestCase):

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.ds = two_clique_dataset(seed=0)

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_condensed_round_trip(self):
        cfg = CondenseConfig(ratio=0.1, variant='gcdm-x', epochs=1, inner_steps=2, adversary_steps=1, hidden=8)
        cg = condense_x(self.ds, cfg)
        path = os.path.join(self.temp_dir, 'condensed')
        save_condensed(cg, path)
        loaded = load_condensed(path)
        self.assertEqual(loaded.graph, cg.graph)
        self.assertEqual(loaded.features, cg.features)
        self.assertEqual(loaded.labels, cg.labels)
        self.assertEqual(loaded.config, cg.config)
        self.assertEqual(loaded.loss_history, cg.loss_history)
        with open(os.path.join(path, CONDENSE_META_FILE)) as f:
            meta = json.load(f)
        self.assertEqual(meta['variant'], 'gcdm-x')
        self.assertEqual(meta['num_nodes'], 4)
        self.assertIn('version', meta)

    def test_load_condensed_needs_meta(self):
        path = os.path.join(self.temp_dir, 'plain')
        save_dataset(self.ds, path)
        with self.assertRaises(DatasetIOError):
            load_condensed(path)

    def test_coreset_meta(self):
        result = select_random(self.ds, 4, seed=0)
        path = os.path.join(self.temp_dir, 'coreset')
        save_coreset(result, path)
        with open(os.path.join(path, 'coreset_meta.json')) as f:
            meta = json.load(f)
        self.assertEqual(meta['indices'], result.indices.tolist())
        self.assertEqual(meta['method'], 'random')
        self.assertEqual(load_dataset(path).num_nodes, 4)

    def test_export_embeddings_csv(self):
        spec = GnnSpec('gcn', hidden=5)
        params = init_params(spec, self.ds.num_features, 2, seed=0)
        out = os.path.join(self.temp_dir, 'emb', 'embeddings.csv')
        width = export_embeddings(params, spec, self.ds.graph, self.ds.features, self.ds.labels, out)
        self.assertEqual(width, 5)
        with open(out, newline='') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ['node_id', 'label', 'e_0', 'e_1', 'e_2', 'e_3', 'e_4'])
        self.assertEqual(len(rows), self.ds.num_nodes + 1)
        self.assertEqual(rows[1][:2], ['0', '0'])
        self.assertEqual(rows[-1][1], '1')

    def test_exported_values_match_in_memory_embeddings(self):
        x = Tensor(self.ds.features.data)
        for arch in ('gcn', 'sgc', 'mlp', 'sage', 'appnp'):
            spec = GnnSpec(arch, layers=2, hidden=6, appnp_k=3)
            params = init_params(spec, self.ds.num_features, 2, seed=1)
            out = os.path.join(self.temp_dir, f'{arch}.csv')
            width = export_embeddings(params, spec, self.ds.graph, self.ds.features, self.ds.labels, out)
            expected = forward(spec, params, SparseOperator(self.ds.graph), x, output='embeddings').data
            self.assertEqual(width, expected.shape[1], arch)
            with open(out, newline='') as f:
                rows = list(csv.reader(f))[1:]
            self.assertEqual([int(r[0]) for r in rows], list(range(self.ds.num_nodes)))
            self.assertEqual([int(r[1]) for r in rows], self.ds.labels.labels.tolist())
            parsed = np.array([[float(v) for v in r[2:]] for r in rows])
            np.testing.assert_allclose(parsed, expected, rtol=1e-8, atol=0, err_msg=arch)
            # nine significant digits restore float32 exactly
            np.testing.assert_array_equal(parsed.astype(np.float32), expected, err_msg=arch)


if __name__ == '__main__':
    unittest.main()
