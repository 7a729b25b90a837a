#!/usr/bin/env python3
"""
Convert the public Planetoid pickles (ind.<name>.x, tx, allx, y, ty, ally,
graph, test.index) into a dataset directory with the public split
"""

import argparse
import os
import pickle
import sys

import numpy as np
import scipy.sparse as sp

from data_io import save_dataset
from exceptions import CondenserError
from graph_core import Dataset, FeatureMatrix, LabelVector, SparseGraph, SplitMasks

PARTS = ('x', 'y', 'tx', 'ty', 'allx', 'ally', 'graph')


def _load_part(raw_dir, name, part):
    with open(os.path.join(raw_dir, f"ind.{name}.{part}"), 'rb') as f:
        return pickle.load(f, encoding='latin1')


def _load_test_index(raw_dir, name):
    with open(os.path.join(raw_dir, f"ind.{name}.test.index"), encoding='ascii') as f:
        return np.array([int(line) for line in f if line.strip()], dtype=np.int64)


def load_planetoid(raw_dir, name):
    """Assemble the full graph in node-id order; test rows are scattered by test.index"""
    x, y, tx, ty, allx, ally, adjacency = (_load_part(raw_dir, name, p) for p in PARTS)
    test_index = _load_test_index(raw_dir, name)
    test_sorted = np.sort(test_index)

    tx = sp.lil_matrix(tx)
    ty = np.asarray(ty)
    span = test_sorted[-1] - test_sorted[0] + 1
    if span > tx.shape[0]:
        # citeseer lists isolated test nodes that have no row in tx
        print(f"⚠️  {span - tx.shape[0]} test ids have no features; padding with zeros")
        tx_full = sp.lil_matrix((span, tx.shape[1]))
        tx_full[test_sorted - test_sorted[0], :] = tx
        ty_full = np.zeros((span, ty.shape[1]))
        ty_full[test_sorted - test_sorted[0], :] = ty
        tx, ty = tx_full, ty_full

    features = sp.vstack([sp.lil_matrix(allx), tx]).tolil()
    features[test_index, :] = features[test_sorted, :]
    onehot = np.vstack([np.asarray(ally), ty])
    onehot[test_index, :] = onehot[test_sorted, :]

    n = features.shape[0]
    unlabeled = int(np.sum(onehot.sum(axis=1) == 0))
    if unlabeled:
        print(f"⚠️  {unlabeled} nodes carry no label; assigning class 0")
    labels = onehot.argmax(axis=1)

    src, dst = [], []
    for i, neighbors in adjacency.items():
        for j in neighbors:
            if i < n and j < n and i != j:
                src.append(i)
                dst.append(j)
    graph = SparseGraph.from_edges(n, src, dst, symmetrize=True)

    num_train = len(np.asarray(y))
    splits = SplitMasks(train=np.arange(num_train),
                        val=np.arange(num_train, num_train + 500),
                        test=test_sorted)
    return Dataset(name, graph, FeatureMatrix(features.toarray().astype(np.float32)),
                   LabelVector(labels, onehot.shape[1]), splits)


def row_normalize(ds):
    x = ds.features.data.astype(np.float64)
    sums = x.sum(axis=1, keepdims=True)
    sums[sums == 0] = 1.0
    return Dataset(ds.name, ds.graph, FeatureMatrix((x / sums).astype(np.float32)), ds.labels, ds.splits)


def convert(raw_dir, name, out, normalize_features=False):
    try:
        ds = load_planetoid(raw_dir, name)
        if normalize_features:
            ds = row_normalize(ds)
        save_dataset(ds, out, extra_meta={'source': 'planetoid', 'features_row_normalized': normalize_features})
    except (OSError, pickle.UnpicklingError) as e:
        print(f"❌ Cannot read Planetoid files for {name}: {e}")
        return False
    except CondenserError as e:
        print(f"❌ {type(e).__name__}: {e}")
        return False

    print(f"✅ Nodes: {ds.num_nodes}, features: {ds.num_features}, classes: {ds.num_classes}")
    print(f"✅ Undirected edges: {ds.graph.num_undirected_edges}")
    print(f"✅ Splits: train {len(ds.splits.train)}, val {len(ds.splits.val)}, test {len(ds.splits.test)}")
    print(f"✅ Written to {out}")
    return True


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument('raw_dir', help='directory holding the ind.<name>.* files')
    parser.add_argument('name', help='cora, citeseer or pubmed')
    parser.add_argument('out', help='dataset directory to write')
    parser.add_argument('--row-normalize', action='store_true', help='divide each feature row by its sum')
    args = parser.parse_args()

    print("=== Planetoid Conversion ===")
    success = convert(args.raw_dir, args.name.lower(), args.out, args.row_normalize)
    if success:
        print("\n🎉 Run verify_dataset.py on the output before condensing")
    sys.exit(0 if success else 1)
