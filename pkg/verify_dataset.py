#!/usr/bin/env python3
"""
Verify a dataset directory: checksums, counts and the canonical graph
"""

import sys

from data_io import load_dataset, read_meta
from exceptions import CondenserError


def verify_dataset(path, expected_nodes=None, expected_edges=None):
    """Load the directory the way the condenser does and report what it holds"""
    try:
        meta = read_meta(path)
        ds = load_dataset(path)
    except CondenserError as e:
        print(f"❌ {type(e).__name__}: {e}")
        return False

    checked = [name for name, entry in meta.get('files', {}).items() if entry.get('sha256')]
    print(f"✅ Dataset: {ds.name}")
    print(f"✅ Checksums verified: {', '.join(checked) if checked else 'none recorded'}")
    print(f"✅ Nodes: {ds.num_nodes}, features: {ds.num_features}, classes: {ds.num_classes}")
    print(f"✅ Undirected edges: {ds.graph.num_undirected_edges}")
    print(f"✅ Splits: train {len(ds.splits.train)}, val {len(ds.splits.val)}, test {len(ds.splits.test)}")

    ok = True
    if expected_nodes is not None and ds.num_nodes != expected_nodes:
        print(f"❌ Expected {expected_nodes} nodes, got {ds.num_nodes}")
        ok = False
    if expected_edges is not None and ds.graph.num_undirected_edges != expected_edges:
        print(f"❌ Expected {expected_edges} edges, got {ds.graph.num_undirected_edges}")
        ok = False
    if ds.graph.has_self_loops():
        print("⚠️  Graph stores self-loops (expected only for condensed graphs)")
    return ok


if __name__ == "__main__":
    if len(sys.argv) < 2:
        print("usage: verify_dataset.py DATASET_DIR [EXPECTED_NODES [EXPECTED_EDGES]]")
        sys.exit(2)
    expected = [int(v) for v in sys.argv[2:4]]
    print("=== Dataset Verification ===")
    success = verify_dataset(sys.argv[1], *expected)
    if success:
        print("\n🎉 Dataset is ready for condensation!")
    else:
        print("\n⚠️  Dataset verification failed!")
    sys.exit(0 if success else 1)
