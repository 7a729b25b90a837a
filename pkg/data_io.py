"""Dataset directory format.

A dataset directory holds

    meta.json           name, counts, directedness, file names and sha256 sums
    edges.tsv           "src<TAB>dst[<TAB>weight]" per line, 0-based
    features.bin        little-endian float32, row-major, no header
    labels.txt          one class index per line
    split_train.txt     one node index per line (also split_val, split_test)

Condensed graphs add condense_meta.json, coresets coreset_meta.json.
Loading canonicalizes the graph (symmetrized, deduplicated, sorted); every
malformed input raises a DataFormatError subclass carrying its location.
"""
import csv
import json
import logging
import math
import os
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from autodiff import Tensor
from condensation import CondensedGraph
from config import VERSION, CondenseConfig
from exceptions import (
    ChecksumMismatch, ConfigError, CountMismatch, DataFormatError, DatasetIOError, EmptyMask, InvalidGraph,
    MalformedFile,
)
from gnn_models import GnnParams, GnnSpec, SparseOperator, forward
from graph_core import Dataset, FeatureMatrix, LabelVector, SparseGraph, SplitMasks
from validation import REQUIRED_DATASET_FILES, generate_file_hash, validate_dataset_dir

logger = logging.getLogger(__name__)

META_FILE = 'meta.json'
CONDENSE_META_FILE = 'condense_meta.json'
CORESET_META_FILE = 'coreset_meta.json'
_META_KEYS = ('name', 'num_nodes', 'num_features', 'num_classes')


def _read_lines(path: str) -> List[str]:
    try:
        with open(path, encoding='ascii') as f:
            return f.read().splitlines()
    except UnicodeDecodeError as e:
        raise MalformedFile(path, 1, f"non-ASCII content: {e}") from e
    except OSError as e:
        raise DatasetIOError(f"cannot read {path}: {e}") from e


def _read_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise MalformedFile(path, e.lineno, e.msg) from e
    except OSError as e:
        raise DatasetIOError(f"cannot read {path}: {e}") from e


def _write_json(path: str, payload: Dict[str, Any]):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')


def _parse_index(token: str, path: str, line: int, upper: int, what: str) -> int:
    try:
        value = int(token)
    except ValueError:
        raise MalformedFile(path, line, f"{what} {token!r} is not an integer") from None
    if not 0 <= value < upper:
        raise MalformedFile(path, line, f"{what} {value} outside [0, {upper})")
    return value


def _read_edges(path: str, num_nodes: int) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    src, dst, weights = [], [], []
    weighted = False
    for number, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            raise MalformedFile(path, number, "blank line")
        fields = line.split('\t')
        if len(fields) not in (2, 3):
            raise MalformedFile(path, number, f"expected 2 or 3 tab-separated fields, got {len(fields)}")
        src.append(_parse_index(fields[0], path, number, num_nodes, 'source node'))
        dst.append(_parse_index(fields[1], path, number, num_nodes, 'target node'))
        weight = 1.0
        if len(fields) == 3:
            weighted = True
            try:
                weight = float(fields[2])
            except ValueError:
                raise MalformedFile(path, number, f"weight {fields[2]!r} is not a number") from None
            if not math.isfinite(weight):
                raise MalformedFile(path, number, "weight is not finite")
        weights.append(weight)
    w = np.array(weights, dtype=np.float32) if weighted else None
    return np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), w


def _read_features(path: str, rows: int, cols: int) -> FeatureMatrix:
    expected = rows * cols * 4
    actual = os.path.getsize(path)
    if actual != expected:
        raise CountMismatch(f"{path}: {actual} bytes, expected {rows} x {cols} float32 = {expected}")
    data = np.fromfile(path, dtype='<f4').reshape(rows, cols)
    bad_rows = np.flatnonzero(~np.all(np.isfinite(data), axis=1))
    if bad_rows.size:
        # binary file: the reported "line" is the 1-based feature row
        raise MalformedFile(path, int(bad_rows[0]) + 1, "non-finite feature value")
    return FeatureMatrix(data.astype(np.float32))


def _read_labels(path: str, num_nodes: int, num_classes: int) -> LabelVector:
    lines = _read_lines(path)
    if len(lines) != num_nodes:
        raise CountMismatch(f"{path}: {len(lines)} labels for {num_nodes} nodes")
    labels = [_parse_index(line.strip(), path, number, num_classes, 'label')
              for number, line in enumerate(lines, start=1)]
    return LabelVector(np.array(labels, dtype=np.int64), num_classes)


def _read_split(path: str, num_nodes: int) -> np.ndarray:
    return np.array([_parse_index(line.strip(), path, number, num_nodes, 'node index')
                     for number, line in enumerate(_read_lines(path), start=1)], dtype=np.int64)


def _verify_checksums(path: str, meta: Dict[str, Any]):
    for role, entry in meta.get('files', {}).items():
        expected = entry.get('sha256')
        if not expected:
            continue
        file_path = os.path.join(path, entry.get('path', REQUIRED_DATASET_FILES.get(role, role)))
        try:
            actual = generate_file_hash(file_path)
        except OSError as e:
            raise DatasetIOError(f"cannot hash {file_path}: {e}") from e
        if actual != expected:
            raise ChecksumMismatch(file_path, expected, actual)


def read_meta(path: str) -> Dict[str, Any]:
    meta_path = os.path.join(path, META_FILE)
    meta = _read_json(meta_path)
    if not isinstance(meta, dict):
        raise MalformedFile(meta_path, 1, "expected a JSON object")
    missing = [key for key in _META_KEYS if key not in meta]
    if missing:
        raise MalformedFile(meta_path, 1, f"missing keys: {', '.join(missing)}")
    for key in _META_KEYS[1:]:
        if not isinstance(meta[key], int) or isinstance(meta[key], bool) or meta[key] < 0:
            raise MalformedFile(meta_path, 1, f"{key} must be a non-negative integer")
    _check_file_entries(meta_path, meta.get('files', {}))
    return meta


def _check_file_entries(meta_path: str, files: Any):
    if not isinstance(files, dict):
        raise MalformedFile(meta_path, 1, "'files' must map roles to {path, sha256} objects")
    for role, entry in files.items():
        if not isinstance(entry, dict):
            raise MalformedFile(meta_path, 1, f"files.{role} must be an object, got {type(entry).__name__}")
        for key in ('path', 'sha256'):
            if key in entry and not isinstance(entry[key], str):
                raise MalformedFile(meta_path, 1, f"files.{role}.{key} must be a string")


def load_dataset(path: str, verify_checksums: bool = True) -> Dataset:
    """Load and canonicalize a dataset directory."""
    is_valid, error = validate_dataset_dir(path)
    if not is_valid:
        raise DatasetIOError(error)
    meta = read_meta(path)
    if verify_checksums:
        _verify_checksums(path, meta)

    n, d, c = meta['num_nodes'], meta['num_features'], meta['num_classes']
    files = {role: os.path.join(path, name) for role, name in REQUIRED_DATASET_FILES.items()}
    src, dst, weights = _read_edges(files['edges'], n)
    features = _read_features(files['features'], n, d)
    try:
        labels = _read_labels(files['labels'], n, c)
        graph = SparseGraph.from_edges(n, src, dst, weights, symmetrize=True)
        splits = SplitMasks(train=_read_split(files['split_train'], n),
                            val=_read_split(files['split_val'], n),
                            test=_read_split(files['split_test'], n))
        ds = Dataset(meta['name'], graph, features, labels, splits)
    except (ValueError, InvalidGraph, EmptyMask) as e:
        raise DataFormatError(f"{path}: {e}") from e
    logger.info(f"loaded {ds.name}: {n} nodes, {graph.num_undirected_edges} edges, "
                f"{d} features, {c} classes")
    return ds


def format_weight(w: float) -> str:
    """Shortest decimal that reads back as the same float32."""
    return np.format_float_positional(np.float32(w), unique=True, trim='-')


def _edge_lines(g: SparseGraph) -> Tuple[List[str], bool]:
    rows, cols = g.row_ids(), g.col_indices
    symmetric = g.is_symmetric()
    keep = rows <= cols if symmetric else np.ones(len(rows), dtype=bool)
    if g.values is None:
        lines = [f"{i}\t{j}" for i, j in zip(rows[keep], cols[keep])]
    else:
        lines = [f"{i}\t{j}\t{format_weight(w)}" for i, j, w in zip(rows[keep], cols[keep], g.values[keep])]
    return lines, not symmetric


def _write_lines(path: str, lines: List[str]):
    with open(path, 'w', encoding='ascii', newline='\n') as f:
        for line in lines:
            f.write(line + '\n')


def save_dataset(ds: Dataset, path: str, extra_meta: Optional[Dict[str, Any]] = None):
    """Write ``ds`` in the directory format; ``load_dataset`` reads it back unchanged."""
    files = {role: os.path.join(path, name) for role, name in REQUIRED_DATASET_FILES.items()}
    try:
        os.makedirs(path, exist_ok=True)
        edge_lines, directed = _edge_lines(ds.graph)
        _write_lines(files['edges'], edge_lines)
        ds.features.data.astype('<f4').tofile(files['features'])
        _write_lines(files['labels'], [str(int(v)) for v in ds.labels.labels])
        for split in ('train', 'val', 'test'):
            _write_lines(files[f'split_{split}'], [str(int(v)) for v in getattr(ds.splits, split)])

        meta = {
            'name': ds.name,
            'num_nodes': ds.num_nodes,
            'num_features': ds.num_features,
            'num_classes': ds.num_classes,
            'directed': directed,
            'files': {role: {'path': REQUIRED_DATASET_FILES[role], 'sha256': generate_file_hash(file_path)}
                      for role, file_path in files.items()},
        }
        meta.update(extra_meta or {})
        _write_json(os.path.join(path, META_FILE), meta)
    except OSError as e:
        raise DatasetIOError(f"cannot write dataset to {path}: {e}") from e
    logger.debug(f"saved {ds.name} to {path}")


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat()


def save_condensed(cg: CondensedGraph, path: str):
    """Save a CondensedGraph plus condense_meta.json (config, losses, version)."""
    save_dataset(cg.as_dataset(), path)
    try:
        _write_json(os.path.join(path, CONDENSE_META_FILE), {
            'version': VERSION,
            'variant': cg.variant,
            'source': cg.source,
            'config': cg.config.to_dict(),
            'final_loss': cg.final_loss,
            'loss_history': list(cg.loss_history),
            'num_nodes': cg.num_nodes,
            'created': _timestamp(),
        })
    except OSError as e:
        raise DatasetIOError(f"cannot write {CONDENSE_META_FILE} to {path}: {e}") from e


def read_condense_meta(path: str) -> Optional[Dict[str, Any]]:
    meta_path = os.path.join(path, CONDENSE_META_FILE)
    if not os.path.isfile(meta_path):
        return None
    return _read_json(meta_path)


def load_condensed(path: str) -> CondensedGraph:
    """Inverse of :func:`save_condensed`."""
    meta = read_condense_meta(path)
    if meta is None:
        raise DatasetIOError(f"{path} has no {CONDENSE_META_FILE}")
    if not isinstance(meta, dict):
        raise MalformedFile(os.path.join(path, CONDENSE_META_FILE), 1, "expected a JSON object")
    ds = load_dataset(path)
    try:
        cfg = CondenseConfig(**meta['config'])
    except (KeyError, TypeError, ConfigError) as e:
        raise MalformedFile(os.path.join(path, CONDENSE_META_FILE), 1, f"bad config: {e}") from e
    return CondensedGraph(graph=ds.graph, features=ds.features, labels=ds.labels, config=cfg,
                          final_loss=float(meta.get('final_loss', float('nan'))),
                          loss_history=list(meta.get('loss_history', [])), source=meta.get('source', ''))


def save_coreset(result, path: str):
    """Save a CoresetResult plus coreset_meta.json (method, selected original indices)."""
    save_dataset(result.as_dataset(), path)
    try:
        _write_json(os.path.join(path, CORESET_META_FILE), {
            'version': VERSION,
            'method': result.method,
            'source': result.source,
            'indices': [int(i) for i in result.indices],
            'created': _timestamp(),
        })
    except OSError as e:
        raise DatasetIOError(f"cannot write {CORESET_META_FILE} to {path}: {e}") from e


def export_embeddings(params: GnnParams, spec: GnnSpec, graph: SparseGraph, features: FeatureMatrix,
                      labels: LabelVector, path: str) -> int:
    """Write one CSV row per node: node_id, label, e_0 .. e_{k-1}. Returns k."""
    embeddings = forward(spec, params, SparseOperator(graph), Tensor(features.data), output='embeddings').data
    width = embeddings.shape[1]
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', newline='', encoding='ascii') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(['node_id', 'label'] + [f'e_{k}' for k in range(width)])
            for node, (label, row) in enumerate(zip(labels.labels, embeddings)):
                writer.writerow([node, int(label)] + ['%.9g' % v for v in row])
    except OSError as e:
        raise DatasetIOError(f"cannot write embeddings to {path}: {e}") from e
    logger.info(f"exported {len(embeddings)} x {width} embeddings to {path}")
    return width


def write_metrics(report, path: str, extra: Optional[Dict[str, Any]] = None):
    """Serialize an EvalReport as metrics JSON."""
    payload = report.to_dict()
    payload.update(extra or {})
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        _write_json(path, payload)
    except OSError as e:
        raise DatasetIOError(f"cannot write metrics to {path}: {e}") from e
