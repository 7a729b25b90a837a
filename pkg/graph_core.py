"""Graph containers and graph math: CSR adjacency, feature and label
containers, symmetric normalization, class partitions and receptive fields.

All containers are immutable after construction and validate their
invariants eagerly, so a value that exists is a valid value.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from config import Config
from exceptions import (
    AsymmetricInput, EmptyMask, InvalidGraph, ShapeError, TooLargeToDensify, ZeroDegree,
)

logger = logging.getLogger(__name__)


def _index_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.int64).reshape(-1)
    if arr.size and arr.min() < 0:
        raise InvalidGraph(f"{name} contains negative indices")
    return arr


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """Canonical CSR adjacency. ``values`` is None for an unweighted graph."""
    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, 'row_offsets', np.asarray(self.row_offsets, dtype=np.int64))
        object.__setattr__(self, 'col_indices', np.asarray(self.col_indices, dtype=np.int64))
        if self.values is not None:
            object.__setattr__(self, 'values', np.asarray(self.values, dtype=np.float32))
        n = self.num_nodes
        offsets, cols = self.row_offsets, self.col_indices
        if len(offsets) != n + 1 or offsets[0] != 0:
            raise InvalidGraph("row_offsets must have num_nodes + 1 entries starting at 0")
        if np.any(np.diff(offsets) < 0):
            raise InvalidGraph("row_offsets must be non-decreasing")
        if offsets[n] != len(cols):
            raise InvalidGraph("row_offsets[num_nodes] must equal len(col_indices)")
        if len(cols) and (cols.min() < 0 or cols.max() >= n):
            raise InvalidGraph("col_indices out of range")
        # strictly increasing inside each row: a decrease is only allowed at row starts
        if len(cols) > 1:
            step = np.diff(cols)
            row_start = np.zeros(len(cols), dtype=bool)
            row_start[offsets[:-1][offsets[:-1] < len(cols)]] = True
            if np.any((step <= 0) & ~row_start[1:]):
                raise InvalidGraph("col_indices must be strictly increasing within each row")
        if self.values is not None:
            if len(self.values) != len(cols):
                raise InvalidGraph("values must align with col_indices")
            if not np.all(np.isfinite(self.values)):
                raise InvalidGraph("edge weights must be finite")

    @classmethod
    def from_edges(cls, num_nodes: int, src: Sequence[int], dst: Sequence[int],
                   weights: Optional[Sequence[float]] = None, symmetrize: bool = True) -> 'SparseGraph':
        """Build a canonical graph from an edge list.

        Duplicate entries collapse to one; with ``symmetrize`` every edge is
        mirrored and mirrored duplicates keep the larger weight.
        """
        src = _index_array(src, 'src')
        dst = _index_array(dst, 'dst')
        if len(src) != len(dst):
            raise InvalidGraph("src and dst must have equal length")
        if len(src) and max(src.max(), dst.max()) >= num_nodes:
            raise InvalidGraph("edge endpoint out of range")
        w = None if weights is None else np.asarray(weights, dtype=np.float32).reshape(-1)
        if w is not None and len(w) != len(src):
            raise InvalidGraph("weights must align with edges")

        if symmetrize:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
            if w is not None:
                w = np.concatenate([w, w])

        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        if len(src):
            first = np.ones(len(src), dtype=bool)
            first[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
            starts = np.flatnonzero(first)
            if w is not None:
                w = np.maximum.reduceat(w[order], starts).astype(np.float32)
            src, dst = src[starts], dst[starts]
        elif w is not None:
            w = w[:0]

        offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        np.add.at(offsets, src + 1, 1)
        return cls(num_nodes, np.cumsum(offsets), dst.astype(np.int64), w)

    @classmethod
    def from_scipy(cls, m: sp.spmatrix, weighted: bool = True) -> 'SparseGraph':
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        values = m.data.astype(np.float32) if weighted else None
        return cls(m.shape[0], m.indptr.astype(np.int64), m.indices.astype(np.int64), values)

    def to_scipy(self, dtype=np.float32) -> sp.csr_matrix:
        return sp.csr_matrix((self.weights.astype(dtype), self.col_indices, self.row_offsets),
                             shape=(self.num_nodes, self.num_nodes))

    @property
    def weights(self) -> np.ndarray:
        if self.values is None:
            return np.ones(len(self.col_indices), dtype=np.float32)
        return self.values

    @property
    def num_entries(self) -> int:
        return len(self.col_indices)

    @property
    def num_undirected_edges(self) -> int:
        loops = int(np.sum(self.row_ids() == self.col_indices))
        return (self.num_entries - loops) // 2 + loops

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_nodes, dtype=np.int64), np.diff(self.row_offsets))

    def neighbors(self, i: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[i]:self.row_offsets[i + 1]]

    def has_self_loops(self) -> bool:
        return bool(np.any(self.row_ids() == self.col_indices))

    def is_symmetric(self, tol: float = 0.0) -> bool:
        m = self.to_scipy(np.float64)
        diff = abs(m - m.T)
        return diff.nnz == 0 or diff.max() <= tol

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseGraph):
            return NotImplemented
        return (self.num_nodes == other.num_nodes
                and np.array_equal(self.row_offsets, other.row_offsets)
                and np.array_equal(self.col_indices, other.col_indices)
                and np.array_equal(self.weights, other.weights))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Dense row-major float32 matrix (node features, or a densified adjacency)."""
    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ShapeError(f"feature matrix must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature matrix contains non-finite entries")
        object.__setattr__(self, 'data', arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LabelVector:
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        arr = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if arr.size and (arr.min() < 0 or arr.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, 'labels', arr)

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelVector):
            return NotImplemented
        return self.num_classes == other.num_classes and np.array_equal(self.labels, other.labels)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SplitMasks:
    """Sorted, pairwise disjoint node index sets."""
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ('train', 'val', 'test'):
            arr = np.unique(np.asarray(getattr(self, name), dtype=np.int64).reshape(-1))
            object.__setattr__(self, name, arr)
        if len(self.train) == 0:
            raise EmptyMask("training split is empty")
        pairs = ((self.train, self.val), (self.train, self.test), (self.val, self.test))
        if any(np.intersect1d(a, b).size for a, b in pairs):
            raise ValueError("train/val/test splits must be disjoint")

    def check_bounds(self, num_nodes: int):
        for name in ('train', 'val', 'test'):
            arr = getattr(self, name)
            if arr.size and (arr[0] < 0 or arr[-1] >= num_nodes):
                raise ValueError(f"{name} split refers to nodes outside [0, {num_nodes})")

    def __eq__(self, other) -> bool:
        if not isinstance(other, SplitMasks):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in ('train', 'val', 'test'))

    __hash__ = None


@dataclass(frozen=True)
class ClassPartition:
    """Per-class node sets V_c of a mask and their ratios r_c.

    ``members[c]`` is empty for classes absent from the mask.
    """
    members: Tuple[np.ndarray, ...]
    ratios: np.ndarray

    @property
    def num_classes(self) -> int:
        return len(self.members)

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(m) for m in self.members], dtype=np.int64)

    def nonempty_classes(self) -> List[int]:
        return [c for c, m in enumerate(self.members) if len(m)]


@dataclass(frozen=True, eq=False)
class Dataset:
    """A node-classification graph with its public splits."""
    name: str
    graph: SparseGraph
    features: FeatureMatrix
    labels: LabelVector
    splits: SplitMasks

    def __post_init__(self):
        n = self.graph.num_nodes
        if self.features.rows != n:
            raise ShapeError(f"features have {self.features.rows} rows for {n} nodes")
        if len(self.labels) != n:
            raise ShapeError(f"{len(self.labels)} labels for {n} nodes")
        self.splits.check_bounds(n)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def num_classes(self) -> int:
        return self.labels.num_classes

    @property
    def num_features(self) -> int:
        return self.features.cols


def normalize_adjacency(g: SparseGraph, add_self_loops: bool = True) -> SparseGraph:
    """D^-1/2 (A + I) D^-1/2 of a symmetric graph.

    With ``add_self_loops`` the diagonal is set to 1, replacing any stored
    self-loop weight, so the operation is idempotent on graphs that already
    carry unit self-loops.
    """
    if not g.is_symmetric():
        raise AsymmetricInput("normalize_adjacency requires a symmetric graph")
    m = g.to_scipy(np.float64).tolil() if add_self_loops else g.to_scipy(np.float64)
    if add_self_loops:
        m.setdiag(1.0)
        m = m.tocsr()
    degrees = np.asarray(m.sum(axis=1)).reshape(-1)
    bad = np.flatnonzero(degrees <= 0)
    if bad.size:
        raise ZeroDegree(int(bad[0]))
    inv_sqrt = 1.0 / np.sqrt(degrees)
    coo = m.tocoo()
    # the product s_i * s_j is symmetric in (i, j), so the output is exactly symmetric
    data = coo.data * (inv_sqrt[coo.row] * inv_sqrt[coo.col])
    return SparseGraph.from_scipy(sp.csr_matrix((data, (coo.row, coo.col)), shape=m.shape))


def row_normalize_adjacency(g: SparseGraph) -> SparseGraph:
    """D^-1 A without self-loops: the neighbour-mean operator. Isolated rows stay zero."""
    m = g.to_scipy(np.float64).tolil()
    m.setdiag(0.0)
    m = m.tocsr()
    m.eliminate_zeros()
    degrees = np.asarray(m.sum(axis=1)).reshape(-1)
    inv = np.divide(1.0, degrees, out=np.zeros_like(degrees), where=degrees > 0)
    return SparseGraph.from_scipy(sp.diags(inv) @ m)


def class_partition(y: LabelVector, mask: Sequence[int]) -> ClassPartition:
    mask = np.unique(np.asarray(mask, dtype=np.int64))
    if mask.size == 0:
        raise EmptyMask("cannot partition an empty mask")
    masked_labels = y.labels[mask]
    members = tuple(mask[masked_labels == c] for c in range(y.num_classes))
    ratios = np.array([len(m) for m in members], dtype=np.float64) / mask.size
    return ClassPartition(members=members, ratios=ratios)


def receptive_field(g: SparseGraph, i: int, L: int) -> np.ndarray:
    """Sorted indices of every node within ``L`` hops of ``i``, ``i`` included."""
    if not 0 <= i < g.num_nodes:
        raise IndexError(f"node {i} out of range")
    if L < 0:
        raise ValueError("hop count must be >= 0")
    visited = np.zeros(g.num_nodes, dtype=bool)
    visited[i] = True
    frontier = np.array([i], dtype=np.int64)
    for _ in range(L):
        if frontier.size == 0:
            break
        reached = np.concatenate([g.neighbors(v) for v in frontier])
        frontier = np.unique(reached[~visited[reached]])
        visited[frontier] = True
    return np.flatnonzero(visited)


def receptive_field_layers(g: SparseGraph, targets: Sequence[int], L: int) -> List[np.ndarray]:
    """Nested hop sets F_0 = targets, F_k = F_{k-1} followed by its new neighbours.

    Each set is a prefix of the next, so rows of a layer's output line up with
    the leading rows of the next layer's input.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if np.unique(targets).size != targets.size:
        raise ValueError("targets must be unique")
    adjacency = g.to_scipy()
    visited = np.zeros(g.num_nodes, dtype=bool)
    visited[targets] = True
    layers = [targets]
    for _ in range(L):
        reached = np.unique(adjacency[layers[-1]].indices)
        new = reached[~visited[reached]]
        visited[new] = True
        layers.append(np.concatenate([layers[-1], new]))
    return layers


def densify(g: SparseGraph, cap: Optional[int] = None) -> FeatureMatrix:
    cap = Config.DENSIFY_CAP if cap is None else cap
    if g.num_nodes > cap:
        raise TooLargeToDensify(f"{g.num_nodes} nodes exceeds the dense cap of {cap}")
    return FeatureMatrix(g.to_scipy(np.float32).toarray())


def sparsify(m: FeatureMatrix, threshold: float = 0.0) -> SparseGraph:
    """Inverse of :func:`densify`: keeps entries with magnitude above ``threshold``."""
    if m.rows != m.cols:
        raise ShapeError(f"adjacency must be square, got {m.rows}x{m.cols}")
    dense = m.data
    rows, cols = np.nonzero(np.abs(dense) > threshold)
    return SparseGraph.from_edges(m.rows, rows, cols, dense[rows, cols], symmetrize=False)


def induced_subgraph(g: SparseGraph, nodes: Sequence[int]) -> SparseGraph:
    """Edges among ``nodes`` (sorted, unique), relabelled to positions 0..k-1."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if np.any(np.diff(nodes) <= 0):
        raise ValueError("nodes must be sorted and unique")
    sub = g.to_scipy()[nodes][:, nodes]
    return SparseGraph.from_scipy(sub, weighted=g.values is not None)
