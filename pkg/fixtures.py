"""Synthetic datasets for tests and demos."""
import numpy as np

from graph_core import Dataset, FeatureMatrix, LabelVector, SparseGraph, SplitMasks

FIXTURES = ('two-clique', 'random')


def _stratified_splits(labels: np.ndarray, train_per_class: int, val_per_class: int,
                       rng: np.random.Generator) -> SplitMasks:
    train, val, test = [], [], []
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        train.append(members[:train_per_class])
        val.append(members[train_per_class:train_per_class + val_per_class])
        test.append(members[train_per_class + val_per_class:])
    return SplitMasks(np.concatenate(train), np.concatenate(val), np.concatenate(test))


def two_clique_dataset(clique_size: int = 20, num_features: int = 8, noise: float = 0.1,
                       seed: int = 0) -> Dataset:
    """Two disjoint cliques, one per class, with features on disjoint coordinates.

    Class c nodes carry ones on the c-th half of the feature vector plus
    Gaussian noise. Half of each class trains, a quarter validates, the rest tests.
    """
    rng = np.random.default_rng(seed)
    n = 2 * clique_size
    labels = np.repeat([0, 1], clique_size)
    src, dst = [], []
    for c in range(2):
        nodes = np.arange(c * clique_size, (c + 1) * clique_size)
        i, j = np.triu_indices(clique_size, k=1)
        src.append(nodes[i])
        dst.append(nodes[j])
    graph = SparseGraph.from_edges(n, np.concatenate(src), np.concatenate(dst))

    half = num_features // 2
    x = noise * rng.standard_normal((n, num_features))
    x[:clique_size, :half] += 1.0
    x[clique_size:, half:] += 1.0
    splits = _stratified_splits(labels, clique_size // 2, clique_size // 4, rng)
    return Dataset('two-clique', graph, FeatureMatrix(x.astype(np.float32)), LabelVector(labels, 2), splits)


def random_dataset(num_nodes: int = 60, num_features: int = 10, num_classes: int = 3,
                   edge_prob: float = 0.08, seed: int = 0) -> Dataset:
    """Erdos-Renyi graph with class-shifted Gaussian features; isolated nodes are allowed."""
    rng = np.random.default_rng(seed)
    labels = np.arange(num_nodes) % num_classes
    rng.shuffle(labels)
    i, j = np.triu_indices(num_nodes, k=1)
    keep = rng.random(len(i)) < edge_prob
    graph = SparseGraph.from_edges(num_nodes, i[keep], j[keep])
    centers = rng.standard_normal((num_classes, num_features))
    x = centers[labels] + 0.5 * rng.standard_normal((num_nodes, num_features))
    per_class = num_nodes // num_classes
    splits = _stratified_splits(labels, max(1, per_class // 3), max(1, per_class // 3), rng)
    return Dataset('random', graph, FeatureMatrix(x.astype(np.float32)), LabelVector(labels, num_classes), splits)


def make_fixture(kind: str, seed: int = 0) -> Dataset:
    if kind == 'two-clique':
        return two_clique_dataset(seed=seed)
    if kind == 'random':
        return random_dataset(seed=seed)
    raise ValueError(f"unknown fixture {kind!r}; expected one of {', '.join(FIXTURES)}")
