"""Coreset baselines: Random, Herding and K-Center node selection.

Each method picks, per class, as many training nodes as the label quota of
the condensation assigns to that class, then keeps the subgraph induced by
the picked nodes.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from condensation import class_quota
from config import TrainConfig
from exceptions import TooFewSyntheticNodes
from gnn_models import GnnSpec, SparseOperator, forward
from graph_core import (
    Dataset, FeatureMatrix, LabelVector, SparseGraph, SplitMasks, class_partition, induced_subgraph,
)
from trainer import EvalTarget, fit

logger = logging.getLogger(__name__)

METHODS = ('random', 'herding', 'kcenter')
SPACES = ('gcn', 'features')


@dataclass(frozen=True, eq=False)
class CoresetResult:
    """Selected original nodes (sorted ascending) and their induced subgraph."""
    indices: np.ndarray
    graph: SparseGraph
    features: FeatureMatrix
    labels: LabelVector
    method: str
    source: str = ''

    @property
    def num_nodes(self) -> int:
        return len(self.indices)

    def as_dataset(self, name: Optional[str] = None) -> Dataset:
        splits = SplitMasks(train=np.arange(self.num_nodes), val=np.array([], dtype=np.int64),
                            test=np.array([], dtype=np.int64))
        return Dataset(name or f"{self.source}-{self.method}", self.graph, self.features, self.labels, splits)


def _quota(ds: Dataset, n_prime: int) -> np.ndarray:
    return class_quota(class_partition(ds.labels, ds.splits.train), n_prime)


def _result(ds: Dataset, selected: np.ndarray, method: str) -> CoresetResult:
    selected = np.sort(np.asarray(selected, dtype=np.int64))
    logger.info(f"{method} coreset: {len(selected)} of {len(ds.splits.train)} training nodes")
    return CoresetResult(
        indices=selected,
        graph=induced_subgraph(ds.graph, selected),
        features=FeatureMatrix(ds.features.data[selected]),
        labels=LabelVector(ds.labels.labels[selected], ds.num_classes),
        method=method,
        source=ds.name,
    )


def herding_order(embeddings: np.ndarray, k: int) -> np.ndarray:
    """Greedy picks whose running mean stays closest to the mean of all rows.

    Returns row positions in pick order; ties go to the lowest position.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    target = emb.mean(axis=0)
    available = np.ones(len(emb), dtype=bool)
    running = np.zeros(emb.shape[1])
    picks = []
    for t in range(min(k, len(emb))):
        candidates = np.flatnonzero(available)
        means = (running + emb[candidates]) / (t + 1)
        gaps = np.sum((means - target) ** 2, axis=1)
        best = candidates[int(np.argmin(gaps))]
        picks.append(best)
        available[best] = False
        running += emb[best]
    return np.array(picks, dtype=np.int64)


def kcenter_order(embeddings: np.ndarray, k: int) -> np.ndarray:
    """Farthest-point greedy started from the row nearest the mean."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if k <= 0 or len(emb) == 0:
        return np.array([], dtype=np.int64)
    start = int(np.argmin(np.sum((emb - emb.mean(axis=0)) ** 2, axis=1)))
    picks = [start]
    nearest = np.sqrt(np.sum((emb - emb[start]) ** 2, axis=1))
    nearest[start] = -np.inf
    for _ in range(min(k, len(emb)) - 1):
        best = int(np.argmax(nearest))
        picks.append(best)
        nearest = np.minimum(nearest, np.sqrt(np.sum((emb - emb[best]) ** 2, axis=1)))
        nearest[picks] = -np.inf
    return np.array(picks, dtype=np.int64)


def _select_per_class(ds: Dataset, n_prime: int, pick: Callable[[np.ndarray, int], np.ndarray]) -> np.ndarray:
    partition = class_partition(ds.labels, ds.splits.train)
    quota = _quota(ds, n_prime)
    short = [c for c, members in enumerate(partition.members) if quota[c] > len(members)]
    if short:
        raise TooFewSyntheticNodes(f"classes {short} have fewer training nodes than their quota of {n_prime}")
    chosen = [members[pick(members, int(quota[c]))] for c, members in enumerate(partition.members)
              if quota[c] > 0]
    return np.concatenate(chosen)


def select_random(ds: Dataset, n_prime: int, seed: int) -> CoresetResult:
    """Class-stratified uniform sample without replacement."""
    rng = np.random.default_rng(seed)
    selected = _select_per_class(ds, n_prime, lambda members, k: rng.choice(len(members), size=k, replace=False))
    return _result(ds, selected, 'random')


def select_herding(ds: Dataset, n_prime: int, embeddings: FeatureMatrix, seed: int = 0) -> CoresetResult:
    """Per-class herding on ``embeddings``; deterministic, ``seed`` is unused."""
    selected = _select_per_class(ds, n_prime, lambda members, k: herding_order(embeddings.data[members], k))
    return _result(ds, selected, 'herding')


def select_kcenter(ds: Dataset, n_prime: int, embeddings: FeatureMatrix, seed: int = 0) -> CoresetResult:
    """Per-class K-Center greedy on ``embeddings``; deterministic, ``seed`` is unused."""
    selected = _select_per_class(ds, n_prime, lambda members, k: kcenter_order(embeddings.data[members], k))
    return _result(ds, selected, 'kcenter')


def reference_embeddings(ds: Dataset, cfg: TrainConfig, space: str = 'gcn') -> FeatureMatrix:
    """Node representations the embedding-space methods select in.

    ``gcn``: a GCN trained on the original training split, read before its
    classifier layer. ``features``: the raw node features.
    """
    if space == 'features':
        return ds.features
    if space != 'gcn':
        raise ValueError(f"unknown embedding space {space!r}")
    spec = GnnSpec(arch='gcn', layers=cfg.layers, hidden=cfg.hidden, dropout=cfg.dropout)
    operator = SparseOperator(ds.graph)
    val = EvalTarget.from_dataset(ds, 'val', operator)
    fitted = fit(spec, operator, ds.features, ds.labels, val, cfg, train_mask=ds.splits.train)
    embeddings = forward(spec, fitted.params, operator, val.features, output='embeddings')
    logger.info(f"reference GCN selected at epoch {fitted.best_epoch}")
    return FeatureMatrix(embeddings.data)


def select(method: str, ds: Dataset, n_prime: int, seed: int,
           embeddings: Optional[FeatureMatrix] = None) -> CoresetResult:
    if method == 'random':
        return select_random(ds, n_prime, seed)
    if embeddings is None:
        raise ValueError(f"{method} needs embeddings")
    selectors: Dict[str, Callable] = {'herding': select_herding, 'kcenter': select_kcenter}
    if method not in selectors:
        raise ValueError(f"unknown coreset method {method!r}")
    return selectors[method](ds, n_prime, embeddings, seed)
