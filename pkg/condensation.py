"""Graph condensation by per-class receptive-field distribution matching.

``condense`` learns synthetic features X' and an adjacency generator so that,
for every class, the mean embedding of the synthetic nodes under a class
adversary network matches the mean embedding of the original training nodes
of that class. Each epoch runs

  (a) ``inner_steps`` synthetic updates, alternating blocks of ``tau1`` feature
      steps and ``tau2`` generator steps, descending the weighted MMD;
  (b) ``adversary_steps`` ascent steps on every class adversary.

``condense_x`` is the graphless variant: A' is the identity and only X' is
learned.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

import autodiff as ad
from autodiff import Adam, SGD, Tape, Tensor
from config import ADJ_THRESHOLD, CondenseConfig
from exceptions import EmptyClassInMMD, EmptySourceClass, NumericError, TooFewSyntheticNodes
from gnn_models import (
    AdjGenParams, BlockOperator, DenseOperator, GnnParams, GnnSpec, IdentityOperator,
    PropagationOperator, SparseOperator, forward, generate_adjacency, init_adj_generator, init_params,
)
from graph_core import (
    ClassPartition, Dataset, FeatureMatrix, LabelVector, SparseGraph, SplitMasks, class_partition, sparsify,
)

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[int, float, float], None]


@dataclass(frozen=True, eq=False)
class CondensedGraph:
    """Synthetic graph with the provenance of the run that produced it."""
    graph: SparseGraph
    features: FeatureMatrix
    labels: LabelVector
    config: CondenseConfig
    final_loss: float
    loss_history: List[float] = field(default_factory=list)
    source: str = ''

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def variant(self) -> str:
        return self.config.variant

    def as_dataset(self, name: Optional[str] = None) -> Dataset:
        """Every condensed node is a labelled training node."""
        splits = SplitMasks(train=np.arange(self.num_nodes), val=np.array([], dtype=np.int64),
                            test=np.array([], dtype=np.int64))
        return Dataset(name or f"{self.source}-{self.variant}", self.graph, self.features, self.labels, splits)


def synthetic_node_count(num_nodes: int, ratio: float) -> int:
    """N' = round(r * N), halves rounded up."""
    return int(np.floor(ratio * num_nodes + 0.5))


def _derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _repair_empty_classes(counts: np.ndarray, nonempty: Sequence[int]) -> np.ndarray:
    # every class present in the source gets one node, taken from the largest class
    counts = counts.copy()
    for c in nonempty:
        if counts[c] == 0:
            donor = int(np.argmax(counts))
            counts[donor] -= 1
            counts[c] = 1
    return counts


def class_quota(partition: ClassPartition, n_prime: int) -> np.ndarray:
    """Largest-remainder apportionment of ``n_prime`` nodes over the class ratios.

    Remainder ties go to the lower class index.
    """
    nonempty = partition.nonempty_classes()
    if n_prime < len(nonempty):
        raise TooFewSyntheticNodes(f"{n_prime} synthetic nodes cannot cover {len(nonempty)} classes")
    exact = partition.ratios * n_prime
    counts = np.floor(exact).astype(np.int64)
    short = n_prime - int(counts.sum())
    order = sorted(range(len(counts)), key=lambda c: (-(exact[c] - counts[c]), c))
    for c in order[:short]:
        counts[c] += 1
    return _repair_empty_classes(counts, nonempty)


def sample_labels(y: LabelVector, train_mask: Sequence[int], n_prime: int, seed: int,
                  strategy: str = 'quota') -> LabelVector:
    """Synthetic labels Y', sorted by class.

    ``quota`` is deterministic; ``categorical`` draws each label i.i.d. from the
    class ratios and then repairs classes left empty.
    """
    partition = class_partition(y, train_mask)
    if strategy == 'quota':
        counts = class_quota(partition, n_prime)
    elif strategy == 'categorical':
        nonempty = partition.nonempty_classes()
        if n_prime < len(nonempty):
            raise TooFewSyntheticNodes(f"{n_prime} synthetic nodes cannot cover {len(nonempty)} classes")
        rng = np.random.default_rng(seed)
        draws = rng.choice(y.num_classes, size=n_prime, p=partition.ratios)
        counts = _repair_empty_classes(np.bincount(draws, minlength=y.num_classes), nonempty)
    else:
        raise ValueError(f"unknown label sampling strategy {strategy!r}")
    return LabelVector(np.repeat(np.arange(y.num_classes), counts), y.num_classes)


def init_features(x: FeatureMatrix, y: LabelVector, train_mask: Sequence[int],
                  yprime: LabelVector, seed: int) -> FeatureMatrix:
    """Copy each synthetic row from a random training node of the same class.

    Sources are drawn without replacement until a class is exhausted, then
    with replacement.
    """
    rng = np.random.default_rng(seed)
    partition = class_partition(y, train_mask)
    rows = np.empty(len(yprime), dtype=np.int64)
    for c in range(yprime.num_classes):
        slots = np.flatnonzero(yprime.labels == c)
        if slots.size == 0:
            continue
        source = partition.members[c]
        if source.size == 0:
            raise EmptySourceClass(f"class {c} has no training nodes to initialize from")
        picked = rng.permutation(source)[:slots.size]
        if slots.size > source.size:
            extra = rng.choice(source, size=slots.size - source.size, replace=True)
            picked = np.concatenate([picked, extra])
        rows[slots] = picked
    return FeatureMatrix(x.data[rows])


def class_mmd_term(emb_t: Tensor, idx_t: Sequence[int], emb_s: Tensor, idx_s: Sequence[int],
                   weight: float) -> Tensor:
    """r_c * ||mean_t - mean_s||^2 for one class."""
    return ad.scale(ad.sq_l2_diff(ad.masked_row_mean(emb_t, idx_t), ad.masked_row_mean(emb_s, idx_s)), weight)


def mmd_loss(emb_t: Tensor, emb_s: Tensor, part_t: ClassPartition, part_s: ClassPartition) -> Tensor:
    """Sum over classes of r_c * ||mean_c(emb_t) - mean_c(emb_s)||^2, r_c from ``part_t``."""
    if part_t.num_classes != part_s.num_classes:
        raise EmptyClassInMMD("partitions cover different class sets")
    total = None
    for c in range(part_t.num_classes):
        in_t, in_s = len(part_t.members[c]), len(part_s.members[c])
        if in_t == 0 and in_s == 0:
            continue
        if in_t == 0 or in_s == 0:
            side = 'original' if in_t == 0 else 'synthetic'
            raise EmptyClassInMMD(f"class {c} is empty on the {side} side")
        term = class_mmd_term(emb_t, part_t.members[c], emb_s, part_s.members[c], float(part_t.ratios[c]))
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise EmptyClassInMMD("no class is populated on both sides")
    return total


class _Condenser:
    """State of one condensation run."""

    def __init__(self, ds: Dataset, cfg: CondenseConfig, learn_structure: bool):
        self.ds = ds
        self.cfg = cfg
        self.learn_structure = learn_structure
        self.spec = GnnSpec(arch=cfg.embed_arch, layers=cfg.layers, hidden=cfg.hidden)

        self.n_prime = synthetic_node_count(ds.num_nodes, cfg.ratio)
        self.part_t = class_partition(ds.labels, ds.splits.train)
        self.classes = self.part_t.nonempty_classes()
        self.yprime = sample_labels(ds.labels, ds.splits.train, self.n_prime,
                                    _derive_seed(cfg.seed, 0), cfg.label_sampling)
        self.part_s = class_partition(self.yprime, np.arange(self.n_prime))

        x0 = init_features(ds.features, ds.labels, ds.splits.train, self.yprime, _derive_seed(cfg.seed, 1))
        self.xprime = Tensor(x0.data)
        self.x = Tensor(ds.features.data)
        self.generator: Optional[AdjGenParams] = None
        if learn_structure:
            self.generator = init_adj_generator(ds.num_features, cfg.adj_hidden, _derive_seed(cfg.seed, 2))

        base = SparseOperator(ds.graph)
        self.original_ops = {c: BlockOperator(base, self.part_t.members[c], self.spec.hops) for c in self.classes}
        self.feature_opt = Adam([self.xprime], lr=cfg.lr_feat)
        self.generator_opt = Adam(self.generator.tensors(), lr=cfg.lr_adj) if self.generator else None
        self.adversaries: Dict[int, GnnParams] = {}
        self.adversary_opts: Dict[int, SGD] = {}

        logger.info(f"condensing {ds.name}: {ds.num_nodes} -> {self.n_prime} nodes, "
                    f"variant {cfg.variant}, class counts {np.bincount(self.yprime.labels).tolist()}")

    def reset_adversaries(self, epoch: int):
        for c in self.classes:
            params = init_params(self.spec, self.ds.num_features, self.cfg.hidden,
                                 _derive_seed(self.cfg.seed, 3, epoch, c), head=False)
            self.adversaries[c] = params
            self.adversary_opts[c] = SGD(params.tensors(), lr=self.cfg.lr_adversary)

    def synthetic_operator(self) -> PropagationOperator:
        if self.generator is None:
            return IdentityOperator(self.n_prime)
        return DenseOperator(generate_adjacency(self.generator, self.xprime))

    def _synthetic_term(self, c: int, op: PropagationOperator, mean_t: Tensor) -> Tensor:
        emb_s = forward(self.spec, self.adversaries[c], op, self.xprime, output='embeddings')
        mean_s = ad.masked_row_mean(emb_s, self.part_s.members[c])
        return ad.scale(ad.sq_l2_diff(mean_t, mean_s), float(self.part_t.ratios[c]))

    def original_mean(self, c: int) -> Tensor:
        emb_t = forward(self.spec, self.adversaries[c], self.original_ops[c], self.x, output='embeddings')
        return ad.masked_row_mean(emb_t, np.arange(emb_t.rows))

    def synthetic_step(self, update_features: bool, means: dict) -> float:
        generator_params = self.generator.tensors() if self.generator else []
        if update_features:
            trainable, frozen = [self.xprime], generator_params
        else:
            trainable, frozen = generator_params, [self.xprime]
        ad.set_requires_grad(trainable, True)
        ad.set_requires_grad(frozen, False)
        for params in self.adversaries.values():
            ad.set_requires_grad(params.tensors(), False)

        with Tape():
            op = self.synthetic_operator()
            loss = None
            for c in self.classes:
                term = self._synthetic_term(c, op, means[c])
                loss = term if loss is None else ad.add(loss, term)
            value = loss.item()
            ad.backward(loss)
        (self.feature_opt if update_features else self.generator_opt).step('descend')
        return value

    def adversary_step(self) -> float:
        ad.set_requires_grad([self.xprime], False)
        if self.generator:
            ad.set_requires_grad(self.generator.tensors(), False)
        total = 0.0
        with Tape():
            op = self.synthetic_operator()
            for c in self.classes:
                ad.set_requires_grad(self.adversaries[c].tensors(), True)
                term = self._synthetic_term(c, op, self.original_mean(c))
                total += term.item()
                ad.backward(term)
                self.adversary_opts[c].step('ascend')
                ad.set_requires_grad(self.adversaries[c].tensors(), False)
        return total

    def run_epoch(self, epoch: int) -> float:
        if epoch == 1 or self.cfg.reinit_adversary:
            self.reset_adversaries(epoch)
        for params in self.adversaries.values():
            ad.set_requires_grad(params.tensors(), False)
        means = {c: self.original_mean(c) for c in self.classes}

        cycle = self.cfg.tau1 + self.cfg.tau2
        losses = []
        for e in range(1, self.cfg.inner_steps + 1):
            update_features = self.generator is None or e % cycle < self.cfg.tau1
            try:
                losses.append(self.synthetic_step(update_features, means))
            except NumericError as err:
                raise NumericError(f"synthetic update failed: {err}", epoch=epoch, step=e) from err

        for k in range(1, self.cfg.adversary_steps + 1):
            try:
                self.adversary_step()
            except NumericError as err:
                raise NumericError(f"adversary update failed: {err}", epoch=epoch, step=k) from err
        return float(np.mean(losses))

    def final_graph(self) -> SparseGraph:
        if self.generator is None:
            nodes = np.arange(self.n_prime)
            return SparseGraph.from_edges(self.n_prime, nodes, nodes, np.ones(self.n_prime), symmetrize=False)
        ad.set_requires_grad(self.generator.tensors() + [self.xprime], False)
        dense = generate_adjacency(self.generator, self.xprime).data.copy()
        dense[dense < ADJ_THRESHOLD] = 0.0
        if self.cfg.binarize:
            dense[dense > 0] = 1.0
        return sparsify(FeatureMatrix(dense))


def _run(ds: Dataset, cfg: CondenseConfig, learn_structure: bool,
         progress: Optional[ProgressCallback]) -> CondensedGraph:
    condenser = _Condenser(ds, cfg, learn_structure)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        loss = condenser.run_epoch(epoch)
        elapsed_ms = (time.perf_counter() - started) * 1000
        history.append(loss)
        logger.debug(f"epoch {epoch}: loss {loss:.6g} ({elapsed_ms:.0f} ms)")
        if progress is not None:
            progress(epoch, loss, elapsed_ms)

    graph = condenser.final_graph()
    logger.info(f"condensed graph: {graph.num_nodes} nodes, {graph.num_undirected_edges} edges, "
                f"final loss {history[-1]:.6g}")
    return CondensedGraph(graph=graph, features=FeatureMatrix(condenser.xprime.data), labels=condenser.yprime,
                          config=cfg, final_loss=history[-1], loss_history=history, source=ds.name)


def condense(ds: Dataset, cfg: CondenseConfig, progress: Optional[ProgressCallback] = None) -> CondensedGraph:
    """Learn X' and A' = g(X'); the dispatcher for both variants."""
    if cfg.variant == 'gcdm-x':
        return condense_x(ds, cfg, progress)
    return _run(ds, cfg, learn_structure=True, progress=progress)


def condense_x(ds: Dataset, cfg: CondenseConfig, progress: Optional[ProgressCallback] = None) -> CondensedGraph:
    """Graphless variant: A' = I, only X' is learned."""
    return _run(ds, cfg, learn_structure=False, progress=progress)
