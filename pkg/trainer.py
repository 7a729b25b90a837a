"""Train evaluation networks and measure them on the original graph.

A network is trained on any labelled graph (condensed, coreset or the
original training split) and selected by accuracy on the original validation
split; the test split is read only by :func:`evaluate`.
"""
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

import autodiff as ad
from autodiff import Adam, Tape, Tensor
from config import TrainConfig
from exceptions import EmptyMask, NumericError
from gnn_models import GnnParams, GnnSpec, PropagationOperator, SparseOperator, forward, init_params
from graph_core import Dataset, FeatureMatrix, LabelVector, SparseGraph

logger = logging.getLogger(__name__)


@dataclass
class EvalTarget:
    """One split of the original graph, with its propagation operator."""
    operator: PropagationOperator
    features: Tensor
    labels: LabelVector
    mask: np.ndarray

    @classmethod
    def from_dataset(cls, ds: Dataset, split: str,
                     operator: Optional[PropagationOperator] = None) -> 'EvalTarget':
        return cls(operator=operator or SparseOperator(ds.graph), features=Tensor(ds.features.data),
                   labels=ds.labels, mask=getattr(ds.splits, split))


@dataclass
class TrainResult:
    params: GnnParams
    val_curve: List[float]
    best_epoch: int
    seconds: float = 0.0


@dataclass
class ArchResult:
    arch: str
    accuracies: List[float]
    seeds: List[int]
    best_epochs: List[int]
    val_curves: List[List[float]] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> Optional[float]:
        # a single run has no spread to report
        if len(self.accuracies) < 2:
            return None
        return float(np.std(self.accuracies))

    def to_dict(self) -> Dict:
        return {
            'arch': self.arch,
            'accuracies': self.accuracies,
            'mean': self.mean,
            'std': self.std,
            'seeds': self.seeds,
            'best_epochs': self.best_epochs,
            'val_curves': self.val_curves,
        }


@dataclass
class EvalReport:
    results: List[ArchResult]
    train_seconds: float = 0.0
    eval_seconds: float = 0.0

    def arch(self, name: str) -> ArchResult:
        for result in self.results:
            if result.arch == name:
                return result
        raise KeyError(name)

    def to_dict(self) -> Dict:
        return {
            'results': [r.to_dict() for r in self.results],
            'timings': {'train': self.train_seconds, 'eval': self.eval_seconds},
        }


def accuracy(logits: np.ndarray, labels: Union[LabelVector, np.ndarray], mask: Sequence[int]) -> float:
    """Percentage of ``mask`` rows whose argmax matches the label."""
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise EmptyMask("accuracy over an empty mask")
    y = np.asarray(getattr(labels, 'labels', labels))
    predicted = np.argmax(logits[mask], axis=1)
    return float(np.mean(predicted == y[mask]) * 100.0)


def select_best_epoch(curve: Sequence[float]) -> int:
    """1-based epoch of the highest validation accuracy; ties go to the earlier epoch."""
    if not len(curve):
        raise ValueError("empty validation curve")
    return int(np.argmax(curve)) + 1


def spec_from_config(arch: str, cfg: TrainConfig) -> GnnSpec:
    return GnnSpec(arch=arch, layers=cfg.layers, hidden=cfg.hidden, dropout=cfg.dropout,
                   appnp_alpha=cfg.appnp_alpha, appnp_k=cfg.appnp_k)


def fit(spec: GnnSpec, graph: Union[SparseGraph, PropagationOperator], features: FeatureMatrix,
        labels: LabelVector, val: Optional[EvalTarget], cfg: TrainConfig,
        train_mask: Optional[Sequence[int]] = None) -> TrainResult:
    """Adam on cross-entropy with early stopping on validation accuracy.

    ``train_mask`` defaults to every node. Without a validation target the
    last epoch is returned.
    """
    started = time.perf_counter()
    op = graph if isinstance(graph, PropagationOperator) else SparseOperator(graph)
    x = Tensor(features.data)
    mask = np.arange(features.rows) if train_mask is None else np.asarray(train_mask, dtype=np.int64)
    params = init_params(spec, features.cols, labels.num_classes, cfg.seed)
    optimizer = Adam(params.tensors(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    use_val = val is not None and len(val.mask) > 0

    curve: List[float] = []
    best = params.snapshot()
    best_epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        ad.set_requires_grad(params.tensors(), True)
        try:
            with Tape():
                logits = forward(spec, params, op, x, output='logits', training=True, rng=rng)
                loss = ad.softmax_cross_entropy(logits, labels, mask)
                ad.backward(loss)
        except NumericError as err:
            raise NumericError(f"training {spec.arch} diverged: {err}", epoch=epoch) from err
        optimizer.step('descend')

        if not use_val:
            continue
        acc = evaluate(params, spec, val)
        curve.append(acc)
        best_epoch = select_best_epoch(curve)
        if best_epoch == epoch:
            best = params.snapshot()
        elif epoch - best_epoch >= cfg.patience:
            logger.debug(f"{spec.arch}: early stop at epoch {epoch}, best {curve[best_epoch - 1]:.2f} at {best_epoch}")
            break

    if not use_val:
        best, best_epoch = params.snapshot(), cfg.epochs
    return TrainResult(params=best, val_curve=curve, best_epoch=best_epoch,
                       seconds=time.perf_counter() - started)


def train(spec: GnnSpec, train_graph: Union[SparseGraph, PropagationOperator], train_features: FeatureMatrix,
          train_labels: LabelVector, val: Optional[EvalTarget], cfg: TrainConfig,
          train_mask: Optional[Sequence[int]] = None) -> GnnParams:
    return fit(spec, train_graph, train_features, train_labels, val, cfg, train_mask).params


def predict(params: GnnParams, spec: GnnSpec, target: EvalTarget) -> np.ndarray:
    return forward(spec, params, target.operator, target.features, output='logits').data


def evaluate(params: GnnParams, spec: GnnSpec, target: EvalTarget) -> float:
    """Accuracy (percent) on ``target.mask`` of a forward over the full graph."""
    return accuracy(predict(params, spec, target), target.labels, target.mask)


def cross_arch_eval(train_ds: Dataset, ds: Dataset, archs: Sequence[str], cfg: TrainConfig,
                    repeats: int = 1) -> EvalReport:
    """Train every architecture ``repeats`` times on ``train_ds`` and test on ``ds``.

    Supervision is ``train_ds.splits.train``: every node of a condensed or
    coreset dataset, the public training split when ``train_ds`` is ``ds``.
    Run ``r`` uses seed ``cfg.seed + r``.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    shared = SparseOperator(ds.graph)
    val = EvalTarget.from_dataset(ds, 'val', shared)
    test = EvalTarget.from_dataset(ds, 'test', shared)
    train_op = shared if train_ds is ds else SparseOperator(train_ds.graph)

    report = EvalReport(results=[])
    for arch in archs:
        spec = spec_from_config(arch, cfg)
        result = ArchResult(arch=arch, accuracies=[], seeds=[], best_epochs=[])
        for r in range(repeats):
            run_cfg = replace(cfg, seed=cfg.seed + r)
            fitted = fit(spec, train_op, train_ds.features, train_ds.labels, val, run_cfg,
                         train_mask=train_ds.splits.train)
            report.train_seconds += fitted.seconds
            started = time.perf_counter()
            acc = evaluate(fitted.params, spec, test)
            report.eval_seconds += time.perf_counter() - started
            result.accuracies.append(acc)
            result.seeds.append(run_cfg.seed)
            result.best_epochs.append(fitted.best_epoch)
            result.val_curves.append(fitted.val_curve)
            logger.info(f"{arch} seed {run_cfg.seed}: test accuracy {acc:.2f} (best epoch {fitted.best_epoch})")
        report.results.append(result)
    return report
