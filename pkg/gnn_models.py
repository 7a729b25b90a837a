"""GNN forwards (GCN, SGC, MLP, SAGE-mean, APPNP) over the autodiff engine,
plus the pairwise-MLP adjacency generator of the condensed graph.

Every layer propagates first and transforms second. Propagation goes through
an operator object so the same forward runs on:

- ``SparseOperator``: a stored graph, normalized once (original graph, or a
  saved condensed graph during evaluation);
- ``BlockOperator``: the same normalized graph restricted to the nested
  receptive fields of a set of target nodes, so only rows that can reach the
  targets are ever computed;
- ``DenseOperator``: a differentiable N' x N' tensor (the generated A');
- ``IdentityOperator``: the graphless structure.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

import autodiff as ad
from autodiff import Tensor
from exceptions import ConfigError, ShapeError
from graph_core import SparseGraph, normalize_adjacency, receptive_field_layers, row_normalize_adjacency

logger = logging.getLogger(__name__)

ARCHITECTURES = ('gcn', 'sgc', 'mlp', 'sage', 'appnp')


@dataclass(frozen=True)
class GnnSpec:
    arch: str
    layers: int = 2
    hidden: int = 256
    dropout: float = 0.0
    appnp_alpha: float = 0.1
    appnp_k: int = 10

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}; expected one of {', '.join(ARCHITECTURES)}")
        if self.layers < 1 or self.hidden < 1:
            raise ConfigError("layers and hidden must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not 0 <= self.appnp_alpha <= 1 or self.appnp_k < 1:
            raise ConfigError("appnp_alpha must lie in [0, 1] and appnp_k >= 1")

    @property
    def hops(self) -> int:
        """Propagation steps of one forward, i.e. the receptive-field depth."""
        if self.arch == 'mlp':
            return 0
        if self.arch == 'appnp':
            return self.appnp_k
        return self.layers


@dataclass
class GnnParams:
    """Weights and biases of one network.

    ``head`` marks a classifier whose last layer maps to class logits; the
    ``embeddings`` output of such a network stops before that layer.
    """
    arch: str
    weights: List[Tensor]
    biases: List[Tensor]
    head: bool = True

    def tensors(self) -> List[Tensor]:
        return self.weights + self.biases

    @property
    def out_features(self) -> int:
        return self.weights[-1].cols

    def snapshot(self) -> 'GnnParams':
        return GnnParams(self.arch, [w.detach() for w in self.weights],
                         [b.detach() for b in self.biases], self.head)


@dataclass
class AdjGenParams:
    """MLP_theta: [x_i; x_j] (2d) -> hidden -> scalar."""
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def tensors(self) -> List[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    @property
    def in_features(self) -> int:
        return self.w1.rows // 2


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float32))


def _layer_dims(spec: GnnSpec, in_features: int, out_features: int) -> List[int]:
    if spec.arch == 'sgc':
        return [in_features, out_features]
    return [in_features] + [spec.hidden] * (spec.layers - 1) + [out_features]


def init_params(spec: GnnSpec, in_features: int, out_features: int, seed: int,
                head: bool = True) -> GnnParams:
    """Glorot-uniform weights and zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    dims = _layer_dims(spec, in_features, out_features)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        if spec.arch == 'sage':
            fan_in *= 2
        weights.append(_glorot(rng, fan_in, fan_out))
        biases.append(Tensor(np.zeros((1, fan_out), dtype=np.float32)))
    return GnnParams(spec.arch, weights, biases, head)


def init_adj_generator(in_features: int, hidden: int, seed: int) -> AdjGenParams:
    rng = np.random.default_rng(seed)
    return AdjGenParams(
        w1=_glorot(rng, 2 * in_features, hidden),
        b1=Tensor(np.zeros((1, hidden), dtype=np.float32)),
        w2=_glorot(rng, hidden, 1),
        b2=Tensor(np.zeros((1, 1), dtype=np.float32)),
    )


def generate_adjacency(params: AdjGenParams, xprime: Tensor) -> Tensor:
    """A'_ij = sigmoid(MLP([x'_i; x'_j])), symmetrized, unit diagonal."""
    if xprime.cols != params.in_features:
        raise ShapeError(f"generator expects {params.in_features} features, got {xprime.cols}")
    logits = ad.pairwise_mlp(xprime, params.w1, params.b1, params.w2, params.b2)
    return ad.fill_diagonal(ad.symmetrize(ad.sigmoid(logits)), 1.0)


# ------------------------------------------------------------------ operators

class PropagationOperator:
    """Interface shared by the operators.

    ``prepare`` selects the input rows, ``propagate`` applies one hop of the
    ``gcn`` (symmetric, self-loops) or ``mean`` (neighbour mean) operator for
    a given layer, ``rows_for`` aligns a tensor with that layer's output rows
    and ``final_rows`` with the rows of the finished forward.
    """
    num_nodes: int

    def prepare(self, x: Tensor) -> Tensor:
        if x.rows != self.num_nodes:
            raise ShapeError(f"{x.rows} feature rows for an operator over {self.num_nodes} nodes")
        return x

    def propagate(self, h: Tensor, kind: str, layer: int) -> Tensor:
        raise NotImplementedError

    def rows_for(self, h: Tensor, layer: int) -> Tensor:
        return h

    def final_rows(self, h: Tensor) -> Tensor:
        return h


class SparseOperator(PropagationOperator):
    """Normalized operators of a stored graph, built on first use."""

    def __init__(self, graph: SparseGraph):
        self.graph = graph
        self.num_nodes = graph.num_nodes
        self._ops = {}

    def operator(self, kind: str) -> sp.csr_matrix:
        if kind not in self._ops:
            if kind == 'gcn':
                normalized = normalize_adjacency(self.graph)
            elif kind == 'mean':
                normalized = row_normalize_adjacency(self.graph)
            else:
                raise ValueError(f"unknown propagation kind {kind!r}")
            self._ops[kind] = normalized.to_scipy(np.float32)
        return self._ops[kind]

    def propagate(self, h, kind, layer):
        return ad.spmm(self.operator(kind), h)


class BlockOperator(PropagationOperator):
    """Propagation restricted to the receptive fields of ``targets``.

    Hop sets F_0 = targets, ..., F_depth are nested prefixes. A forward with
    ``depth`` propagations maps F_depth rows to F_0 rows, so its output is
    the targets' rows of the full-graph forward. Operators built from the
    same ``base`` share its normalized matrices.
    """

    def __init__(self, base: SparseOperator, targets: Sequence[int], depth: int):
        self.base = base
        self.depth = depth
        self.num_nodes = base.num_nodes
        self.layers = receptive_field_layers(base.graph, targets, depth)
        self._blocks = {}
        logger.debug(f"block operator over {len(self.layers[0])} targets, "
                     f"{len(self.layers[-1])} nodes in the {depth}-hop field")

    @property
    def targets(self) -> np.ndarray:
        return self.layers[0]

    def _block(self, kind: str, hop: int) -> sp.csr_matrix:
        key = (kind, hop)
        if key not in self._blocks:
            self._blocks[key] = self.base.operator(kind)[self.layers[hop - 1]][:, self.layers[hop]].tocsr()
        return self._blocks[key]

    def _hop(self, layer: int) -> int:
        hop = self.depth - layer
        if not 1 <= hop <= self.depth:
            raise ShapeError(f"layer {layer} outside a {self.depth}-hop block operator")
        return hop

    def prepare(self, x):
        super().prepare(x)
        return ad.take_rows(x, self.layers[-1])

    def propagate(self, h, kind, layer):
        return ad.spmm(self._block(kind, self._hop(layer)), h)

    def rows_for(self, h, layer):
        return ad.take_rows(h, np.arange(len(self.layers[self._hop(layer) - 1])))

    def final_rows(self, h):
        return ad.take_rows(h, np.arange(len(self.targets)))


class DenseOperator(PropagationOperator):
    """Differentiable propagation over a dense adjacency tensor with self-loops."""

    def __init__(self, adjacency: Tensor):
        if adjacency.rows != adjacency.cols:
            raise ShapeError(f"adjacency must be square, got {adjacency.shape}")
        self.adjacency = adjacency
        self.num_nodes = adjacency.rows
        self._ops = {}

    def propagate(self, h, kind, layer):
        if kind not in self._ops:
            if kind == 'gcn':
                self._ops[kind] = ad.normalize_dense(self.adjacency)
            else:
                self._ops[kind] = ad.row_normalize_dense(ad.fill_diagonal(self.adjacency, 0.0))
        return ad.matmul(self._ops[kind], h)


class IdentityOperator(PropagationOperator):
    """A' = I: the gcn operator is the identity and nodes have no neighbours."""

    def __init__(self, num_nodes: int):
        self.num_nodes = num_nodes

    def propagate(self, h, kind, layer):
        if kind == 'gcn':
            return h
        return ad.scale(h, 0.0)


# -------------------------------------------------------------------- forward

@dataclass
class _Context:
    spec: GnnSpec
    params: GnnParams
    adj: PropagationOperator
    training: bool
    rng: Optional[np.random.Generator]
    stop_before_head: bool

    def linear(self, h: Tensor, index: int) -> Tensor:
        if self.training and self.spec.dropout > 0:
            h = ad.dropout(h, self.spec.dropout, self.rng)
        return ad.add_bias(ad.matmul(h, self.params.weights[index]), self.params.biases[index])


def _check_params(spec: GnnSpec, params: GnnParams, in_features: int):
    if params.arch != spec.arch:
        raise ShapeError(f"parameters are for {params.arch}, spec is {spec.arch}")
    expected = 1 if spec.arch == 'sgc' else spec.layers
    if len(params.weights) != expected:
        raise ShapeError(f"{spec.arch} with {spec.layers} layers needs {expected} weight matrices, "
                         f"got {len(params.weights)}")
    first = params.weights[0].rows // (2 if spec.arch == 'sage' else 1)
    if first != in_features:
        raise ShapeError(f"first layer expects {first} features, input has {in_features}")


def _forward_gcn(ctx: _Context, h: Tensor) -> Tensor:
    last = ctx.spec.layers - 1
    for layer in range(ctx.spec.layers):
        h = ctx.adj.propagate(h, 'gcn', layer)
        if layer == last and ctx.stop_before_head:
            return h
        h = ctx.linear(h, layer)
        if layer < last:
            h = ad.relu(h)
    return h


def _forward_sgc(ctx: _Context, h: Tensor) -> Tensor:
    for layer in range(ctx.spec.layers):
        h = ctx.adj.propagate(h, 'gcn', layer)
    if ctx.stop_before_head:
        return h
    return ctx.linear(h, 0)


def _forward_mlp(ctx: _Context, h: Tensor, stop_before_head: bool) -> Tensor:
    last = ctx.spec.layers - 1
    for layer in range(ctx.spec.layers):
        if layer == last and stop_before_head:
            return h
        h = ctx.linear(h, layer)
        if layer < last:
            h = ad.relu(h)
    return h


def _forward_sage(ctx: _Context, h: Tensor) -> Tensor:
    last = ctx.spec.layers - 1
    for layer in range(ctx.spec.layers):
        neighbours = ctx.adj.propagate(h, 'mean', layer)
        h = ad.concat_cols(ctx.adj.rows_for(h, layer), neighbours)
        if layer == last and ctx.stop_before_head:
            return h
        h = ctx.linear(h, layer)
        if layer < last:
            h = ad.relu(h)
    return h


def _forward_appnp(ctx: _Context, h: Tensor) -> Tensor:
    # embeddings propagate the MLP's pre-head rows
    alpha = ctx.spec.appnp_alpha
    h0 = _forward_mlp(ctx, h, stop_before_head=ctx.stop_before_head)
    h = h0
    for step in range(ctx.spec.appnp_k):
        propagated = ad.scale(ctx.adj.propagate(h, 'gcn', step), 1 - alpha)
        h = ad.add(propagated, ad.scale(ctx.adj.rows_for(h0, step), alpha))
    return h


def forward(spec: GnnSpec, params: GnnParams, adj: PropagationOperator, x: Tensor,
            output: str = 'logits', training: bool = False,
            rng: Optional[np.random.Generator] = None) -> Tensor:
    """Run one network.

    ``output='embeddings'`` returns the post-propagation representation that
    feeds the classifier layer of a ``head`` network; for networks built
    without a head it is the full output. Dropout is applied only with
    ``training`` and needs ``rng``.
    """
    if output not in ('logits', 'embeddings'):
        raise ValueError(f"unknown output mode {output!r}")
    if training and spec.dropout > 0 and rng is None:
        raise ValueError("training-mode dropout needs an rng")
    _check_params(spec, params, x.cols)
    h = adj.prepare(x)
    ctx = _Context(spec, params, adj, training, rng,
                   stop_before_head=output == 'embeddings' and params.head)

    if spec.arch == 'gcn':
        return _forward_gcn(ctx, h)
    if spec.arch == 'sgc':
        return _forward_sgc(ctx, h)
    if spec.arch == 'mlp':
        return _forward_mlp(ctx, adj.final_rows(h), ctx.stop_before_head)
    if spec.arch == 'sage':
        return _forward_sage(ctx, h)
    return _forward_appnp(ctx, h)
