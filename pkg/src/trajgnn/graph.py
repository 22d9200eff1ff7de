"""Directed heterogeneous vehicle-map graphs and the two GNN layers.

One graph per prediction sample: vehicle nodes first (target at index
0), a single map node last. The edge set connects the target to every
vehicle node (including a self-loop) and every node to the target, so
after two layers target-mediated information reaches the neighbors.
Node features carry a trailing 2-dim tag: [0,1] vehicle, [1,0] map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError
from .layers import LEAKY_SLOPE, Linear
from .tensor import Tensor

VEHICLE_TAG = (0.0, 1.0)
MAP_TAG = (1.0, 0.0)


@dataclass
class HetGraph:
    """Typed nodes, a directed edge list and per-node features.

    ``edges`` is an [E,2] int array of (src, dst) pairs, duplicate-free
    and sorted by (dst, src) so aggregation order is reproducible.
    """

    node_features: Tensor
    edges: np.ndarray
    n_nodes: int
    node_type: np.ndarray  # 0 = vehicle, 1 = map
    target_index: int = 0

    def __post_init__(self):
        if self.edges.size and (
            self.edges.min() < 0 or self.edges.max() >= self.n_nodes
        ):
            raise ContractError("edge endpoint out of range")


@dataclass
class BatchedGraph:
    """Disjoint union of graphs; layers treat it exactly like one graph."""

    node_features: Tensor
    edges: np.ndarray
    n_nodes: int
    node_type: np.ndarray
    target_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    graph_offsets: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))


def _sorted_unique_edges(pairs) -> np.ndarray:
    arr = np.asarray(sorted(set(pairs)), dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    # canonical order: ascending destination, then source
    order = np.lexsort((arr[:, 0], arr[:, 1]))
    return arr[order]


def star_edges(n_nodes: int, n_vehicles: int,
               target_self_loop: bool = True) -> np.ndarray:
    """Target-to-every-vehicle plus everything-to-target, 0-indexed."""
    pairs = {(0, j) for j in range(n_vehicles)}
    pairs |= {(j, 0) for j in range(n_nodes)}
    if not target_self_loop:
        pairs.discard((0, 0))
    return _sorted_unique_edges(pairs)


def build_hetero_graph(vehicle_features: Tensor, map_feature: Tensor,
                       target_self_loop: bool = True) -> HetGraph:
    """Vehicle nodes (target first) plus one map node, tagged and wired.

    ``vehicle_features`` is [N_veh, d], ``map_feature`` is [d] or [1, d].
    The returned graph has N = N_veh + 1 nodes with features [N, d+2].
    """
    n_veh = vehicle_features.shape[0]
    if n_veh < 1:
        raise ContractError("need at least the target vehicle node")
    mf = map_feature if map_feature.ndim == 2 else map_feature.reshape(1, -1)
    feats = T.concat([vehicle_features, mf], axis=0)
    n = n_veh + 1
    tags = np.tile(VEHICLE_TAG, (n, 1)).astype(feats.dtype)
    tags[-1] = MAP_TAG
    feats = T.concat([feats, Tensor(tags)], axis=1)
    node_type = np.zeros(n, dtype=np.int64)
    node_type[-1] = 1
    return HetGraph(
        node_features=feats,
        edges=star_edges(n, n_veh, target_self_loop),
        n_nodes=n,
        node_type=node_type,
    )


def build_homo_graph(vehicle_features: Tensor,
                     target_self_loop: bool = True) -> HetGraph:
    """Vehicle-only graph: same star wiring, no map node.

    Nodes keep the vehicle tag columns so layer shapes match the
    heterogeneous case.
    """
    n_veh = vehicle_features.shape[0]
    if n_veh < 1:
        raise ContractError("need at least the target vehicle node")
    tags = np.tile(VEHICLE_TAG, (n_veh, 1)).astype(vehicle_features.dtype)
    feats = T.concat([vehicle_features, Tensor(tags)], axis=1)
    return HetGraph(
        node_features=feats,
        edges=star_edges(n_veh, n_veh, target_self_loop),
        n_nodes=n_veh,
        node_type=np.zeros(n_veh, dtype=np.int64),
    )


def _aggregation_edges(graph) -> np.ndarray:
    """Edge list plus a virtual self-loop on every node, deduplicated."""
    pairs = {(int(s), int(d)) for s, d in graph.edges}
    pairs |= {(i, i) for i in range(graph.n_nodes)}
    return _sorted_unique_edges(pairs)


def gcn_layer(graph, layer: Linear) -> Tensor:
    """Degree-normalized sum aggregation.

    h_i' = leaky_relu( sum_{j in Nin(i) u {i}} (W h_j) / sqrt(dt_i dt_j) + b )
    with dt = in-degree excluding self-loops, plus one.
    """
    edges = _aggregation_edges(graph)
    src, dst = edges[:, 0], edges[:, 1]
    deg = np.bincount(dst[src != dst], minlength=graph.n_nodes) + 1.0
    h = T.matmul(graph.node_features, layer.weight.T)
    coef = (1.0 / np.sqrt(deg[dst] * deg[src])).astype(h.dtype)
    msgs = T.gather_rows(h, src) * Tensor(coef[:, None])
    agg = T.segment_sum(msgs, dst, graph.n_nodes)
    return T.leaky_relu(agg + layer.bias, LEAKY_SLOPE)


def gat_layer(graph, layer: Linear, attn: Tensor) -> Tensor:
    """Single-head attention aggregation over in-neighborhoods plus self.

    Scores e_ij = leaky_relu(a^T [W h_i || W h_j]) (i the destination)
    are softmax-normalized per destination; h_i' =
    leaky_relu(sum_j alpha_ij W h_j + b).
    """
    edges = _aggregation_edges(graph)
    src, dst = edges[:, 0], edges[:, 1]
    h = T.matmul(graph.node_features, layer.weight.T)
    d_out = h.shape[1]
    if attn.size != 2 * d_out:
        raise ContractError(
            f"attention vector must have length {2 * d_out}, got {attn.size}"
        )
    a_dst = T.matmul(h, attn[:d_out].reshape(d_out, 1))  # [N,1]
    a_src = T.matmul(h, attn[d_out:].reshape(d_out, 1))
    scores = T.leaky_relu(
        T.gather_rows(a_dst, dst) + T.gather_rows(a_src, src), LEAKY_SLOPE
    )
    # per-destination max subtraction: piecewise constant, kept off the tape
    max_per_dst = np.full(graph.n_nodes, -np.inf, dtype=scores.dtype)
    np.maximum.at(max_per_dst, dst, scores.data[:, 0])
    shifted = scores - Tensor(max_per_dst[dst][:, None])
    weights = T.exp(shifted)
    denom = T.segment_sum(weights, dst, graph.n_nodes)
    alpha = weights / T.gather_rows(denom, dst)
    agg = T.segment_sum(alpha * T.gather_rows(h, src), dst, graph.n_nodes)
    return T.leaky_relu(agg + layer.bias, LEAKY_SLOPE)


def gat_attention(graph, layer: Linear, attn: Tensor):
    """Attention coefficients as (edges, alpha) for inspection/tests."""
    edges = _aggregation_edges(graph)
    src, dst = edges[:, 0], edges[:, 1]
    h = T.matmul(graph.node_features, layer.weight.T)
    d_out = h.shape[1]
    a_dst = T.matmul(h, attn[:d_out].reshape(d_out, 1))
    a_src = T.matmul(h, attn[d_out:].reshape(d_out, 1))
    scores = T.leaky_relu(
        T.gather_rows(a_dst, dst) + T.gather_rows(a_src, src), LEAKY_SLOPE
    ).data[:, 0]
    alpha = np.zeros_like(scores)
    for node in np.unique(dst):
        mask = dst == node
        s = scores[mask]
        e = np.exp(s - s.max())
        alpha[mask] = e / e.sum()
    return edges, alpha


def batch_graphs(graphs) -> BatchedGraph:
    """Disjoint union with index offsets; no cross-graph edges."""
    graphs = list(graphs)
    if not graphs:
        raise ContractError("cannot batch an empty graph list")
    offsets = np.cumsum([0] + [g.n_nodes for g in graphs])
    edges = [g.edges + off for g, off in zip(graphs, offsets)]
    features = T.concat([g.node_features for g in graphs], axis=0)
    return BatchedGraph(
        node_features=features,
        edges=np.concatenate(edges, axis=0),
        n_nodes=int(offsets[-1]),
        node_type=np.concatenate([g.node_type for g in graphs]),
        target_indices=np.asarray(
            [off + g.target_index for g, off in zip(graphs, offsets)], dtype=np.int64
        ),
        graph_offsets=offsets,
    )
