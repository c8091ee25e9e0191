"""
The beamforming GNN: message-passing layers (mean/sum/max or multi-head
attention aggregation, optional residual update), a shared MLP readout and
the parameter-free power activation. Also the dense MLP comparator.

Everything is written with diffcore ops, so the same forward pass serves
inference (no tape) and training (inside a Tape).
"""
import logging
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from beamx import diffcore as dc
from beamx.channel import ChannelSample
from beamx.diffcore import Tensor
from beamx.errors import ConfigError, DimensionError, ShapeError
from beamx.graphrep import BIPARTITE, GraphBatch, RadioGraph, batch_graphs
from beamx.objectives import BeamBatch, BeamMatrix
from beamx.params import AF_KINDS, FeatureDims, ModelConfig, ParamSet

Params = Union[ParamSet, Mapping[str, Tensor]]
LayerParams = Mapping[str, Mapping[str, Tensor]]

_TINY_POWER = 1e-30


def _as_batch(graph: Union[RadioGraph, GraphBatch]) -> GraphBatch:
    return graph if isinstance(graph, GraphBatch) else batch_graphs([graph])


def _as_tensors(params: Params) -> Mapping[str, Tensor]:
    return params.tensors() if isinstance(params, ParamSet) else params


def layer_params(params: Params, layer: int, config: ModelConfig) -> Dict[str, Dict[str, Tensor]]:
    """{relation: {leaf name: tensor}} of one layer."""
    params = _as_tensors(params)
    out = {}
    for rel in config.relations:
        prefix = f"layer{layer}.{rel}."
        out[rel] = {name[len(prefix):]: t for name, t in params.items() if name.startswith(prefix)}
    return out


def _local_index(nodes: np.ndarray, num_nodes: int) -> np.ndarray:
    local = np.full(num_nodes, -1, dtype=np.int64)
    local[nodes] = np.arange(nodes.shape[0])
    return local


def _assemble(parts: Sequence[Tensor], graph: GraphBatch) -> Tensor:
    """Per-relation row blocks back into global node order."""
    if len(parts) == 1:
        return parts[0]
    order = np.concatenate([rel.nodes for rel in graph.relations])
    return dc.gather(dc.concat(list(parts), axis=0), np.argsort(order))


def _edge_term(graph: GraphBatch, edges: np.ndarray, p: Mapping[str, Tensor]) -> Optional[Tensor]:
    if "W_edge" not in p:
        return None
    if graph.edge_features is None:
        raise ShapeError("layer has edge weights but the graph carries no edge features")
    return dc.matmul(Tensor.constant(graph.edge_features[edges]), p["W_edge"])


def attention_aggregate(graph, node_feats: Tensor, params_l: LayerParams, heads: int,
                        alpha: float = 0.2, return_weights: bool = False):
    """
    Multi-head attention aggregation.

    For head h, with U the relation's projection, the value of edge j->i is
    (U x_j)_h (plus the projected edge feature when present) and its score
    leaky_relu(a_dst_h . (U x_i)_h + a_src_h . value_h). Scores are
    softmax-normalized over the in-edges of i and the weighted values summed;
    heads are concatenated.

    Returns:
        Tensor (num_nodes, hidden_dim); with return_weights, also the
        attention weights as a list (one (num_edges_of_relation,) array per
        relation and head).
    """
    graph = _as_batch(graph)
    parts, weights = [], []
    for rel in graph.relations:
        p = params_l[rel.name]
        d = p["U"].shape[1]
        if d % heads != 0:
            raise ConfigError(f"hidden_dim {d} is not divisible by heads {heads}")
        dh = d // heads
        src, dst = graph.src[rel.edges], graph.dst[rel.edges]
        seg = _local_index(rel.nodes, graph.num_nodes)[dst]
        projected = dc.matmul(node_feats, p["U"])
        values = dc.gather(projected, src)
        edge = _edge_term(graph, rel.edges, p)
        if edge is not None:
            values = dc.add(values, edge)
        queries = dc.gather(projected, dst)
        per_head = []
        for h in range(heads):
            v_h = dc.slice(values, h * dh, (h + 1) * dh, axis=1)
            q_h = dc.slice(queries, h * dh, (h + 1) * dh, axis=1)
            score = dc.leaky_relu(dc.add(dc.matmul(q_h, p[f"a_dst_{h}"]), dc.matmul(v_h, p[f"a_src_{h}"])), alpha)
            att = dc.segment_softmax(score, seg, rel.nodes.shape[0])
            weights.append(att.numpy().reshape(-1))
            per_head.append(dc.segment_reduce(dc.row_scale(v_h, att), seg, rel.nodes.shape[0], "sum"))
        parts.append(dc.concat(per_head, axis=1) if heads > 1 else per_head[0])
    out = _assemble(parts, graph)
    return (out, weights) if return_weights else out


def _message_aggregate(graph: GraphBatch, node_feats: Tensor, params_l: LayerParams, config: ModelConfig) -> Tensor:
    parts = []
    for rel in graph.relations:
        p = params_l[rel.name]
        src, dst = graph.src[rel.edges], graph.dst[rel.edges]
        seg = _local_index(rel.nodes, graph.num_nodes)[dst]
        msg = dc.matmul(dc.gather(node_feats, src), p["W_neigh"])
        edge = _edge_term(graph, rel.edges, p)
        if edge is not None:
            msg = dc.add(msg, edge)
        msg = dc.leaky_relu(dc.add_bias(msg, p["b_msg"]), config.leaky_alpha)
        parts.append(dc.segment_reduce(msg, seg, rel.nodes.shape[0], config.aggregation))
    return _assemble(parts, graph)


def mp_layer(graph, node_feats: Tensor, params_l: LayerParams, config: ModelConfig,
             residual: Optional[bool] = None) -> Tensor:
    """
    One aggregation + update step.

    x_i' = leaky_relu(W_self x_i + W_agg agg_i + b_upd), with agg_i the mean,
    sum, max or attention aggregate of the messages into i (no aggregate term
    for aggregation "none"). With residual, x_i is added back when the input
    width equals hidden_dim.
    """
    graph = _as_batch(graph)
    node_feats = dc.as_tensor(node_feats)
    some = params_l[graph.relations[0].name]
    if node_feats.shape != (graph.num_nodes, some["W_self"].shape[0]):
        raise ShapeError(
            f"node features {node_feats.shape} do not fit layer input ({graph.num_nodes}, {some['W_self'].shape[0]})"
        )
    if residual is None:
        residual = config.residual
    agg = None
    if config.aggregation == "attention":
        agg = attention_aggregate(graph, node_feats, params_l, config.heads, alpha=config.leaky_alpha)
    elif config.aggregation != "none":
        agg = _message_aggregate(graph, node_feats, params_l, config)

    parts = []
    for rel in graph.relations:
        p = params_l[rel.name]
        x_dst = dc.gather(node_feats, rel.nodes) if len(graph.relations) > 1 else node_feats
        pre = dc.matmul(x_dst, p["W_self"])
        if agg is not None:
            agg_dst = dc.gather(agg, rel.nodes) if len(graph.relations) > 1 else agg
            pre = dc.add(pre, dc.matmul(agg_dst, p["W_agg"]))
        out = dc.leaky_relu(dc.add_bias(pre, p["b_upd"]), config.leaky_alpha)
        if residual and x_dst.shape[1] == out.shape[1]:
            out = dc.add(out, x_dst)
        parts.append(out)
    return _assemble(parts, graph)


def input_features(config: ModelConfig, params: Params, graph) -> Tensor:
    graph = _as_batch(graph)
    x = Tensor.constant(graph.node_features)
    if config.representation == BIPARTITE:
        x = dc.matmul(x, _as_tensors(params)["embed"])
    return x


def node_embeddings(config: ModelConfig, params: Params, graph, depth: Optional[int] = None) -> Tensor:
    """Node features after `depth` layers (all layers by default)."""
    graph = _as_batch(graph)
    _check_kind(config, graph)
    params = _as_tensors(params)
    x = input_features(config, params, graph)
    for layer in range(config.depth if depth is None else depth):
        x = mp_layer(graph, x, layer_params(params, layer, config), config, residual=config.residual and layer > 0)
    return x


def readout(node_feats: Tensor, params: Params, config: ModelConfig, graph) -> Tuple[Tensor, Tensor]:
    """
    Shared MLP from final node features to raw beams, row layout.

    link_graph: user node -> [Re w_k; Im w_k] in R^{2N}.
    bipartite: [x_m || x_k] of every antenna/user pair -> [Re w_mk, Im w_mk].
    """
    graph = _as_batch(graph)
    params = _as_tensors(params)
    N, U = graph.n_antennas, graph.num_users
    if config.representation == BIPARTITE:
        pairs = graph.pair_edges
        z = dc.concat([dc.gather(node_feats, graph.src[pairs]), dc.gather(node_feats, graph.dst[pairs])], axis=1)
    else:
        z = dc.gather(node_feats, graph.user_nodes)
    if z.shape[1] != params["readout.W1"].shape[0]:
        raise ShapeError(f"readout input width {z.shape[1]} does not match {params['readout.W1'].shape}")
    hidden = dc.leaky_relu(dc.add_bias(dc.matmul(z, params["readout.W1"]), params["readout.b1"]), config.leaky_alpha)
    out = dc.add_bias(dc.matmul(hidden, params["readout.W2"]), params["readout.b2"])
    if config.representation == BIPARTITE:
        Wr = dc.reshape(dc.slice(out, 0, 1, axis=1), (U, N))
        Wi = dc.reshape(dc.slice(out, 1, 2, axis=1), (U, N))
    else:
        if out.shape[1] != 2 * N:
            raise ShapeError(f"readout emits {out.shape[1]} values per user, the graph has N={N}")
        Wr = dc.slice(out, 0, N, axis=1)
        Wi = dc.slice(out, N, 2 * N, axis=1)
    return Wr, Wi


def project_rows(Wr: Tensor, Wi: Tensor, k_users: Sequence[int], power_budget: float,
                 kind: str = "ball") -> Tuple[Tensor, Tensor]:
    """
    power_activation on row-layout beams of several samples.

    ball: scale sample g by sqrt(P / max(||W_g||^2, P)), identity inside the budget.
    full: scale to ||W_g||^2 = P.
    """
    if not power_budget > 0:
        raise ConfigError(f"power budget must be positive, got {power_budget}")
    user_graph = np.repeat(np.arange(len(k_users)), k_users)
    per_user = dc.sum(dc.add(dc.square(Wr), dc.square(Wi)), axis=1)
    power = dc.reshape(dc.segment_reduce(dc.reshape(per_user, (-1, 1)), user_graph, len(k_users), "sum"), (-1,))
    if kind not in AF_KINDS:
        raise ConfigError(f"Unknown af_kind '{kind}'. Available kinds: {AF_KINDS}")
    floor = power_budget if kind == "ball" else _TINY_POWER
    # full: an all-zero W stays zero, the huge factor multiplies zeros
    factor = dc.sqrt(dc.div(float(power_budget), dc.clamp_min(power, floor)))
    per_row = dc.gather(factor, user_graph)
    return dc.row_scale(Wr, per_row), dc.row_scale(Wi, per_row)


def power_activation(W_raw: np.ndarray, power_budget: float, kind: str = "ball") -> np.ndarray:
    """
    Scale a complex N×K beam matrix back onto the ball ||W||_F^2 <= P; inside
    the ball it is returned unchanged (kind "ball").
    """
    W_raw = np.asarray(W_raw, dtype=np.complex128)
    rows = W_raw.T
    Wr, Wi = project_rows(Tensor.constant(rows.real.copy()), Tensor.constant(rows.imag.copy()),
                          [W_raw.shape[1]], power_budget, kind)
    return (Wr.numpy() + 1j * Wi.numpy()).T.copy()


def _check_kind(config: ModelConfig, graph: GraphBatch) -> None:
    if graph.kind != config.representation:
        raise ConfigError(f"model expects {config.representation} graphs, got {graph.kind}")


def _finish(config: ModelConfig, Wr: Tensor, Wi: Tensor, k_users, power_budget: float) -> BeamBatch:
    raw = np.add.reduceat(np.sum(Wr.numpy() ** 2 + Wi.numpy() ** 2, axis=1), np.cumsum((0,) + tuple(k_users))[:-1])
    if config.constraint_mode == "af":
        Wr, Wi = project_rows(Wr, Wi, k_users, power_budget, config.af_kind)
    return BeamBatch(Wr=Wr, Wi=Wi, k_users=tuple(k_users), raw_power=raw, power_budget=power_budget)


def forward_batch(config: ModelConfig, params: Params, graph, power_budget: float) -> BeamBatch:
    """Beams of every sample of a (packed) graph; records on the active tape."""
    graph = _as_batch(graph)
    if config.is_mlp:
        raise ConfigError("the mlp baseline runs on channels, use mlp_baseline_forward")
    x = node_embeddings(config, params, graph)
    Wr, Wi = readout(x, params, config, graph)
    return _finish(config, Wr, Wi, graph.k_users, power_budget)


def model_forward(config: ModelConfig, params: Params, graph: RadioGraph, power_budget: float) -> BeamMatrix:
    """Beam matrix of one graph: layers, readout and (in af mode) power activation."""
    return forward_batch(config, params, graph, power_budget).to_matrices()[0]


def _channels(samples) -> List[np.ndarray]:
    if isinstance(samples, (ChannelSample, np.ndarray)):
        samples = [samples]
    return [np.asarray(s.H if isinstance(s, ChannelSample) else s, dtype=np.complex128) for s in samples]


def mlp_forward_batch(config: ModelConfig, params: Params, samples, power_budget: float, dims: FeatureDims) -> BeamBatch:
    """
    Dense comparator: [Re H, Im H] flattened -> 3 dense layers -> 2NK values
    read as [Re W^T, Im W^T].

    Raises:
        DimensionError: a sample whose (K, N) differs from the training dims.
    """
    params = _as_tensors(params)
    channels = _channels(samples)
    K, N = dims.k_users, dims.n_antennas
    for H in channels:
        if H.shape != (K, N):
            raise DimensionError(f"mlp baseline was built for K={K}, N={N}, got K={H.shape[0]}, N={H.shape[1]}")
    flat = np.stack([np.concatenate([H.real.reshape(-1), H.imag.reshape(-1)]) for H in channels])
    h = Tensor.constant(flat)
    for i in (1, 2):
        h = dc.leaky_relu(dc.add_bias(dc.matmul(h, params[f"mlp.W{i}"]), params[f"mlp.b{i}"]), config.leaky_alpha)
    out = dc.add_bias(dc.matmul(h, params["mlp.W3"]), params["mlp.b3"])
    B = len(channels)
    Wr = dc.reshape(dc.slice(out, 0, K * N, axis=1), (B * K, N))
    Wi = dc.reshape(dc.slice(out, K * N, 2 * K * N, axis=1), (B * K, N))
    return _finish(config, Wr, Wi, (K,) * B, power_budget)


def mlp_baseline_forward(params: Params, sample, power_budget: float, dims: FeatureDims,
                         config: Optional[ModelConfig] = None) -> BeamMatrix:
    config = config or ModelConfig(baseline_model="mlp")
    return mlp_forward_batch(config, params, [sample], power_budget, dims).to_matrices()[0]


def predict(config: ModelConfig, params: Params, graphs: Sequence, power_budget: float,
            dims: Optional[FeatureDims] = None) -> List[BeamMatrix]:
    """
    Beam matrices of many samples in one pass. graphs are RadioGraphs, or
    ChannelSamples for the mlp baseline.
    """
    graphs = list(graphs)
    if not graphs:
        return []
    if config.is_mlp:
        if dims is None:
            raise ConfigError("the mlp baseline needs its feature dims")
        return mlp_forward_batch(config, params, graphs, power_budget, dims).to_matrices()
    return forward_batch(config, params, batch_graphs(graphs), power_budget).to_matrices()


def mean_pairwise_distance(node_feats, graph) -> float:
    """
    Mean Euclidean distance between the feature vectors of two nodes of the
    same sample, averaged over samples. Collapsing features drive it to 0.
    """
    graph = _as_batch(graph)
    x = node_feats.numpy() if isinstance(node_feats, Tensor) else np.asarray(node_feats)
    dists = []
    for g in range(graph.num_graphs):
        rows = x[graph.node_graph == g]
        if rows.shape[0] < 2:
            continue
        diff = rows[:, None, :] - rows[None, :, :]
        d = np.sqrt(np.sum(diff ** 2, axis=-1))
        dists.append(d[np.triu_indices(rows.shape[0], k=1)].mean())
    if not dists:
        logging.warning("mean_pairwise_distance: no sample with two or more nodes")
        return 0.0
    return float(np.mean(dists))
