"""
Graph views of a channel sample.

Two representations of the same MU-MISO network:

    link_graph  one node per base-station/user link with the user's CSI as
                node feature, fully connected by directed interference edges.
    bipartite   antenna nodes and user nodes, an edge in each direction for
                every antenna/user pair, the channel coefficient as edge feature.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import jax
import numpy as np

from beamx.channel import ChannelSample
from beamx.errors import ConfigError, PermutationError

LINK_GRAPH = "link_graph"
BIPARTITE = "bipartite"
REPRESENTATIONS = (LINK_GRAPH, BIPARTITE)

NODE_TYPES = ("link", "antenna", "user")
LINK, ANTENNA, USER = 0, 1, 2

EDGE_FEATURE_MODES = ("none", "correlation")


@dataclass(frozen=True, eq=False)
class RadioGraph:
    """
    Graph-structured view of one ChannelSample.

    Attributes:
        kind (str): "link_graph" or "bipartite".
        node_types (np.ndarray): type code per node (LINK, ANTENNA or USER).
        node_features (np.ndarray): (num_nodes, feature_dim) float array.
        src, dst (np.ndarray): directed edge list.
        edge_features (np.ndarray, optional): (num_edges, edge_dim).
        k_users, n_antennas, sample_id: provenance.
        H (np.ndarray): the channel the graph was built from.
    """

    kind: str
    node_types: np.ndarray
    node_features: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_features: Optional[np.ndarray]
    k_users: int
    n_antennas: int
    sample_id: int
    H: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.src.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    @property
    def edge_dim(self) -> int:
        return 0 if self.edge_features is None else self.edge_features.shape[1]

    @property
    def user_nodes(self) -> np.ndarray:
        """Node index of user k, for k = 0..K-1."""
        if self.kind == LINK_GRAPH:
            return np.arange(self.k_users)
        return self.n_antennas + np.arange(self.k_users)

    @property
    def edges(self) -> List[tuple]:
        return list(zip(self.src.tolist(), self.dst.tolist()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, RadioGraph):
            return NotImplemented
        if (self.kind, self.k_users, self.n_antennas, self.sample_id) != \
                (other.kind, other.k_users, other.n_antennas, other.sample_id):
            return False
        if (self.edge_features is None) != (other.edge_features is None):
            return False
        same = [
            np.array_equal(self.node_types, other.node_types),
            np.array_equal(self.node_features, other.node_features),
            np.array_equal(self.src, other.src),
            np.array_equal(self.dst, other.dst),
            np.array_equal(self.H, other.H),
        ]
        if self.edge_features is not None:
            same.append(np.array_equal(self.edge_features, other.edge_features))
        return all(same)

    __hash__ = object.__hash__


@dataclass(frozen=True)
class PermutationMap:
    """
    Relabelling of users (and antennas). Position a of the permuted object
    holds element user_perm[a] of the original.
    """

    user_perm: np.ndarray
    antenna_perm: Optional[np.ndarray] = None

    def validate(self, k_users: int, n_antennas: int) -> "PermutationMap":
        _check_bijection("user_perm", self.user_perm, k_users)
        if self.antenna_perm is not None:
            _check_bijection("antenna_perm", self.antenna_perm, n_antennas)
        return self

    def antennas(self, n_antennas: int) -> np.ndarray:
        if self.antenna_perm is None:
            return np.arange(n_antennas)
        return np.asarray(self.antenna_perm)

    def inverse(self) -> "PermutationMap":
        inv_ant = None if self.antenna_perm is None else np.argsort(self.antenna_perm)
        return PermutationMap(user_perm=np.argsort(self.user_perm), antenna_perm=inv_ant)

    @classmethod
    def random(cls, key, k_users: int, n_antennas: Optional[int] = None) -> "PermutationMap":
        user_key, antenna_key = jax.random.split(key)
        users = np.asarray(jax.random.permutation(user_key, k_users))
        antennas = None if n_antennas is None else np.asarray(jax.random.permutation(antenna_key, n_antennas))
        return cls(user_perm=users, antenna_perm=antennas)


def _check_bijection(label: str, perm, size: int) -> None:
    perm = np.asarray(perm)
    if perm.ndim != 1 or perm.shape[0] != size:
        raise PermutationError(f"{label} has length {perm.shape[0] if perm.ndim == 1 else perm.shape}, expected {size}")
    if not np.array_equal(np.sort(perm), np.arange(size)):
        raise PermutationError(f"{label} is not a permutation of 0..{size - 1}: {perm.tolist()}")


def _link_edges(k_users: int):
    src, dst = np.nonzero(~np.eye(k_users, dtype=bool))
    return src.astype(np.int64), dst.astype(np.int64)


def _correlation(H: np.ndarray) -> np.ndarray:
    gram = np.abs(H.conj() @ H.T)
    norms = np.linalg.norm(H, axis=1)
    outer = np.outer(norms, norms)
    return np.where(outer > 0, gram / np.where(outer > 0, outer, 1.0), 0.0)


def build_link_graph(sample: ChannelSample, edge_feature_mode: str = "none") -> RadioGraph:
    """
    Isomorphic link graph: node k carries [Re(h_k); Im(h_k)] in R^{2N}, every
    ordered pair (i, j), i != j, is an edge.

    edge_feature_mode "correlation" adds |h_i^H h_j| / (||h_i|| ||h_j||) as a
    1-dim edge feature.
    """
    if edge_feature_mode not in EDGE_FEATURE_MODES:
        raise ConfigError(f"Unknown edge feature mode '{edge_feature_mode}'. Available modes: {EDGE_FEATURE_MODES}")
    H = np.asarray(sample.H, dtype=np.complex128)
    K, N = H.shape
    src, dst = _link_edges(K)
    edge_features = None
    if edge_feature_mode == "correlation":
        edge_features = _correlation(H)[src, dst].reshape(-1, 1)
    return RadioGraph(
        kind=LINK_GRAPH,
        node_types=np.full(K, LINK, dtype=np.int64),
        node_features=np.concatenate([H.real, H.imag], axis=1),
        src=src,
        dst=dst,
        edge_features=edge_features,
        k_users=K,
        n_antennas=N,
        sample_id=sample.sample_id,
        H=H,
    )


def build_bipartite_graph(sample: ChannelSample) -> RadioGraph:
    """
    Heterogeneous antenna/user graph. Nodes 0..N-1 are antennas, N..N+K-1
    users; node features are one-hot type tags (the model embeds them into a
    learned vector per type). Antenna->user edges come first in user-major
    order, followed by the user->antenna edges in the same order; both carry
    [Re H[k, m], Im H[k, m]].
    """
    H = np.asarray(sample.H, dtype=np.complex128)
    K, N = H.shape
    k_idx, m_idx = np.divmod(np.arange(K * N), N)
    users = N + k_idx
    coeff = H[k_idx, m_idx]
    features = np.stack([coeff.real, coeff.imag], axis=1)
    node_types = np.concatenate([np.full(N, ANTENNA), np.full(K, USER)]).astype(np.int64)
    one_hot = np.zeros((N + K, 2))
    one_hot[:N, 0] = 1.0
    one_hot[N:, 1] = 1.0
    return RadioGraph(
        kind=BIPARTITE,
        node_types=node_types,
        node_features=one_hot,
        src=np.concatenate([m_idx, users]).astype(np.int64),
        dst=np.concatenate([users, m_idx]).astype(np.int64),
        edge_features=np.concatenate([features, features], axis=0),
        k_users=K,
        n_antennas=N,
        sample_id=sample.sample_id,
        H=H,
    )


def build_graph(sample: ChannelSample, representation: str, edge_feature_mode: str = "none") -> RadioGraph:
    if representation == LINK_GRAPH:
        return build_link_graph(sample, edge_feature_mode=edge_feature_mode)
    if representation == BIPARTITE:
        return build_bipartite_graph(sample)
    raise ConfigError(f"Unknown representation '{representation}'. Available: {REPRESENTATIONS}")


def _canonical_order(kind: str, src: np.ndarray, dst: np.ndarray, k_users: int, n_antennas: int) -> np.ndarray:
    if kind == LINK_GRAPH:
        return np.argsort(src * k_users + dst, kind="stable")
    a2u = src < n_antennas
    k = np.where(a2u, dst - n_antennas, src - n_antennas)
    m = np.where(a2u, src, dst)
    key = np.where(a2u, 0, k_users * n_antennas) + k * n_antennas + m
    return np.argsort(key, kind="stable")


def apply_permutation(obj: Union[ChannelSample, RadioGraph], perm: PermutationMap):
    """
    Relabel users (and antennas) of a sample or a graph.

    The permuted graph has the same canonical edge order a fresh build of the
    permuted sample would have, so the two compare equal.
    """
    perm.validate(obj.k_users if isinstance(obj, RadioGraph) else obj.H.shape[0],
                  obj.n_antennas if isinstance(obj, RadioGraph) else obj.H.shape[1])
    users = np.asarray(perm.user_perm)
    if isinstance(obj, ChannelSample):
        antennas = perm.antennas(obj.H.shape[1])
        return ChannelSample(H=obj.H[users][:, antennas], sample_id=obj.sample_id)
    if not isinstance(obj, RadioGraph):
        raise PermutationError(f"cannot permute an object of type {type(obj).__name__}")

    K, N = obj.k_users, obj.n_antennas
    antennas = perm.antennas(N)
    H = obj.H[users][:, antennas]
    if obj.kind == LINK_GRAPH:
        node_perm = users
        cols = np.concatenate([antennas, N + antennas])
        node_features = obj.node_features[node_perm][:, cols]
    else:
        node_perm = np.concatenate([antennas, N + users])
        node_features = obj.node_features[node_perm]
    inverse = np.argsort(node_perm)
    src, dst = inverse[obj.src], inverse[obj.dst]
    order = _canonical_order(obj.kind, src, dst, K, N)
    edge_features = None if obj.edge_features is None else obj.edge_features[order]
    return RadioGraph(
        kind=obj.kind,
        node_types=obj.node_types[node_perm],
        node_features=node_features,
        src=src[order],
        dst=dst[order],
        edge_features=edge_features,
        k_users=K,
        n_antennas=N,
        sample_id=obj.sample_id,
        H=H,
    )


@dataclass
class Relation:
    """Edges ending in nodes of one type, and those nodes."""

    name: str
    edges: np.ndarray
    nodes: np.ndarray


@dataclass
class GraphBatch:
    """
    Several RadioGraphs packed into one disjoint graph.

    Users are numbered graph by graph; user row u lives in node user_nodes[u]
    of graph user_graph[u].
    """

    kind: str
    graphs: List[RadioGraph]
    node_features: np.ndarray
    node_types: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_features: Optional[np.ndarray]
    node_graph: np.ndarray
    user_nodes: np.ndarray
    user_graph: np.ndarray
    pair_edges: np.ndarray
    relations: List[Relation] = field(default_factory=list)

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_graphs(self) -> int:
        return len(self.graphs)

    @property
    def num_users(self) -> int:
        return self.user_nodes.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.graphs[0].n_antennas

    @property
    def k_users(self) -> List[int]:
        return [g.k_users for g in self.graphs]

    def channel_rows(self):
        """(Re H, Im H) stacked user by user, each of shape (num_users, N)."""
        H = np.concatenate([g.H for g in self.graphs], axis=0)
        return H.real.copy(), H.imag.copy()


def batch_graphs(graphs: Sequence[RadioGraph]) -> GraphBatch:
    graphs = list(graphs)
    if not graphs:
        raise ConfigError("cannot batch an empty list of graphs")
    kind = graphs[0].kind
    n_antennas = graphs[0].n_antennas
    for g in graphs:
        if g.kind != kind:
            raise ConfigError(f"cannot batch {kind} with {g.kind} graphs")
        if g.n_antennas != n_antennas:
            raise ConfigError(f"cannot batch graphs with N={n_antennas} and N={g.n_antennas}")
        if g.edge_dim != graphs[0].edge_dim or g.feature_dim != graphs[0].feature_dim:
            raise ConfigError("cannot batch graphs with different feature dimensions")

    node_offsets = np.cumsum([0] + [g.num_nodes for g in graphs])
    edge_offsets = np.cumsum([0] + [g.num_edges for g in graphs])
    src = np.concatenate([g.src + o for g, o in zip(graphs, node_offsets)])
    dst = np.concatenate([g.dst + o for g, o in zip(graphs, node_offsets)])
    edge_features = None
    if graphs[0].edge_features is not None:
        edge_features = np.concatenate([g.edge_features for g in graphs], axis=0)
    node_types = np.concatenate([g.node_types for g in graphs])

    pair_edges = np.zeros(0, dtype=np.int64)
    if kind == BIPARTITE:
        pair_edges = np.concatenate(
            [o + np.arange(g.k_users * g.n_antennas) for g, o in zip(graphs, edge_offsets)]
        )

    if kind == LINK_GRAPH:
        relations = [Relation(name="link", edges=np.arange(src.shape[0]), nodes=np.arange(node_types.shape[0]))]
    else:
        dst_types = node_types[dst]
        relations = [
            Relation(name="user", edges=np.nonzero(dst_types == USER)[0], nodes=np.nonzero(node_types == USER)[0]),
            Relation(name="antenna", edges=np.nonzero(dst_types == ANTENNA)[0], nodes=np.nonzero(node_types == ANTENNA)[0]),
        ]

    return GraphBatch(
        kind=kind,
        graphs=graphs,
        node_features=np.concatenate([g.node_features for g in graphs], axis=0),
        node_types=node_types,
        src=src.astype(np.int64),
        dst=dst.astype(np.int64),
        edge_features=edge_features,
        node_graph=np.concatenate([np.full(g.num_nodes, i) for i, g in enumerate(graphs)]).astype(np.int64),
        user_nodes=np.concatenate([g.user_nodes + o for g, o in zip(graphs, node_offsets)]).astype(np.int64),
        user_graph=np.concatenate([np.full(g.k_users, i) for i, g in enumerate(graphs)]).astype(np.int64),
        pair_edges=pair_edges.astype(np.int64),
        relations=relations,
    )
