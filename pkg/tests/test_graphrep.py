import pytest
from context import beamx

import jax
import numpy as np

from beamx.channel import DatasetHeader, sample_channels
from beamx.errors import ConfigError, PermutationError
from beamx.graphrep import (
    ANTENNA,
    BIPARTITE,
    LINK_GRAPH,
    USER,
    PermutationMap,
    apply_permutation,
    batch_graphs,
    build_bipartite_graph,
    build_graph,
    build_link_graph,
)


def _sample(K=4, N=6, seed=0, index=0):
    return sample_channels(DatasetHeader(k_users=K, n_antennas=N, count=index + 1, seed=seed))[index]


def test_link_graph_structure():
    sample = _sample(K=4, N=6)
    graph = build_link_graph(sample)

    assert graph.num_nodes == 4
    assert graph.num_edges == 12
    assert graph.feature_dim == 12
    assert graph.edge_features is None
    assert all(s != d for s, d in graph.edges)
    assert np.allclose(graph.node_features[:, :6] + 1j * graph.node_features[:, 6:], sample.H)


def test_link_graph_correlation_features():
    graph = build_link_graph(_sample(K=3, N=5), edge_feature_mode="correlation")

    assert graph.edge_features.shape == (6, 1)
    assert np.all(graph.edge_features >= 0.0) and np.all(graph.edge_features <= 1.0 + 1e-12)


def test_single_user_link_graph_has_no_edges():
    graph = build_link_graph(_sample(K=1, N=3))

    assert graph.num_nodes == 1
    assert graph.num_edges == 0


def test_bipartite_graph_structure():
    sample = _sample(K=3, N=4)
    graph = build_bipartite_graph(sample)

    assert graph.num_nodes == 7
    assert graph.num_edges == 24
    assert list(graph.node_types[:4]) == [ANTENNA] * 4
    assert list(graph.node_types[4:]) == [USER] * 3
    k, m = 2, 1
    edge = k * 4 + m
    assert (graph.src[edge], graph.dst[edge]) == (m, 4 + k)
    assert np.allclose(graph.edge_features[edge], [sample.H[k, m].real, sample.H[k, m].imag])


def test_unknown_representation():
    with pytest.raises(ConfigError):
        build_graph(_sample(), "hypergraph")


@pytest.mark.parametrize("representation", [LINK_GRAPH, BIPARTITE])
def test_permutation_commutes_with_build(representation):
    sample = _sample(K=5, N=4, seed=2)
    for i in range(10):
        perm = PermutationMap.random(jax.random.PRNGKey(i), 5, 4)
        built_then_permuted = apply_permutation(build_graph(sample, representation), perm)
        permuted_then_built = build_graph(apply_permutation(sample, perm), representation)

        assert built_then_permuted == permuted_then_built


def test_permutation_with_correlation_edges():
    sample = _sample(K=4, N=3, seed=5)
    perm = PermutationMap(user_perm=np.array([2, 0, 3, 1]))
    graph = apply_permutation(build_link_graph(sample, "correlation"), perm)

    assert graph == build_link_graph(apply_permutation(sample, perm), "correlation")


def test_inverse_permutation_restores_graph():
    graph = build_bipartite_graph(_sample(K=3, N=5))
    perm = PermutationMap.random(jax.random.PRNGKey(7), 3, 5)

    assert apply_permutation(apply_permutation(graph, perm), perm.inverse()) == graph


def test_invalid_permutation():
    graph = build_link_graph(_sample(K=3, N=2))
    with pytest.raises(PermutationError):
        apply_permutation(graph, PermutationMap(user_perm=np.array([0, 0, 1])))
    with pytest.raises(PermutationError):
        apply_permutation(graph, PermutationMap(user_perm=np.array([0, 1])))


def test_batch_graphs_offsets():
    graphs = [build_link_graph(_sample(K=K, N=4, seed=K)) for K in (2, 3, 4)]
    batch = batch_graphs(graphs)

    assert batch.num_nodes == 9
    assert batch.num_graphs == 3
    assert batch.k_users == [2, 3, 4]
    assert list(batch.node_graph) == [0, 0, 1, 1, 1, 2, 2, 2, 2]
    assert np.all(batch.node_graph[batch.src] == batch.node_graph[batch.dst])
    Hr, Hi = batch.channel_rows()
    assert Hr.shape == (9, 4)


def test_bipartite_batch_relations():
    graphs = [build_bipartite_graph(_sample(K=K, N=3, seed=K)) for K in (2, 4)]
    batch = batch_graphs(graphs)
    names = [rel.name for rel in batch.relations]

    assert names == ["user", "antenna"]
    assert batch.num_users == 6
    assert batch.pair_edges.shape == (18,)
    assert np.all(batch.node_types[batch.dst[batch.pair_edges]] == USER)
    assert np.all(batch.node_types[batch.src[batch.pair_edges]] == ANTENNA)


def test_batch_rejects_mixed_graphs():
    sample = _sample(K=2, N=3)
    with pytest.raises(ConfigError):
        batch_graphs([build_link_graph(sample), build_bipartite_graph(sample)])
    with pytest.raises(ConfigError):
        batch_graphs([build_link_graph(sample), build_link_graph(_sample(K=2, N=4))])
    with pytest.raises(ConfigError):
        batch_graphs([])
