import numpy as np
import pytest

from _support import finite_difference, max_relative_error, random_graph
from wildgad import gnn
from wildgad.graphstore import AttributedGraph, normalized_adjacency


def setup(seed, d_h=None, d=None):
    g = random_graph(seed)
    rng = np.random.default_rng(seed + 1000)
    d_h = d_h or int(rng.integers(1, 9))
    d = d or int(rng.integers(1, 9))
    return g, normalized_adjacency(g), g.features.astype(float), gnn.init_weights(g.feature_dim, d_h, d, seed)


def test_init_deterministic_and_bounded():
    a, b = gnn.init_weights(5, 7, 3, seed=4), gnn.init_weights(5, 7, 3, seed=4)
    assert np.array_equal(a.flat(), b.flat())
    assert np.abs(a.W1).max() <= np.sqrt(6 / 12)
    assert np.abs(a.W2).max() <= np.sqrt(6 / 10)
    assert not np.array_equal(a.flat(), gnn.init_weights(5, 7, 3, seed=5).flat())


def test_default_hidden_dim():
    assert gnn.init_weights(3).W1.shape == (3, 128)


def test_zero_w1_gives_zero_embeddings():
    g, adj, X, W = setup(0)
    W.W1[:] = 0
    assert np.all(gnn.forward(adj, X, W) == 0)


def test_isolated_node_direct_arithmetic():
    x = np.array([[0.5, -1.0, 2.0]])
    g = AttributedGraph("one", 1, [], x)
    W = gnn.init_weights(3, 4, 2, seed=1)
    expected = np.maximum(x @ W.W1, 0) @ W.W2
    np.testing.assert_allclose(gnn.forward(normalized_adjacency(g), x, W), expected, atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_permutation_equivariance(seed):
    g = random_graph(seed, n=20)
    perm = np.random.default_rng(seed).permutation(20)
    inv = np.argsort(perm)
    h = AttributedGraph("p", 20, inv[g.edges], g.features[perm])
    W = gnn.init_weights(g.feature_dim, 6, 4, seed)
    Zg = gnn.forward(normalized_adjacency(g), g.features.astype(float), W)
    Zh = gnn.forward(normalized_adjacency(h), h.features.astype(float), W)
    np.testing.assert_allclose(Zh, Zg[perm], atol=1e-12)


def test_backward_zero_and_linearity():
    g, adj, X, W = setup(2)
    d = W.W2.shape[1]
    zero = gnn.backward(adj, X, W, np.zeros((g.num_nodes, d)))
    assert all(np.all(z == 0) for z in zero)
    G = np.random.default_rng(0).standard_normal((g.num_nodes, d))
    a = gnn.backward(adj, X, W, G)
    b = gnn.backward(adj, X, W, 2 * G)
    for x, y in zip(a, b):
        np.testing.assert_allclose(y, 2 * x, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_backward_matches_finite_differences(seed):
    g, adj, X, W = setup(seed)
    G = np.random.default_rng(seed).standard_normal((g.num_nodes, W.W2.shape[1]))

    def loss(params):
        return float(np.sum(G * gnn.forward(adj, X, gnn.GcnWeights(*params))))

    analytic = gnn.backward(adj, X, W, G)
    numeric = finite_difference(loss, [W.W1, W.W2])
    assert max_relative_error(analytic, numeric) < 1e-4


def test_shape_mismatch_rejected():
    g, adj, X, W = setup(0)
    with pytest.raises(ValueError):
        gnn.forward(adj, np.hstack([X, X]), W)


def test_checkpoint_roundtrip(tmp_path):
    W = gnn.init_weights(3, 5, 2, seed=0)
    gnn.save_checkpoint(tmp_path, W, "oc", {"k": 1}, [np.arange(4.0)])
    W2, meta, rest = gnn.load_checkpoint(tmp_path)
    np.testing.assert_array_equal(W2.W1, W.W1.astype(np.float32))
    assert meta["backbone"] == "oc" and meta["extra"] == {"k": 1}
    assert rest.tolist() == [0, 1, 2, 3]
