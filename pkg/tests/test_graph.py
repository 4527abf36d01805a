import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lrgccf.data import from_pairs
from lrgccf.graph import (
    NormalizationMode,
    build_graph,
    compute_layers,
    from_edges,
    propagate,
    propagate_transpose,
)

from oracles import dense_layers, dense_operator, random_edges

TRIANGLE = [(0, 0), (0, 1), (1, 0)]
MODES = ["paper", "sqrt"]


def test_degrees_include_self_loop():
    g = build_graph(from_pairs(2, 2, TRIANGLE))
    assert g.d_user.tolist() == [3, 2]
    assert g.d_item.tolist() == [3, 2]
    assert g.items_of(0).tolist() == [0, 1]
    assert g.users_of(0).tolist() == [0, 1]


def test_single_edge():
    g = from_edges(1, 1, [(0, 0)])
    assert g.d_user.tolist() == [2] and g.d_item.tolist() == [2]


def test_empty_train_rejected():
    with pytest.raises(ValueError):
        from_pairs(1, 1, [])


def test_paper_mode_hand_coefficients():
    g = from_edges(2, 2, TRIANGLE)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(4, 3))
    out = propagate(g, "paper", X)
    expected = X[0] / 3 + X[2] / 9 + X[3] / 6
    np.testing.assert_allclose(out[0], expected, rtol=0, atol=1e-15)


@pytest.mark.parametrize("mode", MODES)
def test_zero_in_zero_out(mode):
    g = from_edges(2, 2, TRIANGLE)
    assert not propagate(g, mode, np.zeros((4, 5))).any()
    assert not propagate_transpose(g, mode, np.zeros((4, 5))).any()


def test_shape_mismatch():
    g = from_edges(2, 2, TRIANGLE)
    with pytest.raises(ValueError):
        propagate(g, "paper", np.zeros((3, 2)))
    with pytest.raises(ValueError):
        propagate_transpose(g, "sqrt", np.zeros(4))


@pytest.mark.parametrize("mode", MODES)
def test_dense_oracle_small_graphs(mode):
    rng = np.random.default_rng(1)
    for _ in range(20):
        M, N = rng.integers(1, 20, size=2)
        edges = random_edges(rng, M, N, rng.uniform(0.05, 0.6))
        g = from_edges(M, N, edges)
        P = dense_operator(M, N, edges, mode)
        X = rng.normal(size=(M + N, 4))
        assert np.max(np.abs(propagate(g, mode, X) - P @ X)) < 1e-12
        assert np.max(np.abs(propagate_transpose(g, mode, X) - P.T @ X)) < 1e-12


def test_sqrt_transpose_equals_forward():
    rng = np.random.default_rng(2)
    edges = random_edges(rng, 7, 9)
    g = from_edges(7, 9, edges)
    X = rng.normal(size=(16, 3))
    np.testing.assert_array_equal(propagate_transpose(g, "sqrt", X), propagate(g, "sqrt", X))


@pytest.mark.parametrize("mode", MODES)
def test_adjointness(mode):
    g = from_edges(2, 2, TRIANGLE)
    rng = np.random.default_rng(3)
    for _ in range(10):
        X, Y = rng.normal(size=(2, 4, 6))
        lhs = np.sum(propagate(g, mode, X) * Y)
        rhs = np.sum(X * propagate_transpose(g, mode, Y))
        assert abs(lhs - rhs) < 1e-10


def test_compute_layers():
    rng = np.random.default_rng(4)
    edges = random_edges(rng, 6, 8)
    g = from_edges(6, 8, edges)
    E0 = rng.normal(size=(14, 3))
    keep = E0.copy()
    assert len(compute_layers(g, "paper", E0, 0)) == 1
    layers = compute_layers(g, "paper", E0, 2)
    P = dense_operator(6, 8, edges, "paper")
    assert np.max(np.abs(layers[2] - P @ (P @ E0))) < 1e-12
    np.testing.assert_array_equal(E0, keep)
    assert layers[0] is E0
    with pytest.raises(ValueError):
        compute_layers(g, "paper", E0, -1)


@pytest.mark.parametrize("mode", MODES)
def test_one_hot_support_is_closed_neighbourhood(mode):
    rng = np.random.default_rng(5)
    M, N = 5, 6
    edges = random_edges(rng, M, N, 0.3)
    g = from_edges(M, N, edges)
    for node in range(M + N):
        E0 = np.zeros((M + N, 1))
        E0[node] = 1.0
        E1 = compute_layers(g, mode, E0, 1)[1]
        if node < M:
            hood = {node} | {M + i for i in g.items_of(node)}
        else:
            hood = {node} | set(g.users_of(node - M).tolist())
        assert set(np.flatnonzero(E1[:, 0]).tolist()) == hood


@pytest.mark.parametrize("mode", MODES)
def test_linearity(mode):
    rng = np.random.default_rng(6)
    g = from_edges(8, 5, random_edges(rng, 8, 5))
    for _ in range(10):
        a, b = rng.normal(size=2)
        X, Y = rng.normal(size=(2, 13, 4))
        lhs = propagate(g, mode, a * X + b * Y)
        rhs = a * propagate(g, mode, X) + b * propagate(g, mode, Y)
        assert np.max(np.abs(lhs - rhs)) < 1e-12


@given(st.integers(0, 10_000), st.sampled_from(MODES))
@settings(max_examples=40, deadline=None)
def test_permutation_equivariance(seed, mode):
    rng = np.random.default_rng(seed)
    M, N = rng.integers(2, 9, size=2)
    edges = random_edges(rng, M, N, 0.4)
    pu, pi = rng.permutation(M), rng.permutation(N)
    g = from_edges(M, N, edges)
    g2 = from_edges(M, N, [(pu[u], pi[i]) for u, i in edges])
    perm = np.concatenate([pu, M + pi])  # old node -> new node
    X = rng.normal(size=(M + N, 3))
    X2 = np.empty_like(X)
    X2[perm] = X
    out, out2 = propagate(g, mode, X), propagate(g2, mode, X2)
    assert np.max(np.abs(out2[perm] - out)) < 1e-12


@pytest.mark.parametrize("mode", MODES)
def test_locality(mode):
    # path u0-i0-u1-i1-u2: node u2 sits at distance 4 from u0
    g = from_edges(3, 2, [(0, 0), (1, 0), (1, 1), (2, 1)])
    rng = np.random.default_rng(7)
    X = rng.normal(size=(5, 2))
    Y = X.copy()
    Y[2] += 10.0  # perturb u2 only
    for k in range(4):
        a = compute_layers(g, mode, X, k)[-1]
        b = compute_layers(g, mode, Y, k)[-1]
        assert np.array_equal(a[0], b[0])
    a = compute_layers(g, mode, X, 4)[-1]
    b = compute_layers(g, mode, Y, 4)[-1]
    assert not np.array_equal(a[0], b[0])


def test_mode_parsing():
    assert NormalizationMode.parse("PaperPerNode") is NormalizationMode.PAPER
    assert NormalizationMode.parse("symmetric_sqrt") is NormalizationMode.SQRT
    with pytest.raises(ValueError):
        NormalizationMode.parse("rw")


def test_duplicate_edges_collapse():
    g = from_edges(1, 2, [(0, 1), (0, 1), (0, 0)])
    assert g.n_edges == 2 and g.d_user.tolist() == [3]


def test_bitwise_deterministic():
    rng = np.random.default_rng(8)
    g = from_edges(30, 40, random_edges(rng, 30, 40, 0.2))
    X = rng.normal(size=(70, 8))
    assert propagate(g, "sqrt", X).tobytes() == propagate(g, "sqrt", X.copy()).tobytes()
