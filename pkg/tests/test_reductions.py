import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spectra.oracle import exact_effres
from spectra.reductions import (
    F_KINDS,
    Graph,
    PrecisionError,
    ReductionSpec,
    determinant_triangle_detect,
    gershgorin_ok,
    incidence_and_leverage,
    load_edge_list,
    nonisomorphic_graphs,
    random_graph,
    save_edge_list,
    sdd_to_laplacian,
    shifted_matrix,
    trace_inverse_via_effres,
    triangle_count_exact,
    triangle_detect,
    truncation_holds,
)

K3 = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
P4 = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
KINDS = [("schatten", 3.0), ("schatten", 2.5), ("schatten", 0.5), ("log_det", None),
         ("trace_inverse", None), ("trace_exp", None), ("entropy", None)]


def _random_sdd(n, seed):
    rng = np.random.default_rng(seed)
    W = -rng.random((n, n)) * (rng.random((n, n)) < 0.6)
    W = np.triu(W, 1)
    W = W + W.T
    return W + np.diag(-W.sum(axis=1) + rng.uniform(0.1, 1.0, n))


def test_schatten3_spec():
    s = ReductionSpec.schatten(3, 7)
    assert s.h == 0 and s.delta == pytest.approx(1 / 7) and s.eps1 == pytest.approx(7.0 ** -4)
    with pytest.raises(ValueError):
        ReductionSpec.schatten(2, 5)  # cubic coefficient is zero


def test_triangle_examples():
    assert triangle_detect(K3)
    assert not triangle_detect(P4)
    v = triangle_detect(K3, return_verdict=True)
    assert set(v.to_dict()) == {"triangle", "statistic", "threshold"}
    assert np.trace(np.linalg.matrix_power(K3.dense(), 3)) == 6


def test_triangle_count_examples():
    K4 = Graph.from_edges(4, [(i, j) for i in range(4) for j in range(i + 1, 4)])
    K33 = Graph.from_edges(6, [(i, j) for i in range(3) for j in range(3, 6)])
    assert triangle_count_exact(K4) == 4
    assert triangle_count_exact(K33) == 0


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 25), st.floats(0.05, 0.8), st.integers(0, 10_000))
def test_triangle_count_matches_trace(n, p, seed):
    g = random_graph(n, p, seed)
    A = g.dense()
    assert triangle_count_exact(g) == round(np.trace(A @ A @ A) / 6)


def test_random_graphs_schatten3():
    for seed in range(50):
        g = random_graph(20, 0.2, seed)
        assert triangle_detect(g) == (triangle_count_exact(g) > 0)


def test_four_vertex_graphs():
    gs = nonisomorphic_graphs(4)
    assert len(gs) == 11
    for g in gs:
        truth = triangle_count_exact(g) > 0
        for kind, p in KINDS:
            assert triangle_detect(g, ReductionSpec(kind, 4, p)) == truth, kind
        assert determinant_triangle_detect(g) == truth


@pytest.mark.parametrize("kind,p", KINDS)
def test_truncation_bound(kind, p):
    for n in range(3, 9):
        spec = ReductionSpec(kind, n, p)
        for seed in range(5):
            g = random_graph(n, 0.5, seed)
            assert truncation_holds(spec, g)
        full = Graph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])
        assert truncation_holds(spec, full)


def test_shift_is_gershgorin_sdd():
    for seed in range(10):
        g = random_graph(12, 0.4, seed)
        B = shifted_matrix(g, ReductionSpec.schatten(3, 12).delta * 0.999)
        assert gershgorin_ok(B)
        ev = np.linalg.eigvalsh(B)
        assert np.all((ev > 0) & (ev < 2))


def test_precision_infeasible():
    with pytest.raises(PrecisionError):
        triangle_detect(random_graph(40, 0.1, 0), ReductionSpec("trace_exp", 40))
    with pytest.raises(PrecisionError):
        determinant_triangle_detect(random_graph(6, 0.5, 0))


def test_determinant_examples():
    assert determinant_triangle_detect(K3)
    assert not determinant_triangle_detect(Graph.from_edges(4, []))


def test_sdd_embedding_examples():
    L, _ = sdd_to_laplacian(np.array([[2.0]]))
    assert np.array_equal(L, [[2, -2], [-2, 2]])
    L, _ = sdd_to_laplacian(2 * np.eye(2))
    assert np.array_equal(L[:2, 2], [-2, -2]) and L[2, 2] == 4
    for seed in range(5):
        L, _ = sdd_to_laplacian(_random_sdd(5, seed))
        assert np.all(np.abs(L @ np.ones(6)) <= 1e-12)
        off = L - np.diag(np.diag(L))
        assert np.all(off <= 0)
    with pytest.raises(ValueError):
        sdd_to_laplacian(np.array([[1.0, 1.0], [1.0, 3.0]]))
    with pytest.raises(ValueError):
        sdd_to_laplacian(np.array([[1.0, -1.0], [-1.0, 1.0]]))


def test_trace_inverse_examples():
    assert trace_inverse_via_effres(np.array([[2.0]])) == pytest.approx(0.5)
    assert exact_effres(np.array([[2.0, -2.0], [-2.0, 2.0]]), 0, 1) == pytest.approx(0.5)
    assert trace_inverse_via_effres(2 * np.eye(2)) == pytest.approx(1.0)
    for seed in range(20):
        M = _random_sdd(6, seed)
        ref = np.trace(np.linalg.inv(M))
        assert abs(trace_inverse_via_effres(M) - ref) <= 1e-10 * abs(ref)


def test_leverage_examples():
    B, lev = incidence_and_leverage(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    assert np.allclose(np.abs(B), [[1, 1]]) and lev(0) == pytest.approx(1.0)
    L3 = K3.dense()
    L3 = np.diag(L3.sum(axis=1)) - L3
    B, lev = incidence_and_leverage(L3)
    assert np.allclose(B.T @ B, L3, atol=1e-12)
    assert np.allclose(lev.all(), 2 / 3)
    rng = np.random.default_rng(0)
    n = 9
    Lt = np.zeros((n, n))
    for v in range(1, n):
        u = int(rng.integers(0, v))
        w = rng.uniform(0.5, 2)
        Lt[u, v] = Lt[v, u] = -w
    Lt += np.diag(-Lt.sum(axis=1))
    B, lev = incidence_and_leverage(Lt)
    assert np.allclose(B.T @ B, Lt, atol=1e-12)
    assert np.allclose(lev.all(), 1.0)
    with pytest.raises(ValueError):
        incidence_and_leverage(np.eye(3))


def test_edge_list_roundtrip(tmp_path):
    g = random_graph(10, 0.3, 1)
    p = tmp_path / "g.txt"
    save_edge_list(p, g)
    h = load_edge_list(p, n=10)
    assert np.array_equal(g.dense(), h.dense())


def test_graph_validation():
    with pytest.raises(ValueError):
        Graph.from_edges(3, [(0, 0)])
    with pytest.raises(ValueError):
        Graph.from_dense(np.array([[0, 1], [0, 0]]))


def test_kinds_listed():
    assert "determinant" in F_KINDS
