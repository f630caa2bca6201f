import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_factors
from epimatch.affinity import (DENSE_LIMIT, AffinityFactors, affinity_matvec, assemble_dense_affinity,
                               build_factors, default_lambda, edge_affinity, matvec_edge_grads,
                               node_affinity, symmetric_lambda)
from epimatch.errors import DimMismatch, TooLarge
from epimatch.graph import build_object_graph, edge_feature_matrix, node_feature_matrix
from epimatch.scenegen import Detection


def test_node_affinity_identical_unit_descriptors():
    x = np.hstack([np.eye(3), np.zeros((3, 2))])
    np.testing.assert_allclose(np.diag(node_affinity(x, x)), 1.0)


def test_node_affinity_orthogonal_is_zero():
    x1 = np.array([[1.0, 0.0, 0.0, 0.0]])
    x2 = np.array([[0.0, 1.0, 0.0, 0.0]])
    assert node_affinity(x1, x2)[0, 0] == 0.0


def test_node_affinity_is_rectified_and_scaled(rng):
    x1, x2 = rng.standard_normal((4, 5)), rng.standard_normal((3, 5))
    raw = node_affinity(x1, x2)
    np.testing.assert_allclose(raw, np.maximum(x1 @ x2.T, 0))
    np.testing.assert_allclose(node_affinity(x1, x2, np.full((4, 3), 0.5)), raw / 2)
    np.testing.assert_array_equal(node_affinity(x1, x2, np.ones((4, 3))), raw)


@pytest.mark.parametrize("s1, s2, pen", [((3, 4), (3, 5), None), ((3, 4), (2, 4), np.ones((2, 2)))])
def test_node_affinity_dim_checks(s1, s2, pen):
    with pytest.raises(DimMismatch):
        node_affinity(np.ones(s1), np.ones(s2), pen)


def test_edge_affinity_identity_on_orthonormal_rows():
    h = np.eye(4)[:3]
    np.testing.assert_allclose(edge_affinity(h, h, np.eye(4)), np.eye(3))


def test_edge_affinity_zero_lambda(rng):
    assert not np.any(edge_affinity(rng.random((3, 4)), rng.random((2, 4)), np.zeros((4, 4))))


def test_edge_affinity_triple_loop_oracle(rng):
    h1, h2, lam = rng.standard_normal((4, 5)), rng.standard_normal((3, 5)), rng.standard_normal((5, 5))
    lam = symmetric_lambda(lam)
    out = edge_affinity(h1, h2, lam)
    for e1 in range(4):
        for e2 in range(3):
            acc = sum(h1[e1, a] * lam[a, b] * h2[e2, b] for a in range(5) for b in range(5))
            assert out[e1, e2] == pytest.approx(max(0.0, acc), abs=1e-12)


def test_edge_affinity_dim_check(rng):
    with pytest.raises(DimMismatch):
        edge_affinity(rng.random((2, 4)), rng.random((2, 4)), np.eye(3))


def test_symmetric_lambda(rng):
    a = rng.standard_normal((4, 4))
    s = symmetric_lambda(a)
    np.testing.assert_array_equal(s, s.T)
    np.testing.assert_allclose(s, (a + a.T) / 2)
    with pytest.raises(DimMismatch):
        symmetric_lambda(np.ones((2, 3)))


def test_default_lambda_structure():
    lam = default_lambda(3)
    assert lam.shape == (8, 8)
    np.testing.assert_allclose(np.diag(lam), [0.15] * 3 + [0.0] * 3 + [1.2] * 2)
    assert np.count_nonzero(lam - np.diag(np.diag(lam))) == 0


# --- dense assembly -------------------------------------------------------------

def test_dense_without_edges_is_diagonal(rng):
    mp = rng.random((3, 2))
    f = AffinityFactors(mp, np.zeros((0, 0)), [], [], [], [])
    np.testing.assert_array_equal(assemble_dense_affinity(f), np.diag(mp.ravel()))


def test_dense_hand_assembled_two_by_two():
    f = AffinityFactors(np.zeros((2, 2)), [[1.0]], [0], [1], [0], [1])
    M = assemble_dense_affinity(f)
    expected = np.zeros((4, 4))
    expected[0, 3] = expected[3, 0] = 1.0      # (0,0) <-> (1,1)
    np.testing.assert_array_equal(M, expected)


def test_dense_crossed_links_hand_assembled():
    f = AffinityFactors(np.zeros((2, 2)), [[0.0]], [0], [1], [0], [1], me_cross=[[2.0]])
    M = assemble_dense_affinity(f)
    expected = np.zeros((4, 4))
    expected[1, 2] = expected[2, 1] = 2.0      # (0,1) <-> (1,0)
    np.testing.assert_array_equal(M, expected)


@pytest.mark.parametrize("seed", range(10))
def test_dense_is_exactly_symmetric_and_nonnegative(seed):
    M = assemble_dense_affinity(random_factors(np.random.default_rng(seed)))
    np.testing.assert_array_equal(M, M.T)
    assert np.all(M >= 0)


def test_dense_size_guard():
    side = int(np.sqrt(DENSE_LIMIT)) + 1
    f = AffinityFactors(np.zeros((side, side)), np.zeros((0, 0)), [], [], [], [])
    with pytest.raises(TooLarge):
        assemble_dense_affinity(f)


def test_factors_reject_negative_affinities():
    with pytest.raises(ValueError):
        AffinityFactors(-np.ones((1, 1)), np.zeros((0, 0)), [], [], [], [])


# --- matvec ------------------------------------------------------------------------

def test_matvec_zero_vector(rng):
    f = random_factors(rng)
    np.testing.assert_array_equal(affinity_matvec(f, np.zeros(f.size)), 0.0)


def test_matvec_edge_free_is_elementwise(rng):
    mp = rng.random((3, 4))
    f = AffinityFactors(mp, np.zeros((0, 0)), [], [], [], [])
    v = rng.random(12)
    np.testing.assert_allclose(affinity_matvec(f, v), mp.ravel() * v)


@given(st.integers(0, 2 ** 32 - 1), st.booleans())
def test_matvec_matches_dense(seed, crossed):
    rng = np.random.default_rng(seed)
    f = random_factors(rng, crossed=crossed)
    v = rng.standard_normal(f.size)
    np.testing.assert_allclose(affinity_matvec(f, v), assemble_dense_affinity(f) @ v, atol=1e-9, rtol=0)


def test_matvec_length_check(rng):
    f = random_factors(rng, 2, 3)
    with pytest.raises(DimMismatch):
        affinity_matvec(f, np.ones(5))


def test_edge_gradients_match_finite_differences(rng):
    f = random_factors(rng, 4, 4, edge_prob=0.8)
    g, v = rng.standard_normal(f.size), rng.standard_normal(f.size)
    d_me, d_mc = matvec_edge_grads(f, g, v)
    h = 1e-6
    for e1, e2 in [(0, 0), (f.me.shape[0] - 1, f.me.shape[1] - 1)]:
        for name, grad in (("me", d_me), ("me_cross", d_mc)):
            base = getattr(f, name).copy()
            up, dn = base.copy(), base.copy()
            up[e1, e2] += h
            dn[e1, e2] -= h
            kw = dict(mp=f.mp, me=f.me, tails1=f.tails1, heads1=f.heads1, tails2=f.tails2,
                      heads2=f.heads2, me_cross=f.me_cross)
            kw[name] = up
            hi = g @ affinity_matvec(AffinityFactors(**kw), v)
            kw[name] = dn
            lo = g @ affinity_matvec(AffinityFactors(**kw), v)
            assert grad[e1, e2] == pytest.approx((hi - lo) / (2 * h), rel=1e-6, abs=1e-8)


# --- from graphs -------------------------------------------------------------------

def detections(rng, k, dim=3):
    out = []
    for i in range(k):
        d = rng.standard_normal(dim)
        out.append(Detection(i, np.r_[rng.uniform(0, 640), rng.uniform(0, 480), 20.0, 20.0],
                             d / np.linalg.norm(d)))
    return out


def test_all_ones_penalty_reproduces_plain_factors(rng):
    g1 = build_object_graph(detections(rng, 5), "dt", (640, 480))
    g2 = build_object_graph(detections(rng, 4), "dt", (640, 480))
    x1, x2 = node_feature_matrix(g1), node_feature_matrix(g2)
    h1, h2 = edge_feature_matrix(g1), edge_feature_matrix(g2)
    lam = default_lambda(3)
    plain = build_factors(g1, g2, x1, x2, h1, h2, lam)
    ones = build_factors(g1, g2, x1, x2, h1, h2, lam, np.ones((5, 4)))
    np.testing.assert_array_equal(assemble_dense_affinity(plain), assemble_dense_affinity(ones))


def test_build_factors_single_node_graph_has_no_edge_terms(rng):
    g1 = build_object_graph(detections(rng, 1), "dt", (640, 480))
    g2 = build_object_graph(detections(rng, 3), "dt", (640, 480))
    x1, x2 = node_feature_matrix(g1), node_feature_matrix(g2)
    f = build_factors(g1, g2, x1, x2, None, edge_feature_matrix(g2), default_lambda(3))
    assert f.me.shape == (0, g2.p)
    np.testing.assert_array_equal(assemble_dense_affinity(f), np.diag(f.mp.ravel()))
