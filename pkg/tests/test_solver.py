import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_factors
from epimatch.affinity import assemble_dense_affinity
from epimatch.errors import DimMismatch
from epimatch.evaluation import matching_accuracy
from epimatch.scenegen import (ChangeModel, NoiseModel, PairConfig, SceneConfig, ViewpointProtocol,
                               generate_pair)
from epimatch.solver import (METHODS, Assignment, MatchOptions, graph_match, infer_matching,
                             leading_eigenvector_power, match_enn, match_nn, match_pair, method_spec,
                             nn_scores, reshape_scores, score_pair, spectral_scores)
from epimatch.graph import build_object_graph


def clean_config(**scene):
    return PairConfig(SceneConfig(**scene), NoiseModel.none(), ChangeModel(0.0))


def brute_force_rule(s, gamma):
    """Literal evaluation of the mutual-argmax rule, lowest index on ties."""
    n, m = s.shape
    pairs = []
    for i in range(n):
        for j in range(m):
            row_best = min(t for t in range(m) if s[i, t] == s[i].max())
            col_best = min(t for t in range(n) if s[t, j] == s[:, j].max())
            if row_best == j and col_best == i and s[i, j] > gamma:
                pairs.append((i, j))
    return pairs


def max_matching_size(allowed):
    n, m = allowed.shape
    best = 0
    for k in range(min(n, m), 0, -1):
        for rows in itertools.combinations(range(n), k):
            for cols in itertools.permutations(range(m), k):
                if all(allowed[r, c] for r, c in zip(rows, cols)):
                    return k
    return best


# --- power iteration ---------------------------------------------------------------

def test_power_dominant_axis():
    res = leading_eigenvector_power(np.diag([3.0, 1.0, 1.0, 1.0]))
    assert res.converged
    np.testing.assert_allclose(res.vector, [1, 0, 0, 0], atol=1e-9)
    assert res.eigenvalue == pytest.approx(3.0)


def test_power_identity_satisfies_residual_only():
    res = leading_eigenvector_power(np.eye(5))
    assert res.converged
    assert res.residual <= 1e-10 * res.eigenvalue
    assert np.linalg.norm(res.vector) == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(20))
def test_power_agrees_with_dense_eigensolver(seed):
    f = random_factors(np.random.default_rng(seed))
    M = assemble_dense_affinity(f)
    vals, vecs = np.linalg.eigh(M)
    res = leading_eigenvector_power(f)
    assert np.all(res.vector >= -1e-12)
    if len(vals) == 1 or vals[-1] - vals[-2] > 1e-3 * vals[-1]:
        assert abs(res.vector @ vecs[:, -1]) >= 1 - 1e-8
    assert np.linalg.norm(M @ res.vector - res.eigenvalue * res.vector) <= 1e-10 * res.eigenvalue * 1.0001


def test_power_reports_nonconvergence():
    res = leading_eigenvector_power(np.diag([2.0, 1.0]), max_iter=1, v0=np.array([1.0, 1.0]))
    assert not res.converged
    assert res.iterations == 1


def test_power_zero_matrix():
    res = leading_eigenvector_power(np.zeros((3, 3)))
    assert res.converged and res.eigenvalue == 0.0


# --- reshape ---------------------------------------------------------------------

def test_reshape_examples():
    np.testing.assert_array_equal(reshape_scores([1, 0, 0, 0], 2, 2).s, [[1, 0], [0, 0]])
    s = reshape_scores(np.eye(6)[5], 2, 3).s
    assert s[1, 2] == 1 and s.sum() == 1


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 1000))
def test_reshape_roundtrip(n, m, seed):
    v = np.random.default_rng(seed).random(n * m)
    np.testing.assert_array_equal(reshape_scores(v, n, m).s.ravel(), v)


def test_reshape_length_check():
    with pytest.raises(DimMismatch):
        reshape_scores(np.ones(5), 2, 3)


# --- inference ---------------------------------------------------------------------

@pytest.mark.parametrize("s, pairs", [
    ([[0.9, 0.1], [0.2, 0.8]], [(0, 0), (1, 1)]),
    ([[0.4, 0.1], [0.2, 0.3]], []),
    ([[0.9, 0.8], [0.85, 0.1]], [(0, 0)]),
])
def test_infer_examples(s, pairs):
    a = infer_matching(np.array(s), 0.5)
    assert a.pairs == pairs
    assert sorted(a.unmatched1 + [i for i, _ in a.pairs]) == [0, 1]


def test_infer_threshold_is_strict():
    assert infer_matching(np.array([[0.5]]), 0.5).pairs == []
    assert infer_matching(np.array([[0.5]]), 0.49).pairs == [(0, 0)]


def test_infer_ties_go_to_lowest_index():
    a = infer_matching(np.array([[0.7, 0.7], [0.7, 0.7]]), 0.0)
    assert a.pairs == [(0, 0)]


def test_infer_empty_and_negative_gamma():
    a = infer_matching(np.zeros((0, 3)), 0.5)
    assert a.pairs == [] and a.unmatched2 == [0, 1, 2]
    with pytest.raises(ValueError):
        infer_matching(np.ones((2, 2)), -0.1)


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
              elements=st.sampled_from([0.0, 0.1, 0.3, 0.5, 0.7, 0.9])),
       st.sampled_from([0.0, 0.2, 0.5]))
def test_infer_matches_brute_force_rule(s, gamma):
    a = infer_matching(s, gamma)
    assert a.pairs == brute_force_rule(s, gamma)
    allowed = s > gamma
    assert len(a.pairs) <= max_matching_size(allowed)


@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.floats(0, 1)),
       st.floats(0, 1))
def test_infer_output_is_one_to_one_cover(s, gamma):
    a = infer_matching(s, gamma)
    rows = [i for i, _ in a.pairs] + a.unmatched1
    cols = [j for _, j in a.pairs] + a.unmatched2
    assert sorted(rows) == list(range(s.shape[0]))
    assert sorted(cols) == list(range(s.shape[1]))
    for (i, j), c in zip(a.pairs, a.confidence):
        assert s[i, j] > gamma and c == s[i, j]
        assert s[i, j] == s[i].max() == s[:, j].max()


def test_assignment_partners_and_from_entries():
    a = Assignment.from_entries([(0, 1), (1, -1), (-1, 0)])
    assert a.pairs == [(0, 1)] and a.unmatched1 == [1] and a.unmatched2 == [0]
    np.testing.assert_array_equal(a.partners1(), [1, -1])
    np.testing.assert_array_equal(a.partners2(), [-1, 0])
    b = Assignment.from_entries([(0, 0)], n=3, m=2)
    assert b.unmatched1 == [1, 2] and b.unmatched2 == [1]


# --- baselines ----------------------------------------------------------------------

def test_nn_identical_features_give_identity():
    x = np.hstack([np.eye(4), np.zeros((4, 2))])
    a = match_nn(x, x, 0.1)
    assert a.pairs == [(i, i) for i in range(4)]


def test_nn_orthogonal_features_stay_unmatched():
    x1 = np.hstack([np.eye(4)[:2], np.zeros((2, 2))])
    x2 = np.hstack([np.eye(4)[2:], np.zeros((2, 2))])
    a = match_nn(x1, x2, 0.5)
    assert a.pairs == [] and a.unmatched1 == [0, 1]


def test_nn_scores_are_unit_norm(rng):
    s = nn_scores(rng.random((4, 6)), rng.random((5, 6))).s
    assert np.linalg.norm(s) == pytest.approx(1.0, abs=1e-12)
    assert np.all(s >= 0)


@pytest.mark.parametrize("seed", range(5))
def test_nn_matches_brute_force_mutual_neighbours(seed):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.random((5, 4)), rng.random((6, 4))
    sim = np.maximum(x1 @ x2.T, 0)
    sim = sim / np.linalg.norm(sim)
    expected = [(i, j) for i in range(5) for j in range(6)
                if sim[i].argmax() == j and sim[:, j].argmax() == i and sim[i, j] > 0.1]
    assert match_nn(x1, x2, 0.1).pairs == expected


def test_enn_all_ones_penalty_is_nn(rng):
    x1, x2 = rng.random((4, 5)), rng.random((4, 5))
    assert match_enn(x1, x2, np.ones((4, 4)), 0.2).pairs == match_nn(x1, x2, 0.2).pairs


def test_enn_penalty_overrides_confusing_descriptors():
    # descriptors prefer the swapped pairing; geometry only allows the true one
    x1 = np.array([[1.0, 0.0], [0.0, 1.0]])
    x2 = np.array([[0.3, 1.0], [1.0, 0.3]])
    assert match_nn(x1, x2, 0.0).pairs == [(0, 1), (1, 0)]
    assert match_enn(x1, x2, np.eye(2), 0.0).pairs == [(0, 0), (1, 1)]


def test_baseline_dim_checks():
    with pytest.raises(DimMismatch):
        match_nn(np.ones((2, 3)), np.ones((2, 4)))


# --- graph matching ---------------------------------------------------------------------

def test_graph_match_noise_free_set1_is_exact():
    pair = generate_pair(ViewpointProtocol.from_set(1), 3, clean_config())
    g1 = build_object_graph(pair.detections1, "dt", pair.image_size)
    g2 = build_object_graph(pair.detections2, "dt", pair.image_size)
    scores, a = graph_match(g1, g2, None, None, MatchOptions(gamma=0.0))
    assert matching_accuracy(a, pair) == 1.0
    assert np.linalg.norm(scores.s) == pytest.approx(1.0, abs=1e-9)
    assert scores.converged


def test_spectral_scores_are_raw_eigenvector():
    f = random_factors(np.random.default_rng(7), 4, 5)
    out = spectral_scores(f)
    res = leading_eigenvector_power(f)
    np.testing.assert_array_equal(out.s, np.abs(res.vector).reshape(4, 5))
    # no bi-stochastic rebalancing: row sums are left as they come
    assert np.ptp(out.s.sum(axis=1)) > 1e-3


def test_edge_free_graph_matching_equals_normalized_nn(rng):
    pair = generate_pair(ViewpointProtocol.from_set(3), 11)
    g1 = build_object_graph(pair.detections1, "dt", pair.image_size)
    g2 = build_object_graph(pair.detections2, "dt", pair.image_size)
    g1 = type(g1)(g1.nodes, [], "dt", *pair.image_size)
    g2 = type(g2)(g2.nodes, [], "dt", *pair.image_size)
    scores, _ = graph_match(g1, g2)
    np.testing.assert_allclose(scores.s, score_pair("NN", pair).s, atol=1e-15)


@pytest.mark.parametrize("method", METHODS)
def test_every_method_scores_a_pair(method):
    pair = generate_pair(ViewpointProtocol.from_set(4), 5)
    scores, a = match_pair(method, pair, options=MatchOptions(gamma=0.0))
    assert scores.s.shape == (pair.n, pair.m)
    assert np.linalg.norm(scores.s) == pytest.approx(1.0, abs=1e-9)
    assert 0.0 <= matching_accuracy(a, pair) <= 1.0


def test_nn_ignores_fundamental_matrix():
    pair = generate_pair(ViewpointProtocol.from_set(4), 5)
    stripped = type(pair)(**{**pair.__dict__, "f": None})
    np.testing.assert_array_equal(score_pair("NN", pair).s, score_pair("NN", stripped).s)


def test_method_spec_table():
    assert method_spec("EGMNet-DT") == (True, True, "dt")
    assert method_spec("GMN") == (True, False, "dt")
    with pytest.raises(ValueError):
        method_spec("SuperGlue")
