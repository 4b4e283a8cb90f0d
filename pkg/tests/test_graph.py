import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ridge.errors import DuplicateEdge, InvalidConfig, NodeIdOutOfRange, NoTriangles, SelfLoop
from ridge.graph import (
    SignedGraph, SsbmConfig, balance_degree, from_edge_list, round_half_up, split_edges,
    ssbm_cluster_sizes, ssbm_generate, symmetrize, triangle_census,
)


def brute_census(g: SignedGraph):
    """Oracle: check every node triple of the symmetrized graph."""
    u, v, s, _ = symmetrize(g)
    sign = {}
    for a, b, c in zip(u.tolist(), v.tolist(), s.tolist()):
        sign[(a, b)] = sign[(b, a)] = c
    total = bal = 0
    for i, j, k in itertools.combinations(range(g.node_count), 3):
        if (i, j) in sign and (j, k) in sign and (i, k) in sign:
            total += 1
            bal += sign[(i, j)] * sign[(j, k)] * sign[(i, k)] > 0
    return total, bal


def random_graph(rng, n, p):
    edges = []
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < p:
                edges.append((i, j, 1 if rng.random() < 0.7 else -1))
    return from_edge_list(edges, n)


def test_validation_errors():
    with pytest.raises(SelfLoop):
        from_edge_list([(0, 0, 1)], 2)
    with pytest.raises(NodeIdOutOfRange):
        from_edge_list([(0, 5, 1)], 2)
    with pytest.raises(DuplicateEdge):
        from_edge_list([(0, 1, 1), (0, 1, -1)], 2)
    with pytest.raises(ValueError):
        from_edge_list([(0, 1, 2)], 2)


def test_reciprocal_pairs_are_distinct_edges():
    g = from_edge_list([(0, 1, 1), (1, 0, -1)], 2)
    assert g.m == 2
    u, v, s, conflicts = symmetrize(g)
    assert len(u) == 0 and conflicts == 1


def test_single_triangles():
    bal = triangle_census(from_edge_list([(0, 1, 1), (1, 2, 1), (2, 0, 1)], 3))
    assert (bal.total, bal.balanced, bal.balance_degree) == (1, 1, 1.0)
    unb = triangle_census(from_edge_list([(0, 1, 1), (1, 2, 1), (2, 0, -1)], 3))
    assert (unb.total, unb.unbalanced) == (1, 1)
    two_neg = triangle_census(from_edge_list([(0, 1, -1), (1, 2, -1), (0, 2, 1)], 3))
    assert two_neg.balanced == 1


def test_no_triangles_raises():
    with pytest.raises(NoTriangles):
        balance_degree(from_edge_list([(0, 1, 1), (1, 2, 1)], 3))


@pytest.mark.parametrize("seed", range(6))
def test_census_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 25, 0.25)
    expected = brute_census(g)
    for method in ("trace", "enumerate"):
        c = triangle_census(g, method)
        assert (c.total, c.balanced) == expected


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 40), st.floats(0.05, 0.6), st.integers(0, 10_000))
def test_trace_equals_enumeration(n, p, seed):
    g = random_graph(np.random.default_rng(seed), n, p)
    a, b = triangle_census(g, "trace"), triangle_census(g, "enumerate")
    assert (a.total, a.balanced, a.unbalanced) == (b.total, b.balanced, b.unbalanced)


def test_round_half_up():
    assert round_half_up(0.25 * 21522) == 5381
    assert round_half_up(2.5) == 3
    assert round_half_up(0.0) == 0


def test_cluster_sizes_linear_ratio():
    sizes = ssbm_cluster_sizes(500, 5, 1.5)
    assert sizes.sum() == 500
    assert np.all(np.diff(sizes) >= 0)
    assert sizes.max() / sizes.min() == pytest.approx(1.5, abs=0.03)
    # equal spacing up to rounding
    assert np.ptp(np.diff(sizes)) <= 1


def test_ssbm_deterministic_and_signs():
    cfg = SsbmConfig(n=120, k=3, p=0.1, rho=1.5, sign_flip=0.0, seed=4)
    g1, lab = ssbm_generate(cfg, return_labels=True)
    g2 = ssbm_generate(cfg)
    assert g1 == g2
    same = lab[g1.src] == lab[g1.dst]
    assert np.all(g1.sign[same] == 1) and np.all(g1.sign[~same] == -1)
    # one direction per unordered pair
    u, v, _, conflicts = symmetrize(g1)
    assert len(u) == g1.m and conflicts == 0


def test_ssbm_edge_count_binomial():
    cfg = SsbmConfig(n=400, k=5, p=0.05, seed=0)
    g = ssbm_generate(cfg)
    pairs = 400 * 399 / 2
    mean, sd = pairs * 0.05, np.sqrt(pairs * 0.05 * 0.95)
    assert abs(g.m - mean) < 5 * sd


def test_ssbm_flip_rate():
    cfg = SsbmConfig(n=400, k=2, p=0.1, sign_flip=0.2, seed=2)
    g, lab = ssbm_generate(cfg, return_labels=True)
    expected = np.where(lab[g.src] == lab[g.dst], 1, -1)
    rate = np.mean(g.sign != expected)
    assert abs(rate - 0.2) < 5 * np.sqrt(0.2 * 0.8 / g.m)


def test_ssbm_two_clusters_fully_balanced():
    g = ssbm_generate(SsbmConfig(n=150, k=2, p=0.2, sign_flip=0.0, seed=1))
    assert balance_degree(g) == 1.0


def test_ssbm_five_clusters_only_three_cluster_triangles_unbalanced():
    g, lab = ssbm_generate(SsbmConfig(n=150, k=5, p=0.2, sign_flip=0.0, seed=1), return_labels=True)
    c = triangle_census(g)
    adj = {}
    for a, b in zip(g.src.tolist(), g.dst.tolist()):
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    spanning3 = 0
    for i, j, k in itertools.combinations(range(g.node_count), 3):
        if j in adj.get(i, ()) and k in adj.get(j, ()) and k in adj.get(i, ()):
            spanning3 += len({lab[i], lab[j], lab[k]}) == 3
    assert c.unbalanced == spanning3


def test_ssbm_invalid_config():
    with pytest.raises(InvalidConfig):
        ssbm_generate(SsbmConfig(n=3, k=5))
    with pytest.raises(InvalidConfig):
        ssbm_generate(SsbmConfig(n=100, p=1.5))
    with pytest.raises(InvalidConfig):
        ssbm_generate(SsbmConfig(n=100, rho=0.5))


def test_split_edges_partition():
    g = ssbm_generate(SsbmConfig(n=100, k=2, p=0.2, seed=0))
    s = split_edges(g, 0.8, seed=3)
    assert len(s.train_idx) == round_half_up(0.8 * g.m)
    assert len(np.intersect1d(s.train_idx, s.test_idx)) == 0
    assert len(s.train_idx) + len(s.test_idx) == g.m
    assert s.train.node_count == g.node_count
    s2 = split_edges(g, 0.8, seed=3)
    assert np.array_equal(s.train_idx, s2.train_idx)
