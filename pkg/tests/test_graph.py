import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gnp.graph import (
    ITEM, USER, build_graph, exact_layer_means, load_layer_reps, precompute_layer_reps,
    sample_walks, save_layer_reps, walk_rng,
)


def test_empty_graph():
    g = build_graph(np.zeros((0, 2), int), 3, 2)
    assert g.degrees(USER).tolist() == [0, 0, 0]
    assert g.degrees(ITEM).tolist() == [0, 0]


def test_hand_adjacency():
    g = build_graph(np.array([[0, 0], [0, 1], [1, 1]]), 2, 2)
    assert g.user_adj == [[0, 1], [1]]
    assert g.item_adj == [[0], [0, 1]]


def test_out_of_range():
    with pytest.raises(ValueError):
        build_graph(np.array([[2, 0]]), 2, 2)


def test_handshake_on_split(small_split):
    s = small_split
    g = build_graph(s.model_train, s.n_users, s.n_items)
    assert g.degrees(USER).sum() + g.degrees(ITEM).sum() == 2 * len(s.model_train)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 8)), max_size=40))
def test_symmetric_sorted_unique(edges):
    g = build_graph(np.array(edges, dtype=int).reshape(-1, 2), 7, 9)
    for u, nbrs in enumerate(g.user_adj):
        assert nbrs == sorted(set(nbrs))
        for i in nbrs:
            assert u in g.item_adj[i]
    for i, nbrs in enumerate(g.item_adj):
        assert nbrs == sorted(set(nbrs))
        for u in nbrs:
            assert i in g.user_adj[u]


def test_forced_path():
    g = build_graph(np.array([[0, 0]]), 1, 1)
    ws = sample_walks(g, (USER, 0), 10, 2, np.random.default_rng(0))
    assert ws.walks.tolist() == [[0, 0, 0]] * 10
    assert ws.sides().tolist() == [[USER, ITEM, USER]] * 10


def test_default_walk_shape(small_split):
    g = build_graph(small_split.embed_train, small_split.n_users, small_split.n_items)
    ws = sample_walks(g, (USER, int(small_split.embed_train[0, 0])), 25, 3, np.random.default_rng(0))
    assert ws.walks.shape == (25, 4)


def test_first_step_is_uniform():
    g = build_graph(np.array([[0, 0], [0, 1], [0, 2]]), 1, 3)
    ws = sample_walks(g, (USER, 0), 30000, 1, np.random.default_rng(3))
    counts = np.bincount(ws.walks[:, 1], minlength=3)
    n, p = 30000, 1 / 3
    assert np.all(np.abs(counts - n * p) < 3 * np.sqrt(n * p * (1 - p)))


def test_dead_end_self_loops():
    g = build_graph(np.array([[1, 0]]), 2, 1)
    ws = sample_walks(g, (USER, 0), 4, 3, np.random.default_rng(0))
    assert ws.walks.tolist() == [[0, 0, 0, 0]] * 4
    assert ws.sides().tolist() == [[USER] * 4] * 4


def random_graph(seed, n_users=4, n_items=6, p=0.4):
    rng = np.random.default_rng(seed)
    edges = np.argwhere(rng.random((n_users, n_items)) < p)
    return build_graph(edges, n_users, n_items)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 5))
def test_walks_alternate(seed, k):
    g = random_graph(seed)
    rng = np.random.default_rng(seed)
    for origin in [(USER, 0), (ITEM, 1)]:
        ws = sample_walks(g, origin, 20, k, rng)
        sides = ws.sides()
        assert (ws.walks[:, 0] == origin[1]).all()
        for k_ in range(1, k + 1):
            moved = sides[:, k_] != sides[:, k_ - 1]
            assert (moved | ws.stuck[:, k_]).all()
            # every hop lands on a true neighbour
            for s in range(20):
                if moved[s]:
                    prev_side, prev = sides[s, k_ - 1], ws.walks[s, k_ - 1]
                    assert ws.walks[s, k_] in g.neighbors(prev_side, prev)


def test_walks_deterministic():
    g = random_graph(1)
    a = sample_walks(g, (USER, 0), 30, 3, walk_rng(9, USER, 0))
    b = sample_walks(g, (USER, 0), 30, 3, walk_rng(9, USER, 0))
    np.testing.assert_array_equal(a.walks, b.walks)


def test_exact_means_k0():
    g = random_graph(2)
    U = np.arange(8.0).reshape(4, 2)
    V = -np.arange(12.0).reshape(6, 2)
    np.testing.assert_array_equal(exact_layer_means(g, (USER, 2), 0, U, V), U[[2]])


def test_exact_means_forced_path():
    g = build_graph(np.array([[0, 0]]), 1, 1)
    U, V = np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]])
    out = exact_layer_means(g, (USER, 0), 4, U, V)
    np.testing.assert_array_equal(out, [[1, 2], [3, 4], [1, 2], [3, 4], [1, 2]])


def test_exact_means_hand_toy():
    # u0-i0, u0-i1, u1-i1. From u0: step 1 -> i0, i1 at 1/2 each;
    # step 2 -> u0 with 1/2 + 1/4, u1 with 1/4.
    g = build_graph(np.array([[0, 0], [0, 1], [1, 1]]), 2, 2)
    U = np.array([[1.0, 0.0], [0.0, 1.0]])
    V = np.array([[2.0, 0.0], [0.0, 2.0]])
    out = exact_layer_means(g, (USER, 0), 2, U, V)
    np.testing.assert_allclose(out, [[1, 0], [1, 1], [0.75, 0.25]], atol=1e-15)
    # from i1: step 1 -> u0, u1 at 1/2; step 2 -> i0 1/4, i1 1/4 + 1/2
    out = exact_layer_means(g, (ITEM, 1), 2, U, V)
    np.testing.assert_allclose(out, [[0, 2], [0.5, 0.5], [0.5, 1.5]], atol=1e-15)


def test_layer_rep_cache_roundtrip(tmp_path):
    reps = np.random.default_rng(0).standard_normal((5, 4, 3)).astype(np.float32)
    save_layer_reps(tmp_path / "r.bin", reps)
    raw = (tmp_path / "r.bin").read_bytes()
    assert np.frombuffer(raw[:12], "<u4").tolist() == [5, 3, 3]
    np.testing.assert_array_equal(load_layer_reps(tmp_path / "r.bin"), reps)


def test_precompute_anchors_layer_zero():
    g = random_graph(4)
    rng = np.random.default_rng(0)
    U, V = rng.standard_normal((4, 3)), rng.standard_normal((6, 3))
    ur, ir = precompute_layer_reps(g, U, V, 5, 2, seed=1)
    np.testing.assert_array_equal(ur[:, 0], U)
    np.testing.assert_array_equal(ir[:, 0], V)
    ur0, _ = precompute_layer_reps(g, U, V, 5, 0, seed=1)
    assert ur0.shape == (4, 1, 3)
