import numpy as np
import pytest

from gnp.data import DataError
from gnp.embedding import (
    EmbeddingStore, NumericalError, bpr_step, export_embeddings, export_matrix,
    import_embeddings, import_matrix, init_embeddings, train_bpr_mf,
)


def block_pairs(n_users=20, n_items=30, seed=0):
    rng = np.random.default_rng(seed)
    ub, ib = np.arange(n_users) % 2, np.arange(n_items) % 2
    mask = (ub[:, None] == ib[None, :]) & (rng.random((n_users, n_items)) < 0.5)
    return np.argwhere(mask)


def test_zero_epochs_returns_init():
    pairs = block_pairs()
    store = train_bpr_mf(pairs, 20, 30, dim=4, epochs=0, seed=5)
    rng = np.random.default_rng(5)
    U = init_embeddings(20, 4, rng)
    V = init_embeddings(30, 4, rng)
    np.testing.assert_array_equal(store.user_embeddings, U.astype(np.float32))
    np.testing.assert_array_equal(store.item_embeddings, V.astype(np.float32))
    assert store.history == []


def test_init_bounds():
    E = init_embeddings(100, 16, np.random.default_rng(0))
    assert np.abs(E).max() <= 0.25


def test_two_by_two_orders_preferences():
    pairs = np.array([[0, 0], [1, 1]])
    store = train_bpr_mf(pairs, 2, 2, dim=4, epochs=200, lr=0.1, seed=0, batch_size=1)
    s = store.user_embeddings @ store.item_embeddings.T
    assert s[0, 0] > s[0, 1]
    assert s[1, 1] > s[1, 0]


def test_hand_bpr_step():
    U = np.array([[0.5, -0.2]])
    V = np.array([[0.1, 0.3], [-0.4, 0.2]])
    lr, l2 = 0.1, 0.01
    eu, ei, ej = U[0].copy(), V[0].copy(), V[1].copy()
    x = 0.5 * 0.5 + (-0.2) * 0.1  # eu . (ei - ej) = 0.23
    g = 1 - 1 / (1 + np.exp(-x))
    loss = bpr_step(U, V, np.array([0]), np.array([0]), np.array([1]), lr, l2)
    assert loss[0] == pytest.approx(-np.log(1 / (1 + np.exp(-x))), abs=1e-12)
    np.testing.assert_allclose(U[0], eu + lr * (g * (ei - ej) - l2 * eu), atol=1e-6)
    np.testing.assert_allclose(V[0], ei + lr * (g * eu - l2 * ei), atol=1e-6)
    np.testing.assert_allclose(V[1], ej + lr * (-g * eu - l2 * ej), atol=1e-6)
    # g = 0.442752: 0.5 + 0.05 g - 0.0005 and -0.2 + 0.01 g + 0.0002
    np.testing.assert_allclose(U[0], [0.5216376, -0.1953725], atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_loss_trends_down(seed):
    store = train_bpr_mf(block_pairs(seed=seed), 20, 30, dim=8, epochs=30, lr=0.05, seed=seed, batch_size=8)
    h = np.asarray(store.history)
    assert h[-1] < h[0]
    # sampled negatives make single epochs noisy; 5-epoch windows must not climb
    w = h.reshape(-1, 5).mean(axis=1)
    assert all(b <= a * 1.05 for a, b in zip(w, w[1:]))


def test_divergence_aborts():
    with np.errstate(all="ignore"), pytest.raises(NumericalError, match="lower embedding.lr"):
        train_bpr_mf(block_pairs(), 20, 30, dim=4, epochs=5, lr=1e300, seed=0)


def test_trained_masks():
    store = train_bpr_mf(np.array([[0, 2]]), 3, 4, dim=2, epochs=1, seed=0)
    assert store.user_trained.tolist() == [True, False, False]
    assert store.item_trained.tolist() == [False, False, True, False]


def test_text_import_with_missing_rows(tmp_path):
    (tmp_path / "u.txt").write_text("3 2\n0 1 2\n2 0.5 -1\n")
    values, present = import_matrix(tmp_path / "u.txt")
    np.testing.assert_array_equal(values, [[1, 2], [0, 0], [0.5, -1]])
    assert present.tolist() == [True, False, True]


def test_import_errors(tmp_path):
    (tmp_path / "bad.txt").write_text("2 2\n0 1\n")
    with pytest.raises(DataError, match=":2:"):
        import_matrix(tmp_path / "bad.txt")
    (tmp_path / "oob.txt").write_text("2 2\n5 1 1\n")
    with pytest.raises(DataError, match="out of range"):
        import_matrix(tmp_path / "oob.txt")
    with pytest.raises(DataError, match="not found"):
        import_matrix(tmp_path / "nope.txt")


def test_dim_mismatch(tmp_path):
    (tmp_path / "u.txt").write_text("1 2\n0 1 2\n")
    (tmp_path / "i.txt").write_text("1 3\n0 1 2 3\n")
    with pytest.raises(DataError, match="dim mismatch"):
        import_embeddings(tmp_path / "u.txt", tmp_path / "i.txt")


@pytest.mark.parametrize("fmt", ["text", "binary"])
def test_export_import_roundtrip(tmp_path, fmt):
    rng = np.random.default_rng(0)
    store = EmbeddingStore(
        rng.standard_normal((4, 3)).astype(np.float32), rng.standard_normal((5, 3)).astype(np.float32),
        np.ones(4, bool), np.ones(5, bool),
    )
    export_embeddings(store, tmp_path / "u", tmp_path / "i", fmt)
    back = import_embeddings(tmp_path / "u", tmp_path / "i", fmt)
    np.testing.assert_array_equal(back.user_embeddings, store.user_embeddings)
    np.testing.assert_array_equal(back.item_embeddings, store.item_embeddings)


def test_binary_header(tmp_path):
    export_matrix(tmp_path / "m.bin", np.ones((3, 2)), "binary")
    assert np.frombuffer((tmp_path / "m.bin").read_bytes()[:12], "<u4").tolist() == [3, 0, 2]
