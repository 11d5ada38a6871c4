import numpy as np
import pytest
from conftest import identity_mlp
from scipy.stats import binomtest

from gnp.patching import (
    Mlp, cold_score, draw_mask, dropoutnet_score, load_checkpoint, mask, mlp_backward, patch,
    save_checkpoint,
)


def test_mask_extremes():
    rng = np.random.default_rng(0)
    x = np.array([1.0, -2.0, 3.0])
    for _ in range(20):
        assert mask(x, 0.0, rng) is x
        assert mask(x, 1.0, rng).tolist() == [0.0, 0.0, 0.0]


def test_mask_is_whole_vector():
    rng = np.random.default_rng(1)
    x = np.arange(1.0, 6.0)
    for _ in range(200):
        out = mask(x, 0.5, rng)
        assert (out == 0).all() or (out == x).all()


def test_mask_rate():
    drops = draw_mask(10_000, 0.3, np.random.default_rng(2))
    assert binomtest(int(drops.sum()), 10_000, 0.3).pvalue > 1e-3


def test_mask_rejects_bad_tau():
    with pytest.raises(ValueError):
        draw_mask(3, 1.5, np.random.default_rng(0))


def test_identity_tower():
    d, f = 3, 2
    rep = np.array([0.5, -1.0, 2.0])
    out = patch(rep, np.array([9.0, 9.0]), identity_mlp(d, f))
    np.testing.assert_array_equal(out, rep)


def test_zero_rep_and_features_give_bias():
    rng = np.random.default_rng(0)
    mlp = Mlp.init(5, 4, 3, 2, rng)
    mlp.biases[-1][:] = [0.1, 0.2, 0.3]
    # hidden biases are zero, so tanh(0) = 0 and only the output bias survives
    np.testing.assert_allclose(patch(np.zeros(3), np.zeros(2), mlp), [0.1, 0.2, 0.3])


def test_hand_tanh_network():
    # 2 -> 2 -> 2 with one tanh layer
    W1 = np.array([[1.0, 0.0], [0.0, 2.0]])
    b1 = np.array([0.0, -1.0])
    W2 = np.array([[1.0, 1.0], [-1.0, 0.5]])
    b2 = np.array([0.5, 0.0])
    mlp = Mlp([W1, W2], [b1, b2])
    out = patch(np.array([0.5]), np.array([1.0]), mlp)
    h = np.tanh([0.5, 1.0])
    np.testing.assert_allclose(out, [h[0] - h[1] + 0.5, h[0] + 0.5 * h[1]], atol=1e-12)


def test_no_features():
    mlp = identity_mlp(2, 0)
    np.testing.assert_array_equal(patch(np.array([1.0, 2.0]), None, mlp), [1.0, 2.0])


def test_init_shapes_and_glorot_bound():
    mlp = Mlp.init(10, 200, 8, 2, np.random.default_rng(0))
    assert [W.shape for W in mlp.weights] == [(10, 200), (200, 200), (200, 8)]
    assert np.abs(mlp.weights[1]).max() <= np.sqrt(6 / 400)
    assert all((b == 0).all() for b in mlp.biases)


def test_input_dim_checked():
    with pytest.raises(ValueError):
        Mlp.init(4, 3, 2, 1, np.random.default_rng(0)).forward(np.zeros(5))


def test_cold_score():
    assert cold_score(np.array([1.0, 2.0]), np.array([3.0, -1.0])) == 1.0
    with pytest.raises(ValueError):
        cold_score(np.ones(2), np.ones(3))


@pytest.mark.parametrize("depth", [0, 1, 2, 3])
def test_mlp_backward_matches_finite_differences(depth):
    rng = np.random.default_rng(depth)
    mlp = Mlp.init(5, 4, 3, depth, rng)
    for b in mlp.biases:
        b[:] = 0.1 * rng.standard_normal(b.shape)
    x = rng.standard_normal((6, 5))
    up = rng.standard_normal((6, 3))

    def f(m, inp):
        return float(np.sum(m.forward(inp) * up))

    grads, dx = mlp_backward(mlp, x, up)
    h = 1e-6
    for p, g in zip(mlp.arrays(), grads.arrays()):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            fp = f(mlp, x)
            p[idx] = old - h
            fm = f(mlp, x)
            p[idx] = old
            assert (fp - fm) / (2 * h) == pytest.approx(g[idx], rel=1e-5, abs=1e-8)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        assert (f(mlp, xp) - f(mlp, xm)) / (2 * h) == pytest.approx(dx[idx], rel=1e-5, abs=1e-8)


def test_dropoutnet_is_patching_on_raw_embeddings():
    rng = np.random.default_rng(3)
    u_mlp, i_mlp = Mlp.init(6, 5, 4, 2, rng), Mlp.init(7, 5, 4, 2, rng)
    eu, ei = rng.standard_normal(4), rng.standard_normal(4)
    cu, ci = rng.standard_normal(2), rng.standard_normal(3)
    expect = cold_score(patch(eu, cu, u_mlp), patch(ei, ci, i_mlp))
    assert dropoutnet_score(eu, cu, ei, ci, (u_mlp, i_mlp)) == expect
    # cold item side: zero placeholder
    z = dropoutnet_score(eu, cu, np.zeros(4), ci, (u_mlp, i_mlp))
    assert z == cold_score(patch(eu, cu, u_mlp), patch(np.zeros(4), ci, i_mlp))


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    u_mlp, i_mlp = Mlp.init(6, 5, 4, 2, rng), Mlp.init(7, 5, 4, 1, rng)
    uw, iw = rng.standard_normal(4), rng.standard_normal(4)
    save_checkpoint(tmp_path / "c.bin", uw, iw, u_mlp, i_mlp)
    uw2, iw2, u2, i2 = load_checkpoint(tmp_path / "c.bin")
    np.testing.assert_array_equal(uw2, uw.astype(np.float32))
    np.testing.assert_array_equal(iw2, iw.astype(np.float32))
    for a, b in zip(u_mlp.arrays() + i_mlp.arrays(), u2.arrays() + i2.arrays()):
        np.testing.assert_array_equal(b, a.astype(np.float32))
    # saving the reloaded model reproduces the file byte for byte
    save_checkpoint(tmp_path / "d.bin", uw2, iw2, u2, i2)
    assert (tmp_path / "c.bin").read_bytes() == (tmp_path / "d.bin").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"notackpt" + bytes(8))
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(tmp_path / "x.bin")
    rng = np.random.default_rng(0)
    save_checkpoint(tmp_path / "c.bin", np.ones(1), np.ones(1), Mlp.init(2, 2, 1, 1, rng), Mlp.init(2, 2, 1, 1, rng))
    (tmp_path / "c.bin").write_bytes((tmp_path / "c.bin").read_bytes() + b"\0")
    with pytest.raises(ValueError, match="trailing"):
        load_checkpoint(tmp_path / "c.bin")
