"""Cold scorer: dropout-masked representations concatenated with side features,
mapped by per-side MLPs and scored by inner product.

The simplified DropoutNet baseline reuses the same towers on raw embeddings.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Mlp:
    """Tanh hidden layers, linear output. Weights are ``(in, out)``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def init(cls, in_dim: int, hidden: int, out_dim: int, depth: int, rng: np.random.Generator) -> "Mlp":
        dims = [in_dim] + [hidden] * depth + [out_dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def zeros_like(self) -> "Mlp":
        return Mlp([np.zeros_like(W) for W in self.weights], [np.zeros_like(b) for b in self.biases])

    def copy(self) -> "Mlp":
        return Mlp([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cached(x)[0]

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"MLP expects input dim {self.in_dim}, got {x.shape[-1]}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for n, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if n < last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> tuple["Mlp", np.ndarray]:
        """Reverse pass from cached activations; returns (parameter grads, input grad)."""
        grads = self.zeros_like()
        g = np.asarray(grad_out, dtype=np.float64)
        last = len(self.weights) - 1
        for n in range(last, -1, -1):
            if n < last:
                g = g * (1.0 - acts[n + 1] ** 2)
            x_in = acts[n]
            if x_in.ndim == 1:
                grads.weights[n] = np.outer(x_in, g)
                grads.biases[n] = g.copy()
            else:
                grads.weights[n] = x_in.T @ g
                grads.biases[n] = g.sum(axis=0)
            g = g @ self.weights[n].T
        return grads, g


def mlp_backward(mlp: Mlp, x: np.ndarray, upstream_grad: np.ndarray) -> tuple[Mlp, np.ndarray]:
    _, acts = mlp.forward_cached(x)
    return mlp.backward(acts, upstream_grad)


def draw_mask(n: int, tau: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli(tau) drops: True means the representation is replaced by zero."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    return rng.random(n) < tau


def mask(x: np.ndarray, tau: float, rng: np.random.Generator) -> np.ndarray:
    """Whole-vector dropout: zero with probability tau, otherwise unchanged."""
    return np.zeros_like(x) if draw_mask(1, tau, rng)[0] else x


def patch(masked_rep: np.ndarray, features: np.ndarray | None, mlp: Mlp) -> np.ndarray:
    """``mlp(masked_rep || features)``; rows are batched along the leading axis."""
    masked_rep = np.asarray(masked_rep, dtype=np.float64)
    if features is None:
        features = np.zeros(masked_rep.shape[:-1] + (0,))
    z = np.concatenate([masked_rep, np.asarray(features, dtype=np.float64)], axis=-1)
    return mlp.forward(z)


patch_user = patch
patch_item = patch


def cold_score(x_uc: np.ndarray, x_ic: np.ndarray) -> float:
    if x_uc.shape != x_ic.shape:
        raise ValueError("patched representation dims differ")
    return float(np.dot(x_uc, x_ic))


def dropoutnet_score(
    u_embed_masked: np.ndarray,
    c_u: np.ndarray | None,
    i_embed_masked: np.ndarray,
    c_i: np.ndarray | None,
    mlps: tuple[Mlp, Mlp],
) -> float:
    """Two-tower score over raw (possibly zeroed) embeddings and features."""
    user_mlp, item_mlp = mlps
    return cold_score(patch(u_embed_masked, c_u, user_mlp), patch(i_embed_masked, c_i, item_mlp))


# --- checkpoints ----------------------------------------------------------------

MAGIC = b"GNPCKPT\0"
VERSION = 1


def _write_mlp(fh, mlp: Mlp) -> None:
    fh.write(struct.pack("<I", len(mlp.weights)))
    for W, b in zip(mlp.weights, mlp.biases):
        fh.write(struct.pack("<II", *W.shape))
        fh.write(np.ascontiguousarray(W, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def _read_mlp(buf: memoryview, off: int) -> tuple[Mlp, int]:
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    weights, biases = [], []
    for _ in range(n):
        rows, cols = struct.unpack_from("<II", buf, off)
        off += 8
        W = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=off).reshape(rows, cols)
        off += 4 * rows * cols
        b = np.frombuffer(buf, dtype="<f4", count=cols, offset=off)
        off += 4 * cols
        weights.append(W.astype(np.float64))
        biases.append(b.astype(np.float64))
    return Mlp(weights, biases), off


def save_checkpoint(path, user_weights: np.ndarray, item_weights: np.ndarray, user_mlp: Mlp, item_mlp: Mlp) -> None:
    """Header, adaptive layer weights (may be empty), then both towers; little-endian f32."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(user_weights)))
        fh.write(np.asarray(user_weights, dtype="<f4").tobytes())
        fh.write(np.asarray(item_weights, dtype="<f4").tobytes())
        _write_mlp(fh, user_mlp)
        _write_mlp(fh, item_mlp)


def load_checkpoint(path) -> tuple[np.ndarray, np.ndarray, Mlp, Mlp]:
    buf = memoryview(Path(path).read_bytes())
    if bytes(buf[:8]) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, n_layers = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    uw = np.frombuffer(buf, dtype="<f4", count=n_layers, offset=off).astype(np.float64)
    off += 4 * n_layers
    iw = np.frombuffer(buf, dtype="<f4", count=n_layers, offset=off).astype(np.float64)
    off += 4 * n_layers
    user_mlp, off = _read_mlp(buf, off)
    item_mlp, off = _read_mlp(buf, off)
    if off != len(buf):
        raise ValueError(f"{path}: trailing bytes after checkpoint payload")
    return uw, iw, user_mlp, item_mlp
