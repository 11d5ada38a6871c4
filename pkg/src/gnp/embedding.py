"""Warm embeddings: a BPR matrix-factorization trainer and file import/export.

Graph-based embedding models (LightGCN, metapath2vec, ...) are expected to be
trained elsewhere and brought in through :func:`import_embeddings`.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError, sample_negatives, user_item_sets

log = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    pass


@dataclass
class EmbeddingStore:
    user_embeddings: np.ndarray
    item_embeddings: np.ndarray
    user_trained: np.ndarray
    item_trained: np.ndarray
    history: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.user_embeddings.shape[1]

    def __post_init__(self) -> None:
        if self.user_embeddings.shape[1] != self.item_embeddings.shape[1]:
            raise DataError("user and item embedding dims differ")


def init_embeddings(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    bound = 1.0 / np.sqrt(dim)
    return rng.uniform(-bound, bound, size=(n, dim))


def bpr_step(
    U: np.ndarray,
    V: np.ndarray,
    users: np.ndarray,
    pos: np.ndarray,
    neg: np.ndarray,
    lr: float,
    l2: float,
) -> np.ndarray:
    """One (mini-batch) ascent step on ln sigmoid(e_u.(e_i - e_j)) - l2 penalty.

    Updates ``U`` and ``V`` in place and returns the per-triple log-loss
    evaluated before the step.
    """
    eu, ei, ej = U[users], V[pos], V[neg]
    x = np.einsum("bd,bd->b", eu, ei - ej)
    g = 1.0 / (1.0 + np.exp(x))  # 1 - sigmoid(x)
    du = g[:, None] * (ei - ej) - l2 * eu
    di = g[:, None] * eu - l2 * ei
    dj = -g[:, None] * eu - l2 * ej
    np.add.at(U, users, lr * du)
    np.add.at(V, pos, lr * di)
    np.add.at(V, neg, lr * dj)
    return np.logaddexp(0.0, -x)


def train_bpr_mf(
    pairs: np.ndarray,
    n_users: int,
    n_items: int,
    dim: int = 200,
    epochs: int = 200,
    lr: float = 0.05,
    l2: float = 1e-5,
    seed: int = 0,
    batch_size: int = 256,
    item_pool: np.ndarray | None = None,
) -> EmbeddingStore:
    """Fit user/item factors with BPR on the given positives.

    Each epoch visits every positive once, in shuffled order, paired with one
    uniformly drawn negative from ``item_pool`` (default: items present in
    ``pairs``). ``batch_size=1`` gives plain per-triple SGD.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    U = init_embeddings(n_users, dim, rng)
    V = init_embeddings(n_items, dim, rng)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    user_trained = np.zeros(n_users, dtype=bool)
    item_trained = np.zeros(n_items, dtype=bool)
    user_trained[pairs[:, 0]] = True
    item_trained[pairs[:, 1]] = True
    pool = np.flatnonzero(item_trained) if item_pool is None else np.asarray(item_pool)
    known = user_item_sets(pairs, n_users)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(pairs))
        negs = sample_negatives(pairs[order], 1, pool, rng, known=known)[:, 1]
        total = 0.0
        for start in range(0, len(order), batch_size):
            sl = slice(start, start + batch_size)
            batch = pairs[order[sl]]
            total += bpr_step(U, V, batch[:, 0], batch[:, 1], negs[sl], lr, l2).sum()
        if not (np.isfinite(total) and np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
            raise NumericalError(f"BPR diverged at epoch {epoch}; lower embedding.lr (now {lr})")
        history.append(total / max(len(pairs), 1))
        log.debug("bpr epoch %d loss %.5f", epoch, history[-1])
    return EmbeddingStore(
        U.astype(np.float32), V.astype(np.float32), user_trained, item_trained, history
    )


# --- file formats -------------------------------------------------------------

def export_matrix(path, values: np.ndarray, format: str = "text", rows: np.ndarray | None = None) -> None:
    values = np.asarray(values, dtype=np.float32)
    n, dim = values.shape
    if format == "text":
        rows = np.arange(n) if rows is None else rows
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{n} {dim}\n")
            for r in rows:
                fh.write(f"{r} " + " ".join(f"{v:.9g}" for v in values[r]) + "\n")
    elif format == "binary":
        with open(path, "wb") as fh:
            fh.write(struct.pack("<III", n, 0, dim))
            fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())
    else:
        raise DataError(f"unknown embedding format {format!r}")


def import_matrix(path, format: str = "text") -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(values, present)``; rows missing from a text file are zero."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"embedding file not found: {path}")
    if format == "binary":
        data = path.read_bytes()
        n, _, dim = struct.unpack_from("<III", data)
        values = np.frombuffer(data, dtype="<f4", offset=12).reshape(n, dim).copy()
        return values, np.ones(n, dtype=bool)
    if format != "text":
        raise DataError(f"unknown embedding format {format!r}")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}:1: expected header 'rows dim'")
        n, dim = int(header[0]), int(header[1])
        values = np.zeros((n, dim), dtype=np.float32)
        present = np.zeros(n, dtype=bool)
        for lineno, line in enumerate(fh, 2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise DataError(f"{path}:{lineno}: expected index plus {dim} values")
            r = int(parts[0])
            if not 0 <= r < n:
                raise DataError(f"{path}:{lineno}: row index {r} out of range")
            values[r] = np.array(parts[1:], dtype=np.float32)
            present[r] = True
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite embedding values")
    return values, present


def import_embeddings(user_path, item_path, format: str = "text") -> EmbeddingStore:
    U, u_ok = import_matrix(user_path, format)
    V, i_ok = import_matrix(item_path, format)
    if U.shape[1] != V.shape[1]:
        raise DataError(f"dim mismatch: users {U.shape[1]} vs items {V.shape[1]}")
    return EmbeddingStore(U, V, u_ok, i_ok)


def export_embeddings(store: EmbeddingStore, user_path, item_path, format: str = "text") -> None:
    u_rows = np.flatnonzero(store.user_trained) if format == "text" else None
    i_rows = np.flatnonzero(store.item_trained) if format == "text" else None
    export_matrix(user_path, store.user_embeddings, format, u_rows)
    export_matrix(item_path, store.item_embeddings, format, i_rows)
