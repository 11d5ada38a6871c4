"""Warm scorer: mean-pooled walk layers, adaptive layer weights, inner product."""
from __future__ import annotations

import numpy as np

from .graph import ITEM, USER, WalkSet


def walk_pool(walks: WalkSet, user_emb: np.ndarray, item_emb: np.ndarray) -> np.ndarray:
    """Layer-wise mean of walk embeddings, shape ``(K+1, d)``.

    Each depth is reduced through per-node visit counts over sorted node ids,
    so the result does not depend on the order of the walks at all. Layer 0
    is copied straight from the origin's embedding.
    """
    side, node = walks.origin
    sides = walks.sides()
    S, L = walks.walks.shape
    out = np.empty((L, user_emb.shape[1]))
    out[0] = (user_emb if side == USER else item_emb)[node]
    for k in range(1, L):
        acc = np.zeros(user_emb.shape[1])
        for s, emb in ((USER, user_emb), (ITEM, item_emb)):
            ids = walks.walks[sides[:, k] == s, k]
            if len(ids) == 0:
                continue
            uniq, counts = np.unique(ids, return_counts=True)
            acc += counts @ emb[uniq]
        out[k] = acc / S
    return out


def combine(reps: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted sum over the layer axis; works on ``(K+1, d)`` or ``(n, K+1, d)``."""
    reps = np.asarray(reps)
    weights = np.asarray(weights)
    if reps.shape[-2] != weights.shape[0]:
        raise ValueError(f"{reps.shape[-2]} layers but {weights.shape[0]} weights")
    return np.einsum("...kd,k->...d", reps, weights)


def warm_score(u_rep: np.ndarray, i_rep: np.ndarray) -> float:
    if u_rep.shape != i_rep.shape:
        raise ValueError("representation dims differ")
    return float(np.dot(u_rep, i_rep))


def warm_score_batch(u_rep: np.ndarray, item_reps: np.ndarray) -> np.ndarray:
    return np.asarray(item_reps) @ u_rep


def uniform_weights(n_layers: int) -> np.ndarray:
    return np.full(n_layers, 1.0 / n_layers)
