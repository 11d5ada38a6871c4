"""Bipartite user-item graph and seeded random walks over it.

Node references are ``(side, id)`` tuples with side ``USER`` (0) or ``ITEM`` (1).
Walks of K steps hold K+1 nodes; a walk that reaches a degree-0 node stays
there for its remaining steps.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

USER, ITEM = 0, 1


@dataclass(frozen=True)
class InteractionGraph:
    n_users: int
    n_items: int
    user_indptr: np.ndarray
    user_indices: np.ndarray
    item_indptr: np.ndarray
    item_indices: np.ndarray

    def neighbors(self, side: int, node: int) -> np.ndarray:
        if side == USER:
            return self.user_indices[self.user_indptr[node]:self.user_indptr[node + 1]]
        return self.item_indices[self.item_indptr[node]:self.item_indptr[node + 1]]

    def degrees(self, side: int) -> np.ndarray:
        indptr = self.user_indptr if side == USER else self.item_indptr
        return np.diff(indptr)

    @property
    def user_adj(self) -> list[list[int]]:
        return [self.neighbors(USER, u).tolist() for u in range(self.n_users)]

    @property
    def item_adj(self) -> list[list[int]]:
        return [self.neighbors(ITEM, i).tolist() for i in range(self.n_items)]

    def _csr(self, side: int) -> tuple[np.ndarray, np.ndarray]:
        if side == USER:
            return self.user_indptr, self.user_indices
        return self.item_indptr, self.item_indices


def _build_csr(src: np.ndarray, dst: np.ndarray, n_src: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((dst, src))
    counts = np.bincount(src, minlength=n_src)
    indptr = np.zeros(n_src + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, dst[order].astype(np.int64)


def build_graph(pairs: np.ndarray, n_users: int, n_items: int) -> InteractionGraph:
    pairs = np.unique(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=0)
    if len(pairs):
        if pairs[:, 0].min() < 0 or pairs[:, 0].max() >= n_users:
            raise ValueError("user id out of range")
        if pairs[:, 1].min() < 0 or pairs[:, 1].max() >= n_items:
            raise ValueError("item id out of range")
    u_ptr, u_idx = _build_csr(pairs[:, 0], pairs[:, 1], n_users)
    i_ptr, i_idx = _build_csr(pairs[:, 1], pairs[:, 0], n_items)
    return InteractionGraph(n_users, n_items, u_ptr, u_idx, i_ptr, i_idx)


@dataclass
class WalkSet:
    origin: tuple[int, int]
    walks: np.ndarray  # (S, K+1) node ids
    stuck: np.ndarray | None = None  # (S, K+1) True where the step self-looped at a dead end

    @property
    def n_walks(self) -> int:
        return self.walks.shape[0]

    @property
    def length(self) -> int:
        return self.walks.shape[1] - 1

    def sides(self) -> np.ndarray:
        """Side of every walk position, accounting for self-loops at dead ends."""
        return _walk_sides(self.origin[0], self.walks, self.stuck)


def _walk_sides(origin_side: int, walks: np.ndarray, stuck: np.ndarray | None) -> np.ndarray:
    S, L = walks.shape
    sides = np.empty((S, L), dtype=np.int64)
    sides[:, 0] = origin_side
    for k in range(1, L):
        flipped = 1 - sides[:, k - 1]
        sides[:, k] = flipped if stuck is None else np.where(stuck[:, k], sides[:, k - 1], flipped)
    return sides


def walk_rng(master_seed: int, side: int, node: int) -> np.random.Generator:
    """Independent generator per origin so walks can be sampled in any order."""
    return np.random.default_rng([master_seed, side, node])


def sample_walks(
    graph: InteractionGraph,
    origin: tuple[int, int],
    n_walks: int,
    n_steps: int,
    rng: np.random.Generator,
) -> WalkSet:
    side, node = origin
    if n_walks < 1 or n_steps < 1:
        raise ValueError("need n_walks >= 1 and n_steps >= 1")
    walks = np.empty((n_walks, n_steps + 1), dtype=np.int64)
    stuck = np.zeros((n_walks, n_steps + 1), dtype=bool)
    walks[:, 0] = node
    cur_side = np.full(n_walks, side)
    for k in range(1, n_steps + 1):
        cur = walks[:, k - 1]
        nxt = cur.copy()
        new_side = cur_side.copy()
        for s in (USER, ITEM):
            sel = np.flatnonzero(cur_side == s)
            if len(sel) == 0:
                continue
            indptr, indices = graph._csr(s)
            start = indptr[cur[sel]]
            deg = indptr[cur[sel] + 1] - start
            draw = rng.random(len(sel))
            live = deg > 0
            pick = start[live] + (draw[live] * deg[live]).astype(np.int64)
            nxt[sel[live]] = indices[pick]
            new_side[sel[live]] = 1 - s
            stuck[sel[~live], k] = True
        walks[:, k] = nxt
        cur_side = new_side
    return WalkSet(origin=(side, node), walks=walks, stuck=stuck)


def transition_step(graph: InteractionGraph, dist_user: np.ndarray, dist_item: np.ndarray):
    """Push a (user, item) probability mass one uniform step along the graph."""
    u_deg = graph.degrees(USER)
    i_deg = graph.degrees(ITEM)
    new_user = np.zeros(graph.n_users)
    new_item = np.zeros(graph.n_items)
    # mass from users spreads to their items; dead-end users keep it
    u_share = np.divide(dist_user, u_deg, out=np.zeros_like(dist_user), where=u_deg > 0)
    np.add.at(new_item, graph.user_indices, np.repeat(u_share, u_deg))
    new_user[u_deg == 0] += dist_user[u_deg == 0]
    i_share = np.divide(dist_item, i_deg, out=np.zeros_like(dist_item), where=i_deg > 0)
    np.add.at(new_user, graph.item_indices, np.repeat(i_share, i_deg))
    new_item[i_deg == 0] += dist_item[i_deg == 0]
    return new_user, new_item


def exact_layer_means(
    graph: InteractionGraph,
    origin: tuple[int, int],
    n_steps: int,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
) -> np.ndarray:
    """Expected embedding at each walk depth; the infinite-sample limit of walk pooling."""
    side, node = origin
    dist_user = np.zeros(graph.n_users)
    dist_item = np.zeros(graph.n_items)
    (dist_user if side == USER else dist_item)[node] = 1.0
    out = np.empty((n_steps + 1, user_emb.shape[1]))
    for k in range(n_steps + 1):
        if k:
            dist_user, dist_item = transition_step(graph, dist_user, dist_item)
        out[k] = dist_user @ user_emb + dist_item @ item_emb
    return out


def walk_embeddings(walks: WalkSet, user_emb: np.ndarray, item_emb: np.ndarray) -> np.ndarray:
    """Replace node ids by embeddings: (S, K+1, d)."""
    sides = walks.sides()
    out = np.where(
        (sides == USER)[..., None],
        user_emb[np.where(sides == USER, walks.walks, 0)],
        item_emb[np.where(sides == ITEM, walks.walks, 0)],
    )
    return out


def precompute_layer_reps(
    graph: InteractionGraph,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    n_walks: int,
    n_steps: int,
    seed: int,
    users: np.ndarray | None = None,
    items: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Pooled layer reps for every (or the listed) user and item.

    Nodes not listed keep an all-zero stack. Returns arrays of shape
    ``(n_users, K+1, d)`` and ``(n_items, K+1, d)``.
    """
    from .gwarmer import walk_pool

    d = user_emb.shape[1]
    user_reps = np.zeros((graph.n_users, n_steps + 1, d))
    item_reps = np.zeros((graph.n_items, n_steps + 1, d))
    users = np.arange(graph.n_users) if users is None else users
    items = np.arange(graph.n_items) if items is None else items
    if n_steps == 0:
        user_reps[users, 0] = user_emb[users]
        item_reps[items, 0] = item_emb[items]
        return user_reps, item_reps
    for side, nodes, out in ((USER, users, user_reps), (ITEM, items, item_reps)):
        for node in nodes:
            node = int(node)
            ws = sample_walks(graph, (side, node), n_walks, n_steps, walk_rng(seed, side, node))
            out[node] = walk_pool(ws, user_emb, item_emb)
    return user_reps, item_reps


# --- pooled-representation cache --------------------------------------------

def save_layer_reps(path, reps: np.ndarray) -> None:
    n, layers, dim = reps.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", n, layers - 1, dim))
        fh.write(np.ascontiguousarray(reps, dtype="<f4").tobytes())


def load_layer_reps(path) -> np.ndarray:
    data = Path(path).read_bytes()
    n, k, dim = struct.unpack_from("<III", data)
    expected = 12 + 4 * n * (k + 1) * dim
    if len(data) != expected:
        raise ValueError(f"{path}: size {len(data)} does not match header ({expected})")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(n, k + 1, dim).astype(np.float64)
