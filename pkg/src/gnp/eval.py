"""All-ranking evaluation and the warm/cold score dispatch."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import DatasetSplit, user_item_sets
from .gwarmer import combine
from .patching import Mlp
from .train import GnpParams, ScoringContext


class DispatchError(ValueError):
    pass


class GnpScorer:
    """Scores any (user, item) pair: warm x warm through the layer-weighted inner
    product, everything else through the patching towers with zero placeholders
    on the cold side(s).

    All representations are materialised at construction, so scoring is lookups
    plus dot products. ``warm_path=False`` routes every pair through the towers
    (the DropoutNet baseline). Counters record how many pairs each branch scored.
    """

    def __init__(self, params: GnpParams, ctx: ScoringContext, warm_path: bool = True):
        self.params = params
        self.ctx = ctx
        self.warm_path = warm_path
        self.warm_user = ctx.warm_user
        self.warm_item = ctx.warm_item
        xu = combine(ctx.user_reps, params.user_weights)
        xi = combine(ctx.item_reps, params.item_weights)
        self.user_rep = xu
        self.item_rep = xi
        self.user_patched = params.user_mlp.forward(
            np.concatenate([xu * ctx.warm_user[:, None], ctx.user_features], axis=1))
        self.item_patched = params.item_mlp.forward(
            np.concatenate([xi * ctx.warm_item[:, None], ctx.item_features], axis=1))
        self.user_ok = ctx.warm_user | (ctx.user_features.shape[1] > 0)
        self.item_ok = ctx.warm_item | (ctx.item_features.shape[1] > 0)
        self.n_warm_pairs = 0
        self.n_cold_pairs = 0

    def _check(self, users: np.ndarray, items: np.ndarray) -> None:
        bad_u = users[~self.user_ok[users]]
        bad_i = items[~self.item_ok[items]]
        if len(bad_u):
            raise DispatchError(f"user {bad_u[0]} is cold and has no features")
        if len(bad_i):
            raise DispatchError(f"item {bad_i[0]} is cold and has no features")

    def score_pairs(self, users, items) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        self._check(users, items)
        out = np.einsum("bd,bd->b", self.user_patched[users], self.item_patched[items])
        if self.warm_path:
            w = self.warm_user[users] & self.warm_item[items]
            out[w] = np.einsum("bd,bd->b", self.user_rep[users[w]], self.item_rep[items[w]])
            self.n_warm_pairs += int(w.sum())
            self.n_cold_pairs += int((~w).sum())
        else:
            self.n_cold_pairs += len(users)
        return out

    def score_matrix(self, users, items) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        self._check(users, items)
        out = self.user_patched[users] @ self.item_patched[items].T
        if self.warm_path:
            ru = np.flatnonzero(self.warm_user[users])
            ci = np.flatnonzero(self.warm_item[items])
            if len(ru) and len(ci):
                out[np.ix_(ru, ci)] = self.user_rep[users[ru]] @ self.item_rep[items[ci]].T
            n_warm = len(ru) * len(ci)
            self.n_warm_pairs += n_warm
            self.n_cold_pairs += out.size - n_warm
        else:
            self.n_cold_pairs += out.size
        return out


def dispatch_score(u: int, i: int, scorer: GnpScorer) -> float:
    return float(scorer.score_pairs([u], [i])[0])


def rank_all(scores: np.ndarray, candidates: np.ndarray, exclude=()) -> np.ndarray:
    """Candidates by descending score, ties by ascending id, ``exclude`` removed.

    ``scores[j]`` belongs to ``candidates[j]``.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    keep = ~np.isin(candidates, np.fromiter(exclude, dtype=np.int64)) if len(exclude) else np.ones(len(candidates), bool)
    c, s = candidates[keep], scores[keep]
    order = np.lexsort((c, -s))
    return c[order]


def recall_precision_ndcg_at_k(ranked, relevant, k: int):
    """Binary-relevance metrics at cutoff k; ``None`` when nothing is relevant."""
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(int(r) for r in relevant)
    if not relevant:
        return None
    top = [int(x) for x in ranked[:k]]
    hits = np.array([x in relevant for x in top], dtype=np.float64)
    n_hit = hits.sum()
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = float(discounts[:len(hits)][hits > 0].sum())
    idcg = float(discounts[:min(k, len(relevant))].sum())
    return n_hit / len(relevant), n_hit / k, dcg / idcg


def auc(scores, labels) -> float:
    """Rank-sum AUC with tied scores sharing their average rank."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    uniq, inv, counts = np.unique(scores, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    avg_rank = upper - (counts - 1) / 2.0
    ranks = avg_rank[inv]
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class EvalReport:
    protocol: str
    k: int
    recall: float
    precision: float
    ndcg: float
    auc: float
    n_users_evaluated: int
    wall_time_ms: int
    n_users_skipped: int = 0

    FIELDS = ("protocol", "k", "recall", "precision", "ndcg", "auc", "n_users_evaluated", "wall_time_ms")

    def tsv_row(self) -> str:
        return "\t".join(
            f"{getattr(self, f):.6f}" if isinstance(getattr(self, f), float) else str(getattr(self, f))
            for f in self.FIELDS
        )

    def to_json(self) -> str:
        return json.dumps({f: getattr(self, f) for f in self.FIELDS}, sort_keys=False)


def reports_tsv(reports: list[EvalReport]) -> str:
    return "\t".join(EvalReport.FIELDS) + "\n" + "".join(r.tsv_row() + "\n" for r in reports)


def reports_table(reports: list[EvalReport]) -> str:
    head = f"{'protocol':<8} {'k':>4} {'recall':>8} {'prec':>8} {'ndcg':>8} {'auc':>8} {'users':>6} {'ms':>7}"
    rows = [head, "-" * len(head)]
    for r in reports:
        rows.append(
            f"{r.protocol:<8} {r.k:>4} {r.recall:>8.4f} {r.precision:>8.4f} {r.ndcg:>8.4f} "
            f"{r.auc:>8.4f} {r.n_users_evaluated:>6} {r.wall_time_ms:>7}"
        )
    return "\n".join(rows)


def candidate_pool(split: DatasetSplit, protocol: str) -> np.ndarray:
    if protocol == "hybrid":
        return np.arange(split.n_items)
    if protocol == "warm":
        return split.warm_items
    if protocol == "cold":
        return split.cold_items
    raise ValueError(f"unknown protocol {protocol!r}")


def evaluate(
    split: DatasetSplit,
    scorer: GnpScorer,
    protocol: str = "hybrid",
    k: int = 20,
    target: str = "test",
    chunk: int = 256,
) -> EvalReport:
    """Macro-averaged all-ranking metrics over users with held-out positives in the pool.

    Training positives are removed from every user's candidates; when
    scoring the test set, validation positives are removed as well.
    """
    t0 = time.perf_counter()
    pool = candidate_pool(split, protocol)
    in_pool = np.zeros(split.n_items, dtype=bool)
    in_pool[pool] = True
    held = split.test if target == "test" else split.validation
    seen = split.train_pairs if target == "validation" else np.concatenate([split.train_pairs, split.validation])
    relevant = user_item_sets(held[in_pool[held[:, 1]]], split.n_users)
    seen_sets = user_item_sets(seen, split.n_users)

    users = np.array([u for u in range(split.n_users) if relevant[u]], dtype=np.int64)
    ok = scorer.user_ok[users]
    skipped = int((~ok).sum())
    users = users[ok]
    pool_pos = np.full(split.n_items, -1)
    pool_pos[pool] = np.arange(len(pool))

    sums = np.zeros(4)
    for start in range(0, len(users), chunk):
        block = users[start:start + chunk]
        S = scorer.score_matrix(block, pool)
        for row, u in zip(S, block):
            excl = [pool_pos[i] for i in seen_sets[u] if in_pool[i]]
            keep = np.ones(len(pool), dtype=bool)
            keep[excl] = False
            ranked = rank_all(row[keep], pool[keep])
            rec, prec, ndcg = recall_precision_ndcg_at_k(ranked, relevant[u], k)
            labels = np.isin(pool[keep], list(relevant[u]))
            user_auc = auc(row[keep], labels) if 0 < labels.sum() < len(labels) else 1.0
            sums += (rec, prec, ndcg, user_auc)
    n = len(users)
    means = sums / n if n else np.zeros(4)
    return EvalReport(
        protocol=protocol,
        k=k,
        recall=float(means[0]),
        precision=float(means[1]),
        ndcg=float(means[2]),
        auc=float(means[3]),
        n_users_evaluated=n,
        wall_time_ms=int(round((time.perf_counter() - t0) * 1000)),
        n_users_skipped=skipped,
    )


# --- inference timing ------------------------------------------------------------

@dataclass
class BenchReport:
    n_users: int
    n_items: int
    k: int
    gnp_ms: list[float] = field(default_factory=list)
    baseline_ms: list[float] = field(default_factory=list)

    @property
    def gnp_median_ms(self) -> float:
        return float(np.median(self.gnp_ms)) if self.gnp_ms else 0.0

    @property
    def baseline_median_ms(self) -> float:
        return float(np.median(self.baseline_ms)) if self.baseline_ms else 0.0

    def summary(self) -> dict:
        out = asdict(self)
        out["gnp_median_ms"] = self.gnp_median_ms
        out["baseline_median_ms"] = self.baseline_median_ms
        return out


def _topk(scores: np.ndarray, k: int) -> np.ndarray:
    k = min(k, scores.shape[1])
    if k == 0:
        return np.zeros((scores.shape[0], 0), dtype=np.int64)
    return np.argpartition(-scores, k - 1, axis=1)[:, :k]


def bench_inference(
    user_reps: np.ndarray,
    item_reps: np.ndarray,
    user_inputs: np.ndarray,
    item_inputs: np.ndarray,
    towers: tuple[Mlp, Mlp],
    n_users: int,
    repeat: int = 5,
    k: int = 20,
) -> BenchReport:
    """Time full all-ranking top-k for ``n_users`` users against every item.

    The warm path looks up stored representations and takes inner products.
    The baseline path first maps raw inputs through both towers, as a hybrid
    two-tower model must for every request.
    """
    n_users = min(n_users, user_reps.shape[0])
    report = BenchReport(n_users=n_users, n_items=item_reps.shape[0], k=k)
    user_mlp, item_mlp = towers
    for _ in range(repeat):
        t0 = time.perf_counter()
        if n_users:
            _topk(user_reps[:n_users] @ item_reps.T, k)
        report.gnp_ms.append((time.perf_counter() - t0) * 1000)

        t0 = time.perf_counter()
        if n_users:
            zu = user_mlp.forward(user_inputs[:n_users])
            zi = item_mlp.forward(item_inputs)
            _topk(zu @ zi.T, k)
        report.baseline_ms.append((time.perf_counter() - t0) * 1000)
    return report
