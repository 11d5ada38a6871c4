"""Joint training of the adaptive layer weights and both patching towers.

The objective sums, over labelled pairs, the squared error of the warm score
and of the (dropout-masked) patched score, plus an l2 penalty on every
trainable parameter. Gradients are written out by hand.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .data import DatasetSplit, sample_negatives, user_item_sets
from .embedding import NumericalError
from .gwarmer import uniform_weights
from .patching import Mlp, draw_mask

log = logging.getLogger(__name__)


@dataclass
class ScoringContext:
    """Frozen inputs: pooled layer stacks, side features and warmth masks."""

    user_reps: np.ndarray  # (n_users, K+1, d)
    item_reps: np.ndarray  # (n_items, K+1, d)
    user_features: np.ndarray  # (n_users, f_u), f_u may be 0
    item_features: np.ndarray
    warm_user: np.ndarray  # bool (n_users,)
    warm_item: np.ndarray

    @property
    def n_layers(self) -> int:
        return self.user_reps.shape[1]

    @property
    def dim(self) -> int:
        return self.user_reps.shape[2]

    @classmethod
    def build(cls, user_reps, item_reps, user_features, item_features, split: DatasetSplit) -> "ScoringContext":
        n_users, n_items = user_reps.shape[0], item_reps.shape[0]
        uf = np.zeros((n_users, 0)) if user_features is None else np.asarray(user_features, dtype=np.float64)
        itf = np.zeros((n_items, 0)) if item_features is None else np.asarray(item_features, dtype=np.float64)
        return cls(user_reps, item_reps, uf, itf, split.is_warm_user(), split.is_warm_item())

    def raw(self) -> "ScoringContext":
        """Layer-0 only view: raw embeddings in place of pooled stacks."""
        return ScoringContext(
            self.user_reps[:, :1], self.item_reps[:, :1],
            self.user_features, self.item_features, self.warm_user, self.warm_item,
        )


@dataclass
class GnpParams:
    user_weights: np.ndarray
    item_weights: np.ndarray
    user_mlp: Mlp
    item_mlp: Mlp

    @classmethod
    def init(cls, ctx: ScoringContext, hidden: int, depth: int, rng: np.random.Generator) -> "GnpParams":
        d = ctx.dim
        return cls(
            uniform_weights(ctx.n_layers),
            uniform_weights(ctx.n_layers),
            Mlp.init(d + ctx.user_features.shape[1], hidden, d, depth, rng),
            Mlp.init(d + ctx.item_features.shape[1], hidden, d, depth, rng),
        )

    def arrays(self, with_weights: bool = True) -> list[np.ndarray]:
        head = [self.user_weights, self.item_weights] if with_weights else []
        return head + self.user_mlp.arrays() + self.item_mlp.arrays()

    def zeros_like(self) -> "GnpParams":
        return GnpParams(
            np.zeros_like(self.user_weights), np.zeros_like(self.item_weights),
            self.user_mlp.zeros_like(), self.item_mlp.zeros_like(),
        )

    def copy(self) -> "GnpParams":
        return GnpParams(
            self.user_weights.copy(), self.item_weights.copy(),
            self.user_mlp.copy(), self.item_mlp.copy(),
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class LossInfo:
    warm: float
    cold: float
    penalty: float
    # adaptive-weight gradient contributed by the patched term alone
    cold_weight_grad: np.ndarray


def _penalty(params: GnpParams, l2: float, with_weights: bool, grads: GnpParams) -> float:
    total = 0.0
    for p, g in zip(params.arrays(with_weights), grads.arrays(with_weights)):
        total += float(np.sum(p * p))
        g += 2.0 * l2 * p
    return l2 * total


def gnp_loss(
    users: np.ndarray,
    items: np.ndarray,
    labels: np.ndarray,
    params: GnpParams,
    ctx: ScoringContext,
    tau: float,
    rng: np.random.Generator | None = None,
    l2: float = 0.0,
    drops: tuple[np.ndarray, np.ndarray] | None = None,
    warm_term: bool = True,
    train_weights: bool = True,
) -> tuple[float, GnpParams, LossInfo]:
    """Summed two-term squared error and its exact gradient.

    ``drops`` pins the user/item dropout draws (True = masked); otherwise they
    are Bernoulli(tau) from ``rng``. With ``warm_term=False`` and
    ``train_weights=False`` this is the DropoutNet objective.
    """
    users = np.asarray(users)
    items = np.asarray(items)
    y = np.asarray(labels, dtype=np.float64)
    B = len(users)
    if drops is None:
        drops = (draw_mask(B, tau, rng), draw_mask(B, tau, rng))
    keep_u = (~drops[0]).astype(np.float64)[:, None]
    keep_i = (~drops[1]).astype(np.float64)[:, None]

    Xu = ctx.user_reps[users]
    Xi = ctx.item_reps[items]
    xu = np.einsum("bkd,k->bd", Xu, params.user_weights)
    xi = np.einsum("bkd,k->bd", Xi, params.item_weights)

    grads = params.zeros_like()
    dxu = np.zeros_like(xu)
    dxi = np.zeros_like(xi)

    warm_loss = 0.0
    if warm_term:
        rw = np.einsum("bd,bd->b", xu, xi) - y
        warm_loss = float(rw @ rw)
        dxu += 2.0 * rw[:, None] * xi
        dxi += 2.0 * rw[:, None] * xu

    zu = np.concatenate([xu * keep_u, ctx.user_features[users]], axis=1)
    zi = np.concatenate([xi * keep_i, ctx.item_features[items]], axis=1)
    xuc, acts_u = params.user_mlp.forward_cached(zu)
    xic, acts_i = params.item_mlp.forward_cached(zi)
    rp = np.einsum("bd,bd->b", xuc, xic) - y
    cold_loss = float(rp @ rp)
    gu, dzu = params.user_mlp.backward(acts_u, 2.0 * rp[:, None] * xic)
    gi, dzi = params.item_mlp.backward(acts_i, 2.0 * rp[:, None] * xuc)
    grads.user_mlp, grads.item_mlp = gu, gi

    d = ctx.dim
    dxu_cold = dzu[:, :d] * keep_u
    dxi_cold = dzi[:, :d] * keep_i
    cold_wg = np.concatenate([
        np.einsum("bkd,bd->k", Xu, dxu_cold),
        np.einsum("bkd,bd->k", Xi, dxi_cold),
    ])
    if train_weights:
        grads.user_weights = np.einsum("bkd,bd->k", Xu, dxu + dxu_cold)
        grads.item_weights = np.einsum("bkd,bd->k", Xi, dxi + dxi_cold)

    penalty = _penalty(params, l2, train_weights, grads) if l2 else 0.0
    loss = warm_loss + cold_loss + penalty
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite loss (warm={warm_loss}, cold={cold_loss}); lower train.lr")
    return loss, grads, LossInfo(warm_loss, cold_loss, penalty, cold_wg)


# --- Adam ------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """Bias-corrected Adam; updates ``params`` and ``state`` in place."""
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != m.shape:
            raise ValueError("optimizer state does not match parameter shapes")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# --- fitting -----------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_auc: float
    elapsed_ms: int
    cold_weight_grad: float  # max |patched-term gradient on adaptive weights| over the epoch


@dataclass
class TrainResult:
    params: GnpParams
    log: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_auc: float = float("nan")

    def log_tsv(self) -> str:
        lines = ["epoch\tloss\tval_auc\telapsed_ms"]
        for r in self.log:
            lines.append(f"{r.epoch}\t{r.loss:.6f}\t{r.val_auc:.6f}\t{r.elapsed_ms}")
        return "\n".join(lines) + "\n"


def validation_pairs(split: DatasetSplit, protocol: str, n_neg: int, rng: np.random.Generator):
    """Fixed labelled validation set: held-out positives plus sampled negatives."""
    pos = split.validation
    if protocol == "warm":
        pos = pos[split.is_warm_item()[pos[:, 1]] & split.is_warm_user()[pos[:, 0]]]
        pool = split.warm_items
    else:
        pool = np.arange(split.n_items)
    known = user_item_sets(np.concatenate([split.train_pairs, split.validation]), split.n_users)
    neg = sample_negatives(pos, n_neg, pool, rng, known=known)
    pairs = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return pairs, labels


def fit(
    split: DatasetSplit,
    ctx: ScoringContext,
    cfg: TrainConfig,
    baseline: bool = False,
) -> TrainResult:
    """Mini-batch Adam with validation-AUC early stopping.

    ``baseline=True`` trains the simplified DropoutNet instead: patched term
    only, over raw embeddings, no adaptive weights. Returns the best-AUC
    parameters.
    """
    from .eval import GnpScorer, auc

    if baseline:
        ctx = ctx.raw()
    rng = np.random.default_rng(cfg.seed)
    params = GnpParams.init(ctx, cfg.hidden, cfg.depth, rng)
    if baseline:
        params.user_weights = np.ones(1)
        params.item_weights = np.ones(1)
    result = TrainResult(params.copy())
    if cfg.max_epochs <= 0:
        return result

    trainable = params.arrays(with_weights=not baseline)
    state = AdamState.zeros(trainable)
    known = user_item_sets(split.train_pairs, split.n_users)
    val_pairs, val_labels = validation_pairs(
        split, cfg.early_stop_protocol, 1, np.random.default_rng([cfg.seed, 1])
    )
    positives = split.model_train
    best_auc = -np.inf
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        neg = sample_negatives(positives, cfg.n_neg_per_pos, split.warm_items, rng, known=known)
        pairs = np.concatenate([positives, neg])
        labels = np.concatenate([np.ones(len(positives)), np.zeros(len(neg))])
        order = rng.permutation(len(pairs))
        total = 0.0
        cold_wg = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads, info = gnp_loss(
                pairs[idx, 0], pairs[idx, 1], labels[idx], params, ctx, cfg.tau, rng,
                l2=cfg.l2, warm_term=not baseline, train_weights=not baseline,
            )
            adam_step(trainable, grads.arrays(with_weights=not baseline), state, cfg.lr)
            total += loss
            if not baseline:
                cold_wg = max(cold_wg, float(np.max(np.abs(info.cold_weight_grad))))
        if not params.is_finite():
            raise NumericalError(f"parameters became non-finite in epoch {epoch}; lower train.lr")
        scorer = GnpScorer(params, ctx, warm_path=not baseline)
        val_auc = auc(scorer.score_pairs(val_pairs[:, 0], val_pairs[:, 1]), val_labels)
        elapsed = int(round((time.perf_counter() - t0) * 1000))
        result.log.append(EpochRecord(epoch, total / len(pairs), val_auc, elapsed, cold_wg))
        log.info("epoch %d loss %.5f val_auc %.4f", epoch, total / len(pairs), val_auc)
        if val_auc > best_auc:
            best_auc = val_auc
            stale = 0
            result.params = params.copy()
            result.best_epoch = epoch
            result.best_auc = val_auc
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return result
