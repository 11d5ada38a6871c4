"""In-memory end-to-end runs on synthetic data (no files), used by scripts and tests."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .config import EmbeddingConfig, SplitConfig, TrainConfig, WalkConfig
from .data import DatasetSplit, make_split
from .embedding import EmbeddingStore, train_bpr_mf
from .eval import EvalReport, GnpScorer, evaluate
from .graph import build_graph, precompute_layer_reps
from .synthgen import SynthData, SynthSpec, generate
from .train import ScoringContext, TrainResult, fit


@dataclass
class Prepared:
    data: SynthData
    split: DatasetSplit
    store: EmbeddingStore
    ctx: ScoringContext


@dataclass
class Comparison:
    seed: int
    gnp: dict[str, EvalReport] = field(default_factory=dict)
    baseline: dict[str, EvalReport] = field(default_factory=dict)
    gnp_fit: TrainResult | None = None
    baseline_fit: TrainResult | None = None


def prepare_synthetic(
    spec: SynthSpec,
    split_cfg: SplitConfig,
    emb_cfg: EmbeddingConfig,
    walk_cfg: WalkConfig,
    seed: int,
) -> Prepared:
    data = generate(spec)
    split = make_split(
        data.pairs, spec.n_users, spec.n_items,
        split_cfg.cold_item_frac, split_cfg.embed_frac, split_cfg.model_frac, seed=seed,
    )
    store = train_bpr_mf(
        split.embed_train, spec.n_users, spec.n_items, dim=emb_cfg.dim, epochs=emb_cfg.epochs,
        lr=emb_cfg.lr, l2=emb_cfg.l2, seed=seed + 1, batch_size=emb_cfg.batch_size,
        item_pool=split.warm_items,
    )
    graph_pairs = split.embed_train if walk_cfg.graph_source == "embed" else split.train_pairs
    graph = build_graph(graph_pairs, spec.n_users, spec.n_items)
    U = store.user_embeddings.astype(np.float64)
    V = store.item_embeddings.astype(np.float64)
    ur, ir = precompute_layer_reps(
        graph, U, V, walk_cfg.n_walks, walk_cfg.n_layers, seed + 2,
        users=split.warm_users, items=split.warm_items,
    )
    ctx = ScoringContext.build(ur, ir, data.user_features, data.item_features, split)
    return Prepared(data, split, store, ctx)


def compare(
    prep: Prepared,
    train_cfg: TrainConfig,
    k: int = 20,
    protocols=("hybrid", "warm", "cold"),
    with_baseline: bool = True,
) -> Comparison:
    out = Comparison(seed=train_cfg.seed)
    res = fit(prep.split, prep.ctx, train_cfg)
    out.gnp_fit = res
    scorer = GnpScorer(res.params, prep.ctx)
    for p in protocols:
        out.gnp[p] = evaluate(prep.split, scorer, p, k)
    if with_baseline:
        res_b = fit(prep.split, prep.ctx, train_cfg, baseline=True)
        out.baseline_fit = res_b
        scorer_b = GnpScorer(res_b.params, prep.ctx.raw(), warm_path=False)
        for p in protocols:
            out.baseline[p] = evaluate(prep.split, scorer_b, p, k)
    return out


# desk-scale settings for the planted-block fixture
FIXTURE_SPEC = SynthSpec(n_users=200, n_items=300, n_blocks=4, in_block_prob=0.3,
                         cross_block_prob=0.01, feature_dim=8, feature_noise=0.1)
FIXTURE_EMBEDDING = EmbeddingConfig(dim=32, epochs=100, lr=0.05, l2=1e-5, batch_size=64)
FIXTURE_WALKS = WalkConfig(n_walks=25, n_layers=3)
FIXTURE_TRAIN = TrainConfig(lr=1e-3, batch_size=128, l2=1e-5, tau=0.5, n_neg_per_pos=4,
                            max_epochs=50, patience=5, hidden=200, depth=2)


def fixture_run(seed: int, tau: float | None = None, with_baseline: bool = True, **train_overrides) -> Comparison:
    spec = replace(FIXTURE_SPEC, seed=seed)
    prep = prepare_synthetic(spec, SplitConfig(), FIXTURE_EMBEDDING, FIXTURE_WALKS, seed)
    cfg = replace(FIXTURE_TRAIN, seed=seed, **train_overrides)
    if tau is not None:
        cfg = replace(cfg, tau=tau)
    return compare(prep, cfg, with_baseline=with_baseline)
