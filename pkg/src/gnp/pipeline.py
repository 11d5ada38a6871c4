"""File-backed pipeline stages with content-addressed caching.

Every stage writes into ``<workdir>/<stage>/<key>/`` where the key hashes the
stage's config section together with the upstream stage key. A ``stage.json``
records sha256 digests of the outputs; a stage is reused only when all
digests still match. Once a stage is recomputed, every later stage in the
same invocation is recomputed too.
"""
from __future__ import annotations

import hashlib
import json
import logging
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .data import (
    DataError, align_features, l2_normalize_rows, load_interactions, load_split, make_split,
    read_features, save_split,
)
from .embedding import EmbeddingStore, export_matrix, import_embeddings, import_matrix, train_bpr_mf
from .eval import EvalReport, GnpScorer, bench_inference, evaluate, reports_tsv
from .graph import build_graph, load_layer_reps, precompute_layer_reps, save_layer_reps
from .patching import load_checkpoint, save_checkpoint
from .train import GnpParams, ScoringContext, fit

log = logging.getLogger(__name__)

STAGES = ("split", "embed", "walks", "train", "eval")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _key(*parts) -> str:
    return hashlib.sha256("|".join(str(p) for p in parts).encode()).hexdigest()[:16]


@dataclass
class StageResult:
    name: str
    key: str
    directory: Path
    cached: bool


@dataclass
class Pipeline:
    cfg: RunConfig
    deterministic: bool = True
    status: dict[str, str] = field(default_factory=dict)
    _dirty: bool = False
    _results: dict[str, StageResult] = field(default_factory=dict)

    @property
    def workdir(self) -> Path:
        return Path(self.cfg.paths.workdir)

    # -- cache bookkeeping ---------------------------------------------------

    def _valid(self, directory: Path) -> bool:
        record = directory / "stage.json"
        if not record.exists():
            return False
        try:
            files = json.loads(record.read_text())["files"]
        except (ValueError, KeyError):
            return False
        for name, digest in files.items():
            p = directory / name
            if not p.exists() or file_digest(p) != digest:
                log.warning("cache file %s failed verification", p)
                return False
        return True

    def _run(self, name: str, key: str, build) -> StageResult:
        if name in self._results:
            return self._results[name]
        directory = self.workdir / name / key
        if not self._dirty and self._valid(directory):
            self.status[name] = "cached"
            res = StageResult(name, key, directory, True)
        else:
            if directory.exists():
                shutil.rmtree(directory)
            directory.mkdir(parents=True)
            outputs = build(directory)
            record = {"stage": name, "key": key,
                      "files": {o: file_digest(directory / o) for o in sorted(outputs)}}
            (directory / "stage.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
            self.status[name] = "computed"
            self._dirty = True
            res = StageResult(name, key, directory, False)
        self._results[name] = res
        return res

    # -- inputs --------------------------------------------------------------

    def _input_digest(self) -> str:
        p = self.cfg.paths
        parts = []
        for path in (p.interactions, p.user_features, p.item_features):
            if path:
                if not Path(path).exists():
                    raise DataError(f"input file not found: {path}")
                parts.append(file_digest(path))
            else:
                parts.append("-")
        if p.split_file:
            manifest = Path(p.split_file) / "manifest.json"
            if not manifest.exists():
                raise DataError(f"split manifest not found: {manifest}")
            parts.append(file_digest(manifest))
        return _key(*parts)

    # -- stages --------------------------------------------------------------

    def split(self) -> StageResult:
        cfg = self.cfg
        if not cfg.paths.interactions and not cfg.paths.split_file:
            raise ConfigError("paths.interactions is not set")
        key = _key("split", cfg.seed, cfg.section_hash("split"), self._input_digest())

        def build(d: Path):
            if cfg.paths.split_file:
                src = Path(cfg.paths.split_file)
                for f in src.iterdir():
                    if f.is_file() and f.name != "stage.json":
                        shutil.copy(f, d / f.name)
                return [f.name for f in d.iterdir() if f.name != "stage.json"]
            table = load_interactions(cfg.paths.interactions, cfg.paths.interactions_format)
            split = make_split(
                table.pairs, table.n_users, table.n_items, cfg.split.cold_item_frac,
                cfg.split.embed_frac, cfg.split.model_frac, seed=cfg.stage_seed("split"),
            )
            save_split(split, d, table)
            return [f.name for f in d.iterdir() if f.name != "stage.json"]

        return self._run("split", key, build)

    def embed(self) -> StageResult:
        cfg = self.cfg
        sp = self.split()
        ec = cfg.embedding
        extra = ""
        if ec.source == "import":
            if not ec.user_path or not ec.item_path:
                raise ConfigError("embedding.source=import needs embedding.user_path and embedding.item_path")
            extra = _key(file_digest(ec.user_path), file_digest(ec.item_path))
        elif ec.source != "bpr":
            raise ConfigError(f"unknown embedding.source {ec.source!r}")
        key = _key("embed", sp.key, cfg.section_hash("embedding"), extra)

        def build(d: Path):
            split = load_split(sp.directory)
            if ec.source == "import":
                store = import_embeddings(ec.user_path, ec.item_path, ec.format)
                if store.user_embeddings.shape[0] != split.n_users or store.item_embeddings.shape[0] != split.n_items:
                    raise DataError(
                        f"imported embeddings have {store.user_embeddings.shape[0]} users / "
                        f"{store.item_embeddings.shape[0]} items, split has {split.n_users} / {split.n_items}")
            else:
                store = train_bpr_mf(
                    split.embed_train, split.n_users, split.n_items, dim=ec.dim, epochs=ec.epochs,
                    lr=ec.lr, l2=ec.l2, seed=cfg.stage_seed("embed"), batch_size=ec.batch_size,
                    item_pool=split.warm_items,
                )
            export_matrix(d / "user_emb.bin", store.user_embeddings, "binary")
            export_matrix(d / "item_emb.bin", store.item_embeddings, "binary")
            np.savetxt(d / "user_trained.txt", store.user_trained.astype(int), fmt="%d")
            np.savetxt(d / "item_trained.txt", store.item_trained.astype(int), fmt="%d")
            return ["user_emb.bin", "item_emb.bin", "user_trained.txt", "item_trained.txt"]

        return self._run("embed", key, build)

    def load_embeddings(self) -> EmbeddingStore:
        d = self.embed().directory
        U, _ = import_matrix(d / "user_emb.bin", "binary")
        V, _ = import_matrix(d / "item_emb.bin", "binary")
        ut = np.loadtxt(d / "user_trained.txt", dtype=int, ndmin=1).astype(bool)
        it = np.loadtxt(d / "item_trained.txt", dtype=int, ndmin=1).astype(bool)
        return EmbeddingStore(U, V, ut, it)

    def walks(self) -> StageResult:
        cfg = self.cfg
        em = self.embed()
        sp = self.split()
        key = _key("walks", em.key, cfg.section_hash("walks"))

        def build(d: Path):
            split = load_split(sp.directory)
            store = self.load_embeddings()
            wc = cfg.walks
            if wc.graph_source not in ("embed", "train"):
                raise ConfigError(f"unknown walks.graph_source {wc.graph_source!r}")
            pairs = split.embed_train if wc.graph_source == "embed" else split.train_pairs
            graph = build_graph(pairs, split.n_users, split.n_items)
            ur, ir = precompute_layer_reps(
                graph, store.user_embeddings.astype(np.float64), store.item_embeddings.astype(np.float64),
                wc.n_walks, wc.n_layers, cfg.stage_seed("walks"),
                users=split.warm_users, items=split.warm_items,
            )
            save_layer_reps(d / "user_reps.bin", ur)
            save_layer_reps(d / "item_reps.bin", ir)
            return ["user_reps.bin", "item_reps.bin"]

        return self._run("walks", key, build)

    def _features(self, which: str, ids: list[str]) -> np.ndarray | None:
        path = getattr(self.cfg.paths, f"{which}_features")
        if not path:
            return None
        fmt = "binary" if str(path).endswith(".bin") else "text"
        values = align_features(read_features(path, fmt), ids)
        return l2_normalize_rows(values) if self.cfg.train.normalize_features else values

    def context(self):
        sp = self.split()
        wk = self.walks()
        split = load_split(sp.directory)
        ur = load_layer_reps(wk.directory / "user_reps.bin")
        ir = load_layer_reps(wk.directory / "item_reps.bin")
        user_ids = _read_ids(sp.directory / "users.map", split.n_users)
        item_ids = _read_ids(sp.directory / "items.map", split.n_items)
        ctx = ScoringContext.build(
            ur, ir, self._features("user", user_ids), self._features("item", item_ids), split)
        return split, ctx

    def train(self) -> StageResult:
        cfg = self.cfg
        wk = self.walks()
        key = _key("train", wk.key, cfg.section_hash("train"), self._input_digest())

        def build(d: Path):
            split, ctx = self.context()
            tc = replace(cfg.train, seed=cfg.stage_seed("train"))
            result = fit(split, ctx, tc)
            p = result.params
            save_checkpoint(d / "checkpoint.bin", p.user_weights, p.item_weights, p.user_mlp, p.item_mlp)
            records = result.log
            if self.deterministic:
                records = [replace(r, elapsed_ms=0) for r in records]
            (d / "train_log.tsv").write_text(replace(result, log=records).log_tsv())
            summary = {
                "best_epoch": result.best_epoch,
                "best_auc": result.best_auc,
                "epochs_run": len(result.log),
                "max_cold_weight_grad": max((r.cold_weight_grad for r in result.log), default=0.0),
            }
            (d / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
            return ["checkpoint.bin", "train_log.tsv", "summary.json"]

        return self._run("train", key, build)

    def load_params(self) -> GnpParams:
        uw, iw, um, im = load_checkpoint(self.train().directory / "checkpoint.bin")
        return GnpParams(uw, iw, um, im)

    def evaluate(self) -> tuple[StageResult, list[EvalReport]]:
        cfg = self.cfg
        tr = self.train()
        key = _key("eval", tr.key, cfg.section_hash("eval"))
        reports: list[EvalReport] = []

        def build(d: Path):
            split, ctx = self.context()
            scorer = GnpScorer(self.load_params(), ctx)
            for protocol in cfg.eval.protocol_list():
                if protocol == "cold" and len(split.cold_items) == 0:
                    continue
                reports.append(evaluate(split, scorer, protocol, cfg.eval.k))
            persisted = [replace(r, wall_time_ms=0) for r in reports] if self.deterministic else reports
            (d / "report.tsv").write_text(reports_tsv(persisted))
            (d / "report.json").write_text("".join(r.to_json() + "\n" for r in persisted))
            return ["report.tsv", "report.json"]

        res = self._run("eval", key, build)
        if not reports:
            reports = read_reports(res.directory / "report.json")
        return res, reports

    def bench(self, n_users: int, repeat: int, k: int):
        split, ctx = self.context()
        params = self.load_params()
        scorer = GnpScorer(params, ctx)
        emb = self.load_embeddings()
        user_inputs = np.concatenate([emb.user_embeddings, ctx.user_features], axis=1)
        item_inputs = np.concatenate([emb.item_embeddings, ctx.item_features], axis=1)
        users = split.warm_users[:n_users]
        return bench_inference(
            scorer.user_rep[users], scorer.item_rep[split.warm_items],
            user_inputs[users], item_inputs[split.warm_items],
            (params.user_mlp, params.item_mlp), len(users), repeat, k,
        )

    def full_run(self) -> list[EvalReport]:
        for stage in (self.split, self.embed, self.walks, self.train):
            _with_stage(stage.__name__, stage)
        return _with_stage("eval", self.evaluate)[1]


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _with_stage(name, fn):
    try:
        return fn()
    except (ConfigError, DataError, FloatingPointError) as exc:
        raise StageError(name, exc) from exc


def _read_ids(path: Path, n: int) -> list[str]:
    if path.exists():
        ids = path.read_text(encoding="utf-8").split("\n")[:n]
        if len(ids) == n:
            return ids
    return [str(i) for i in range(n)]


def read_reports(path) -> list[EvalReport]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(EvalReport(**json.loads(line)))
    return out


def sweep_tau(cfg: RunConfig, taus: list[float], deterministic: bool = True) -> list[dict]:
    """One train+eval per dropout ratio on a shared split, embeddings and walks."""
    rows = []
    for tau in taus:
        run_cfg = replace(cfg, train=replace(cfg.train, tau=tau),
                          eval=replace(cfg.eval, protocols="hybrid,cold"))
        pipe = Pipeline(run_cfg, deterministic=deterministic)
        row: dict = {"tau": tau}
        try:
            _, reports = pipe.evaluate()
            summary = json.loads((pipe.train().directory / "summary.json").read_text())
            by = {r.protocol: r for r in reports}
            h = by["hybrid"]
            row.update(status="ok", recall=h.recall, precision=h.precision, ndcg=h.ndcg,
                       cold_ndcg=by["cold"].ndcg if "cold" in by else float("nan"),
                       max_cold_weight_grad=summary["max_cold_weight_grad"])
        except FloatingPointError as exc:
            row.update(status=f"failed: {exc}", recall=float("nan"), precision=float("nan"),
                       ndcg=float("nan"), cold_ndcg=float("nan"), max_cold_weight_grad=float("nan"))
        rows.append(row)
    return rows


def sweep_tsv(rows: list[dict]) -> str:
    cols = ["tau", "recall", "precision", "ndcg", "cold_ndcg", "max_cold_weight_grad", "status"]
    lines = ["\t".join(cols)]
    for r in rows:
        lines.append("\t".join(
            f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c]) for c in cols))
    return "\n".join(lines) + "\n"
