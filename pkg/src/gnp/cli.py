"""Command-line entry point.

    gnp prepare --config run.ini
    gnp train --config run.ini --train.lr=0.001
    gnp full-run --config run.ini --threads 1

Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical abort.
Failures print a single ``gnp: error[<kind>]: <message>`` line on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import ConfigError, dump_config, load_config
from .data import DataError
from .eval import reports_table
from .pipeline import Pipeline, StageError, sweep_tau, sweep_tsv

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

COMMANDS = (
    "prepare", "train-embeddings", "import-embeddings", "precompute-walks",
    "train", "eval", "bench", "sweep-tau", "full-run", "synth",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnp", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI-style config file")
        p.add_argument("--threads", type=int, default=1,
                       help="cap on numeric worker threads; 1 forces the deterministic path")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "import-embeddings":
            p.add_argument("--user-emb", required=True)
            p.add_argument("--item-emb", required=True)
            p.add_argument("--format", choices=("text", "binary"), default="text")
        if name in ("eval", "full-run"):
            p.add_argument("--json", action="store_true", help="one JSON object per protocol")
        if name == "bench":
            p.add_argument("--users", type=int, default=1000)
            p.add_argument("--repeat", type=int, default=5)
            p.add_argument("--synthetic-items", type=int, default=0,
                           help="time randomly initialised models on this many items instead of a trained run")
            p.add_argument("--dim", type=int, default=200)
        if name == "sweep-tau":
            p.add_argument("--taus", default="0,0.25,0.5,0.75,1")
        if name == "synth":
            p.add_argument("--out", required=True)
            p.add_argument("--n-users", type=int, default=200)
            p.add_argument("--n-items", type=int, default=300)
            p.add_argument("--n-blocks", type=int, default=4)
            p.add_argument("--p-in", type=float, default=0.3)
            p.add_argument("--p-cross", type=float, default=0.01)
            p.add_argument("--feature-dim", type=int, default=8)
            p.add_argument("--noise", type=float, default=0.1)
            p.add_argument("--seed", type=int, default=0)
    return parser


def _emit_reports(reports, as_json: bool) -> None:
    if as_json:
        for r in reports:
            print(r.to_json())
    else:
        print(reports_table(reports))


def _synth(args) -> int:
    from .synthgen import SynthSpec, generate, write_dataset

    spec = SynthSpec(args.n_users, args.n_items, args.n_blocks, args.p_in, args.p_cross,
                     args.feature_dim, args.noise, args.seed)
    paths = write_dataset(generate(spec), args.out)
    cfg = load_config(None, [
        f"paths.interactions={paths['interactions']}",
        f"paths.user_features={paths['user_features']}",
        f"paths.item_features={paths['item_features']}",
        f"paths.workdir={Path(args.out) / 'work'}",
        "embedding.dim=32", "embedding.epochs=100", "embedding.batch_size=64",
        "train.batch_size=128", "train.max_epochs=50",
    ])
    cfg_path = Path(args.out) / "run.ini"
    cfg_path.write_text(dump_config(cfg))
    print(f"wrote {paths['interactions']} and {cfg_path}")
    return 0


def _bench_synthetic(args) -> int:
    import numpy as np

    from .eval import bench_inference
    from .patching import Mlp

    rng = np.random.default_rng(0)
    d = args.dim
    n_items = args.synthetic_items
    ur = rng.standard_normal((args.users, d))
    ir = rng.standard_normal((n_items, d))
    towers = (Mlp.init(2 * d, d, d, 2, rng), Mlp.init(2 * d, d, d, 2, rng))
    rep = bench_inference(ur, ir, rng.standard_normal((args.users, 2 * d)),
                          rng.standard_normal((n_items, 2 * d)), towers, args.users, args.repeat)
    print(json.dumps(rep.summary(), indent=2))
    return 0


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    bad = [e for e in extra if not (e.startswith("--") and "." in e.split("=")[0] and "=" in e)]
    if bad:
        parser.error(f"unrecognized arguments: {' '.join(bad)}")
    if args.command == "synth":
        return _synth(args)
    if args.command == "bench" and args.synthetic_items:
        with threadpool_limits(args.threads):
            return _bench_synthetic(args)

    overrides = list(extra)
    if args.command == "import-embeddings":
        overrides += ["embedding.source=import", f"embedding.user_path={args.user_emb}",
                      f"embedding.item_path={args.item_emb}", f"embedding.format={args.format}"]
    if args.command == "train-embeddings":
        overrides.append("embedding.source=bpr")
    cfg = load_config(args.config, overrides)
    pipe = Pipeline(cfg, deterministic=args.threads == 1)

    with threadpool_limits(args.threads):
        if args.command == "prepare":
            res = pipe.split()
            print(f"split: {pipe.status['split']} -> {res.directory / 'manifest.json'}")
        elif args.command in ("train-embeddings", "import-embeddings"):
            res = pipe.embed()
            print(f"embed: {pipe.status['embed']} -> {res.directory}")
        elif args.command == "precompute-walks":
            res = pipe.walks()
            print(f"walks: {pipe.status['walks']} -> {res.directory}")
        elif args.command == "train":
            res = pipe.train()
            print((res.directory / "train_log.tsv").read_text(), end="")
            print(f"train: {pipe.status['train']} -> {res.directory / 'checkpoint.bin'}")
        elif args.command == "eval":
            _, reports = pipe.evaluate()
            _emit_reports(reports, args.json)
        elif args.command == "bench":
            rep = pipe.bench(args.users, args.repeat, cfg.eval.k)
            print(json.dumps(rep.summary(), indent=2))
        elif args.command == "sweep-tau":
            taus = [float(t) for t in args.taus.split(",")]
            rows = sweep_tau(cfg, taus, deterministic=args.threads == 1)
            text = sweep_tsv(rows)
            out = Path(cfg.paths.workdir) / "sweep_tau.tsv"
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(text)
            print(text, end="")
        elif args.command == "full-run":
            reports = pipe.full_run()
            for stage, state in pipe.status.items():
                print(f"stage {stage}: {state}", file=sys.stderr)
            _emit_reports(reports, args.json)
            report_dir = pipe.evaluate()[0].directory
            (Path(cfg.paths.workdir) / "report.tsv").write_text((report_dir / "report.tsv").read_text())
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        code = run(argv)
    except StageError as exc:
        kind, code = _classify(exc.cause)
        print(f"gnp: error[{kind}]: stage {exc.stage}: {_one_line(exc.cause)}", file=sys.stderr)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        kind, code = _classify(exc)
        if kind == "internal":
            raise
        print(f"gnp: error[{kind}]: {_one_line(exc)}", file=sys.stderr)
    return code


def _classify(exc: Exception) -> tuple[str, int]:
    if isinstance(exc, ConfigError):
        return "config", EXIT_CONFIG
    if isinstance(exc, (DataError, FileNotFoundError)):
        return "data", EXIT_DATA
    if isinstance(exc, FloatingPointError):
        return "numerical", EXIT_NUMERIC
    return "internal", 1


def _one_line(exc: Exception) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
