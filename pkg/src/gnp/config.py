"""Run configuration: dataclass sections plus an INI reader with dotted overrides.

Defaults follow the reference experimental setup (3 walk layers, 25 walks,
Adam at 1e-3, batch 1024, dropout ratio 0.5, l2 1e-5, width 200).
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    interactions: str = ""
    interactions_format: str = "tsv"
    user_features: str = ""
    item_features: str = ""
    workdir: str = "gnp_work"
    split_file: str = ""


@dataclass
class SplitConfig:
    cold_item_frac: float = 0.2
    embed_frac: float = 0.65
    model_frac: float = 0.15


@dataclass
class EmbeddingConfig:
    source: str = "bpr"  # bpr | import
    dim: int = 200
    epochs: int = 200
    lr: float = 0.05
    l2: float = 1e-5
    batch_size: int = 256
    user_path: str = ""
    item_path: str = ""
    format: str = "text"


@dataclass
class WalkConfig:
    n_walks: int = 25
    n_layers: int = 3
    graph_source: str = "embed"  # embed | train


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 1024
    l2: float = 1e-5
    tau: float = 0.5
    n_neg_per_pos: int = 4
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    hidden: int = 200
    depth: int = 2
    normalize_features: bool = False
    early_stop_protocol: str = "hybrid"  # hybrid | warm

    def __post_init__(self) -> None:
        if not self.lr >= 0:
            raise ConfigError(f"train.lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"train.tau must lie in [0, 1], got {self.tau}")
        if self.n_neg_per_pos < 1:
            raise ConfigError("train.n_neg_per_pos must be >= 1")
        if self.early_stop_protocol not in ("hybrid", "warm"):
            raise ConfigError(f"unknown early_stop_protocol {self.early_stop_protocol!r}")


@dataclass
class EvalConfig:
    k: int = 20
    protocols: str = "hybrid,warm,cold"

    def protocol_list(self) -> list[str]:
        out = [p.strip() for p in self.protocols.split(",") if p.strip()]
        for p in out:
            if p not in ("hybrid", "warm", "cold"):
                raise ConfigError(f"unknown eval protocol {p!r}")
        return out


@dataclass
class RunConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    walks: WalkConfig = field(default_factory=WalkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    SECTIONS = ("paths", "split", "embedding", "walks", "train", "eval")

    def section_hash(self, name: str) -> str:
        payload = json.dumps(dataclasses.asdict(getattr(self, name)), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def stage_seed(self, stage: str) -> int:
        """Per-stage seed from a stable hash of (master seed, stage name)."""
        digest = hashlib.sha256(f"{self.seed}:{stage}".encode()).digest()
        return int.from_bytes(digest[:4], "little")


def _coerce(raw: str, typ: Any, key: str) -> Any:
    typ = typ if isinstance(typ, type) else {"int": int, "float": float, "bool": bool, "str": str}[typ]
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"cannot parse {key}={raw!r} as {typ.__name__}") from None


def _set(cfg: RunConfig, dotted: str, raw: str) -> None:
    if dotted in ("seed", "run.seed"):
        cfg.seed = _coerce(raw, int, dotted)
        return
    section, _, name = dotted.partition(".")
    if section not in RunConfig.SECTIONS or not name:
        raise ConfigError(f"unknown config key {dotted!r}")
    sec = getattr(cfg, section)
    types = {f.name: f.type for f in fields(sec)}
    if name not in types:
        raise ConfigError(f"unknown config key {dotted!r}")
    setattr(sec, name, _coerce(raw, types[name], dotted))


def load_config(path: str | os.PathLike | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Read an INI-style file (optional) then apply ``section.key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.read(path)
        for section in parser.sections():
            for key, value in parser.items(section, raw=True):
                _set(cfg, f"{section}.{key}", value)
    for item in overrides or []:
        key, sep, value = item.lstrip("-").partition("=")
        if not sep:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        _set(cfg, key, value)
    # re-run validation after mutation
    cfg.train.__post_init__()
    cfg.eval.protocol_list()
    if os.environ.get("GNP_WORKDIR"):
        cfg.paths.workdir = os.environ["GNP_WORKDIR"]
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = ["[run]", f"seed = {cfg.seed}", ""]
    for name in RunConfig.SECTIONS:
        lines.append(f"[{name}]")
        for key, value in dataclasses.asdict(getattr(cfg, name)).items():
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
