"""Planted-block synthetic interaction data with block-revealing side features."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import write_features, write_pairs_tsv


@dataclass(frozen=True)
class SynthSpec:
    n_users: int = 200
    n_items: int = 300
    n_blocks: int = 4
    in_block_prob: float = 0.3
    cross_block_prob: float = 0.01
    feature_dim: int = 8
    feature_noise: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        for p in (self.in_block_prob, self.cross_block_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if not self.in_block_prob > self.cross_block_prob:
            raise ValueError("in_block_prob must exceed cross_block_prob")
        if self.feature_dim < self.n_blocks:
            raise ValueError("feature_dim must be at least n_blocks")


@dataclass
class SynthData:
    pairs: np.ndarray
    user_features: np.ndarray
    item_features: np.ndarray
    user_blocks: np.ndarray
    item_blocks: np.ndarray


def _features(blocks: np.ndarray, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros((len(blocks), spec.feature_dim))
    out[np.arange(len(blocks)), blocks] = 1.0
    return out + spec.feature_noise * rng.standard_normal(out.shape)


def generate(spec: SynthSpec) -> SynthData:
    rng = np.random.default_rng(spec.seed)
    ub = np.arange(spec.n_users) % spec.n_blocks
    ib = np.arange(spec.n_items) % spec.n_blocks
    same = ub[:, None] == ib[None, :]
    prob = np.where(same, spec.in_block_prob, spec.cross_block_prob)
    hit = rng.random(prob.shape) < prob
    pairs = np.argwhere(hit).astype(np.int64)
    return SynthData(pairs, _features(ub, spec, rng), _features(ib, spec, rng), ub, ib)


def write_dataset(data: SynthData, directory) -> dict[str, Path]:
    """Interactions TSV plus text feature files, feature rows indexed by entity id."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "interactions": directory / "interactions.tsv",
        "user_features": directory / "user_features.txt",
        "item_features": directory / "item_features.txt",
    }
    write_pairs_tsv(paths["interactions"], data.pairs)
    write_features(paths["user_features"], data.user_features)
    write_features(paths["item_features"], data.item_features)
    return paths
