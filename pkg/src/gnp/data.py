"""Interaction ingestion, cold/warm splitting and negative sampling.

Interactions are carried as ``(n, 2)`` int64 arrays of ``(user, item)`` rows
with dense 0-based ids.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


class EmptyDatasetError(DataError):
    pass


@dataclass
class InteractionTable:
    pairs: np.ndarray
    user_ids: list[str]
    item_ids: list[str]

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)


@dataclass
class DatasetSplit:
    n_users: int
    n_items: int
    warm_items: np.ndarray
    cold_items: np.ndarray
    warm_users: np.ndarray
    embed_train: np.ndarray
    model_train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    rng_seed: int
    fractions: dict = field(default_factory=dict)

    PARTS = ("embed_train", "model_train", "validation", "test")

    @property
    def train_pairs(self) -> np.ndarray:
        return np.concatenate([self.embed_train, self.model_train])

    def is_warm_user(self) -> np.ndarray:
        mask = np.zeros(self.n_users, dtype=bool)
        mask[self.warm_users] = True
        return mask

    def is_warm_item(self) -> np.ndarray:
        mask = np.zeros(self.n_items, dtype=bool)
        mask[self.warm_items] = True
        return mask


def _id_sort_key(ids: list[str]):
    if all(s.lstrip("-").isdigit() for s in ids):
        return lambda s: (int(s), s)
    return lambda s: s


def _remap(users: list[str], items: list[str]) -> InteractionTable:
    if not users:
        raise EmptyDatasetError("dataset contains no interactions")
    uniq_u = sorted(set(users), key=_id_sort_key(users))
    uniq_i = sorted(set(items), key=_id_sort_key(items))
    umap = {u: k for k, u in enumerate(uniq_u)}
    imap = {i: k for k, i in enumerate(uniq_i)}
    pairs = np.array([(umap[u], imap[i]) for u, i in zip(users, items)], dtype=np.int64)
    pairs = dedup(pairs)
    return InteractionTable(pairs, uniq_u, uniq_i)


def dedup(pairs: np.ndarray) -> np.ndarray:
    """Drop repeated rows, keeping first-occurrence order."""
    if len(pairs) == 0:
        return pairs.reshape(0, 2)
    _, first = np.unique(pairs, axis=0, return_index=True)
    return pairs[np.sort(first)]


def load_interactions(path, format: str = "tsv") -> InteractionTable:
    """Read ``user<TAB>item`` rows (or the u32 binary layout) and remap ids densely.

    Ids are ordered numerically when every id is an integer, lexically otherwise.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"interaction file not found: {path}")
    users: list[str] = []
    items: list[str] = []
    if format == "tsv":
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n").rstrip("\r")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or not parts[0] or not parts[1]:
                    raise DataError(f"{path}:{lineno}: expected 'user<TAB>item', got {line!r}")
                users.append(parts[0])
                items.append(parts[1])
    elif format == "binary":
        raw = read_pairs_binary(path)
        users = [str(u) for u in raw[:, 0]]
        items = [str(i) for i in raw[:, 1]]
    else:
        raise DataError(f"unknown interaction format {format!r}")
    return _remap(users, items)


def write_pairs_tsv(path, pairs: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in pairs:
            fh.write(f"{u}\t{i}\n")


def read_pairs_tsv(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                u, i = line.split("\t")
                rows.append((int(u), int(i)))
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed row {line!r}") from None
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def write_pairs_binary(path, pairs: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(pairs)))
        fh.write(np.ascontiguousarray(pairs, dtype="<u4").tobytes())


def read_pairs_binary(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise DataError(f"{path}: truncated header")
    (count,) = struct.unpack_from("<I", data)
    if len(data) != 4 + 8 * count:
        raise DataError(f"{path}: expected {count} pairs, file size is {len(data)} bytes")
    return np.frombuffer(data, dtype="<u4", offset=4).reshape(count, 2).astype(np.int64)


# --- features -------------------------------------------------------------

def write_features(path, values: np.ndarray, format: str = "text") -> None:
    values = np.asarray(values)
    rows, dim = values.shape
    if format == "text":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{rows} {dim}\n")
            for row in values.astype(np.float32):
                fh.write(" ".join(f"{v:.9g}" for v in row) + "\n")
    elif format == "binary":
        with open(path, "wb") as fh:
            fh.write(struct.pack("<II", rows, dim))
            fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())
    else:
        raise DataError(f"unknown feature format {format!r}")


def read_features(path, format: str = "text") -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"feature file not found: {path}")
    if format == "binary":
        data = path.read_bytes()
        rows, dim = struct.unpack_from("<II", data)
        values = np.frombuffer(data, dtype="<f4", offset=8).reshape(rows, dim)
    else:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise DataError(f"{path}:1: expected header 'rows dim'")
            rows, dim = int(header[0]), int(header[1])
            values = np.zeros((rows, dim), dtype=np.float32)
            for r in range(rows):
                line = fh.readline()
                parts = line.split()
                if len(parts) != dim:
                    raise DataError(f"{path}:{r + 2}: expected {dim} values, got {len(parts)}")
                values[r] = [float(v) for v in parts]
    if dim <= 0:
        raise DataError(f"{path}: feature dim must be positive")
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite feature values")
    return values.astype(np.float64)


def align_features(values: np.ndarray, ids: list[str]) -> np.ndarray:
    """Reorder feature rows (indexed by original integer id) into dense-id order."""
    try:
        idx = np.array([int(s) for s in ids], dtype=np.int64)
    except ValueError:
        raise DataError("feature alignment needs integer entity ids") from None
    if len(idx) and (idx.min() < 0 or idx.max() >= len(values)):
        raise DataError(f"entity id {idx.max()} has no feature row ({len(values)} rows)")
    return values[idx]


def l2_normalize_rows(values: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(values, axis=1, keepdims=True)
    return values / np.where(norms > 0, norms, 1.0)


# --- splitting ------------------------------------------------------------

def make_split(
    pairs: np.ndarray,
    n_users: int,
    n_items: int,
    cold_item_frac: float = 0.2,
    embed_frac: float = 0.65,
    model_frac: float = 0.15,
    seed: int = 0,
) -> DatasetSplit:
    """Pick cold items, then partition warm interactions into embed/model/val/test.

    Cold-item interactions only ever land in validation or test (50/50), as
    does the held-out remainder of the warm interactions.
    """
    if not (0.0 <= cold_item_frac <= 1.0):
        raise DataError("cold_item_frac must lie in [0, 1]")
    if embed_frac <= 0 or model_frac <= 0 or embed_frac + model_frac >= 1:
        raise DataError("need embed_frac > 0, model_frac > 0 and embed_frac + model_frac < 1")
    pairs = dedup(np.asarray(pairs, dtype=np.int64).reshape(-1, 2))
    rng = np.random.default_rng(seed)

    n_cold = int(round(cold_item_frac * n_items))
    cold_items = np.sort(rng.choice(n_items, size=n_cold, replace=False))
    is_cold = np.zeros(n_items, dtype=bool)
    is_cold[cold_items] = True
    warm_items = np.flatnonzero(~is_cold)

    touches_cold = is_cold[pairs[:, 1]]
    warm_pairs = pairs[~touches_cold]
    cold_pairs = pairs[touches_cold]

    warm_pairs = warm_pairs[rng.permutation(len(warm_pairs))]
    n = len(warm_pairs)
    n_embed = int(round(embed_frac * n))
    n_model = int(round(model_frac * n))
    rest = warm_pairs[n_embed + n_model:]
    n_val = len(rest) // 2

    cold_pairs = cold_pairs[rng.permutation(len(cold_pairs))]
    n_cold_val = len(cold_pairs) // 2

    embed_train = warm_pairs[:n_embed]
    model_train = warm_pairs[n_embed:n_embed + n_model]
    validation = np.concatenate([rest[:n_val], cold_pairs[:n_cold_val]])
    test = np.concatenate([rest[n_val:], cold_pairs[n_cold_val:]])

    trained = np.concatenate([embed_train, model_train])
    warm_users = np.unique(trained[:, 0])
    lost = np.setdiff1d(np.unique(pairs[:, 0]), warm_users)
    if len(lost):
        log.warning("%d users have no training interactions and are treated as cold", len(lost))

    return DatasetSplit(
        n_users=n_users,
        n_items=n_items,
        warm_items=warm_items,
        cold_items=cold_items,
        warm_users=warm_users,
        embed_train=embed_train,
        model_train=model_train,
        validation=validation.reshape(-1, 2),
        test=test.reshape(-1, 2),
        rng_seed=seed,
        fractions={"cold_item_frac": cold_item_frac, "embed_frac": embed_frac, "model_frac": model_frac},
    )


def user_item_sets(pairs: np.ndarray, n_users: int) -> list[set[int]]:
    out: list[set[int]] = [set() for _ in range(n_users)]
    for u, i in pairs:
        out[u].add(int(i))
    return out


def sample_negatives(
    positives: np.ndarray,
    n_neg_per_pos: int,
    item_pool: np.ndarray,
    rng: np.random.Generator,
    known: list[set[int]] | dict[int, set[int]] | None = None,
    max_retries: int = 10,
) -> np.ndarray:
    """Uniform negatives from ``item_pool``, rejecting each user's known positives.

    ``known`` defaults to the positives themselves. After ``max_retries``
    rejected redraws the last draw is kept, so users covering the whole pool
    still receive their quota.
    """
    item_pool = np.asarray(item_pool, dtype=np.int64)
    if len(item_pool) == 0:
        raise DataError("negative sampling needs a nonempty item pool")
    if n_neg_per_pos < 1:
        raise DataError("n_neg_per_pos must be >= 1")
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    if known is None:
        known = {}
        for u, i in positives:
            known.setdefault(int(u), set()).add(int(i))
    users = np.repeat(positives[:, 0], n_neg_per_pos)
    items = item_pool[rng.integers(0, len(item_pool), size=len(users))]

    def is_known(u: int, i: int) -> bool:
        s = known[u] if isinstance(known, list) else known.get(u, ())
        return i in s

    bad = np.array([is_known(int(u), int(i)) for u, i in zip(users, items)], dtype=bool)
    for _ in range(max_retries):
        idx = np.flatnonzero(bad)
        if len(idx) == 0:
            break
        items[idx] = item_pool[rng.integers(0, len(item_pool), size=len(idx))]
        bad[idx] = [is_known(int(users[j]), int(items[j])) for j in idx]
    return np.stack([users, items], axis=1)


# --- split persistence ----------------------------------------------------

def save_split(split: DatasetSplit, directory, table: InteractionTable | None = None) -> Path:
    """Write partition files plus a JSON manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for part in DatasetSplit.PARTS:
        fname = f"{part}.tsv"
        write_pairs_tsv(directory / fname, getattr(split, part))
        files[part] = fname
    np.savetxt(directory / "cold_items.txt", split.cold_items, fmt="%d")
    np.savetxt(directory / "warm_users.txt", split.warm_users, fmt="%d")
    if table is not None:
        (directory / "users.map").write_text("\n".join(table.user_ids) + "\n", encoding="utf-8")
        (directory / "items.map").write_text("\n".join(table.item_ids) + "\n", encoding="utf-8")
    manifest = {
        "seed": split.rng_seed,
        "fractions": split.fractions,
        "n_users": split.n_users,
        "n_items": split.n_items,
        "n_cold_items": int(len(split.cold_items)),
        "n_warm_users": int(len(split.warm_users)),
        "counts": {part: int(len(getattr(split, part))) for part in DatasetSplit.PARTS},
        "files": files,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_split(directory) -> DatasetSplit:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    parts = {p: read_pairs_tsv(directory / manifest["files"][p]) for p in DatasetSplit.PARTS}
    cold = np.atleast_1d(np.loadtxt(directory / "cold_items.txt", dtype=np.int64, ndmin=1))
    warm_users = np.atleast_1d(np.loadtxt(directory / "warm_users.txt", dtype=np.int64, ndmin=1))
    n_items = manifest["n_items"]
    is_cold = np.zeros(n_items, dtype=bool)
    is_cold[cold] = True
    return DatasetSplit(
        n_users=manifest["n_users"],
        n_items=n_items,
        warm_items=np.flatnonzero(~is_cold),
        cold_items=cold,
        warm_users=warm_users,
        rng_seed=manifest["seed"],
        fractions=manifest["fractions"],
        **parts,
    )
