"""Interaction ingestion, k-core filtering and train/val/test splitting."""

from __future__ import annotations

import csv
import io
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np


class DataError(ValueError):
    pass


class ParseError(DataError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class InteractionRecord(NamedTuple):
    user: str
    item: str


@dataclass
class IndexedDataset:
    M: int
    N: int
    train: list[tuple[int, int]]
    val: list[tuple[int, int]]
    test: list[tuple[int, int]]
    user_map: dict[str, int]
    item_map: dict[str, int]
    seed: int | None = None
    threshold: int | None = None
    _positives: dict[str, list[set[int]]] = field(default_factory=dict, repr=False, compare=False)

    def positives(self, split: str = "train") -> list[set[int]]:
        """Per-user item sets for one split (cached)."""
        if split not in self._positives:
            pairs = {"train": self.train, "val": self.val, "test": self.test}[split]
            sets: list[set[int]] = [set() for _ in range(self.M)]
            for u, i in pairs:
                sets[u].add(i)
            self._positives[split] = sets
        return self._positives[split]

    @property
    def R_u(self) -> list[set[int]]:
        return self.positives("train")

    def train_array(self) -> np.ndarray:
        return np.asarray(self.train, dtype=np.int64).reshape(-1, 2)

    def validate(self) -> None:
        if not self.train:
            raise DataError("dataset has no training records")
        for name, pairs in (("train", self.train), ("val", self.val), ("test", self.test)):
            for u, i in pairs:
                if not (0 <= u < self.M and 0 <= i < self.N):
                    raise DataError(f"{name} record ({u}, {i}) out of range for M={self.M}, N={self.N}")
        seen_users = {u for u, _ in self.train}
        if len(seen_users) != self.M:
            raise DataError("every user needs at least one training record")


def parse_interactions(source: bytes | str | IO, format: str = "tsv") -> list[InteractionRecord]:
    """Parse delimited ``user<sep>item[<sep>...]`` lines; extra columns are ignored."""
    if format not in ("tsv", "csv"):
        raise DataError(f"unknown format {format!r}")
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if not source.strip():
        raise DataError("empty interaction file")

    if format == "csv":
        rows: Iterable[list[str]] = csv.reader(io.StringIO(source))
    else:
        rows = (line.rstrip("\r\n").split("\t") for line in io.StringIO(source))

    records = []
    for line_no, fields in enumerate(rows, start=1):
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) < 2 or not fields[0].strip() or not fields[1].strip():
            raise ParseError(line_no, f"expected at least 2 fields, got {len(fields)}")
        records.append(InteractionRecord(fields[0].strip(), fields[1].strip()))
    if not records:
        raise DataError("empty interaction file")
    return records


def read_interactions(path: str | os.PathLike, format: str = "tsv") -> list[InteractionRecord]:
    with open(path, "rb") as fh:
        return parse_interactions(fh, format)


def k_core_filter(records: Sequence[InteractionRecord], threshold: int = 10) -> list[InteractionRecord]:
    """Deduplicate, then peel users/items with < threshold interactions until a fixed point.

    Survivors keep their first-occurrence order.
    """
    if threshold < 1:
        raise DataError("threshold must be >= 1")
    kept = list(dict.fromkeys(InteractionRecord(*r) for r in records))
    while kept:
        user_deg = Counter(r.user for r in kept)
        item_deg = Counter(r.item for r in kept)
        survivors = [r for r in kept if user_deg[r.user] >= threshold and item_deg[r.item] >= threshold]
        if len(survivors) == len(kept):
            break
        kept = survivors
    if not kept:
        raise DataError("k-core filter eliminated all data")
    return kept


def _split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    n_train = math.floor(n * ratios[0] + 1e-9)
    n_val = math.floor(n * ratios[1] + 1e-9)
    return n_train, n_val, n - n_train - n_val


def split_dataset(
    records: Sequence[InteractionRecord],
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    threshold: int | None = None,
) -> IndexedDataset:
    """Global random split plus a repair step giving every user one training record."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios must be three non-negative numbers summing to 1, got {tuple(ratios)}")
    records = list(dict.fromkeys(InteractionRecord(*r) for r in records))
    if len(records) < 3:
        raise DataError("need at least 3 records to split")

    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    for r in records:
        user_map.setdefault(r.user, len(user_map))
        item_map.setdefault(r.item, len(item_map))
    pairs = [(user_map[r.user], item_map[r.item]) for r in records]

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    n_train, n_val, _ = _split_sizes(len(pairs), ratios)
    buckets: list[list[tuple[int, int]]] = [
        [pairs[k] for k in order[:n_train]],
        [pairs[k] for k in order[n_train:n_train + n_val]],
        [pairs[k] for k in order[n_train + n_val:]],
    ]

    train_users = {u for u, _ in buckets[0]}
    missing = [u for u in range(len(user_map)) if u not in train_users]
    if missing:
        missing_set = set(missing)
        held: dict[int, list[list[int]]] = {u: [[], []] for u in missing}
        for b in (1, 2):
            for pos, (u, _) in enumerate(buckets[b]):
                if u in missing_set:
                    held[u][b - 1].append(pos)
        moved: list[set[int]] = [set(), set()]
        for u in missing:
            val_pos, test_pos = held[u]
            # ties go to test so validation keeps its share
            b = 1 if len(val_pos) > len(test_pos) else 2
            pos = (val_pos if b == 1 else test_pos)[0]
            moved[b - 1].add(pos)
            buckets[0].append(buckets[b][pos])
        for b in (1, 2):
            buckets[b] = [p for pos, p in enumerate(buckets[b]) if pos not in moved[b - 1]]

    ds = IndexedDataset(
        M=len(user_map),
        N=len(item_map),
        train=sorted(buckets[0]),
        val=sorted(buckets[1]),
        test=sorted(buckets[2]),
        user_map=user_map,
        item_map=item_map,
        seed=seed,
        threshold=threshold,
    )
    ds.validate()
    return ds


def _write_pairs(path: str, pairs: Iterable[tuple]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in pairs:
            fh.write(f"{a}\t{b}\n")


def write_dataset(ds: IndexedDataset, directory: str | os.PathLike, extra_meta: dict | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    meta = {
        "M": ds.M,
        "N": ds.N,
        "train": len(ds.train),
        "val": len(ds.val),
        "test": len(ds.test),
        "seed": ds.seed,
        "threshold": ds.threshold,
    }
    meta.update(extra_meta or {})
    with open(os.path.join(directory, "meta"), "w", encoding="utf-8", newline="\n") as fh:
        for key, value in meta.items():
            fh.write(f"{key}={'' if value is None else value}\n")
    for name in ("train", "val", "test"):
        _write_pairs(os.path.join(directory, f"{name}.txt"), getattr(ds, name))
    _write_pairs(os.path.join(directory, "user_map.txt"), ds.user_map.items())
    _write_pairs(os.path.join(directory, "item_map.txt"), ds.item_map.items())


def read_meta(directory: str | os.PathLike) -> dict[str, str]:
    path = os.path.join(directory, "meta")
    if not os.path.exists(path):
        raise DataError(f"not a dataset directory (missing meta): {directory}")
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                key, _, value = line.partition("=")
                meta[key.strip()] = value.strip()
    return meta


def _read_pairs(path: str) -> list[tuple[int, int]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(line_no, f"{os.path.basename(path)}: expected 'u<TAB>i'")
            out.append((int(parts[0]), int(parts[1])))
    return out


def _read_map(path: str) -> dict[str, int]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                raw, _, idx = line.rpartition("\t")
                out[raw] = int(idx)
    return out


def read_dataset(directory: str | os.PathLike) -> IndexedDataset:
    meta = read_meta(directory)
    try:
        M, N = int(meta["M"]), int(meta["N"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"meta in {directory} lacks valid M/N") from exc
    join = lambda name: os.path.join(directory, name)  # noqa: E731
    ds = IndexedDataset(
        M=M,
        N=N,
        train=_read_pairs(join("train.txt")),
        val=_read_pairs(join("val.txt")),
        test=_read_pairs(join("test.txt")),
        user_map=_read_map(join("user_map.txt")) if os.path.exists(join("user_map.txt")) else {},
        item_map=_read_map(join("item_map.txt")) if os.path.exists(join("item_map.txt")) else {},
        seed=int(meta["seed"]) if meta.get("seed") else None,
        threshold=int(meta["threshold"]) if meta.get("threshold") else None,
    )
    ds.validate()
    return ds


def from_pairs(M: int, N: int, train, val=(), test=()) -> IndexedDataset:
    """Build a dataset straight from index pairs (synthetic data, tests)."""
    ds = IndexedDataset(
        M=M,
        N=N,
        train=sorted((int(u), int(i)) for u, i in train),
        val=sorted((int(u), int(i)) for u, i in val),
        test=sorted((int(u), int(i)) for u, i in test),
        user_map={str(u): u for u in range(M)},
        item_map={str(i): i for i in range(N)},
    )
    ds.validate()
    return ds
