"""Domain types, CSV ingestion, seeded randomness and budget composition."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class IngestionError(ValueError):
    """Raised when a CSV file cannot be turned into a Dataset."""


@dataclass(frozen=True)
class Dataset:
    """P x d matrix of feature vectors plus one opaque id per row."""

    points: np.ndarray
    ids: tuple = ()

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise ValueError("points must be a 2-d array")
        if pts.shape[0] < 2 or pts.shape[1] < 1:
            raise ValueError(f"need P >= 2 and d >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite values")
        pts.flags.writeable = False
        ids = tuple(self.ids) if len(self.ids) else tuple(str(i) for i in range(pts.shape[0]))
        if len(ids) != pts.shape[0]:
            raise ValueError("ids and points disagree on P")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "ids", ids)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def drop(self, index: int) -> "Dataset":
        keep = np.ones(self.n_points, dtype=bool)
        keep[index] = False
        return self.subset(keep)

    def subset(self, mask) -> "Dataset":
        idx = np.flatnonzero(np.asarray(mask)) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return Dataset(self.points[idx], tuple(self.ids[i] for i in idx))


@dataclass(frozen=True)
class ClusteringResult:
    """Centroids (K x d) and per-point labels in [K]."""

    centroids: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        c = np.array(self.centroids, dtype=float, copy=True)
        if c.ndim != 2:
            raise ValueError("centroids must be K x d")
        lab = np.array(self.labels, dtype=np.int64, copy=True)
        if lab.ndim != 1:
            raise ValueError("labels must be a vector")
        if lab.size and (lab.min() < 0 or lab.max() >= c.shape[0]):
            raise ValueError("label outside [K]")
        c.flags.writeable = False
        lab.flags.writeable = False
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "labels", lab)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def stacked(self) -> np.ndarray:
        """Centroids as one Kd vector [c_0; c_1; ...]."""
        return self.centroids.reshape(-1)

    def replace(self, centroids=None, labels=None) -> "ClusteringResult":
        return ClusteringResult(
            self.centroids if centroids is None else centroids,
            self.labels if labels is None else labels,
        )

    def to_dict(self) -> dict:
        return {"centroids": self.centroids.tolist(), "labels": self.labels.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ClusteringResult":
        return cls(np.asarray(d["centroids"], dtype=float), np.asarray(d["labels"], dtype=np.int64))


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")

    def __add__(self, other: "PrivacyBudget") -> "PrivacyBudget":
        return compose([self, other])

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "delta": self.delta}


def compose(budgets: Iterable[PrivacyBudget]) -> PrivacyBudget:
    """Sequential composition: epsilons and deltas add, delta clamped at 1."""
    eps = 0.0
    delta = 0.0
    for b in budgets:
        eps += b.epsilon
        delta += b.delta
    return PrivacyBudget(eps, min(1.0, delta))


class BudgetLedger:
    """Named record of every budget charged during a run."""

    def __init__(self):
        self.entries: list[tuple[str, PrivacyBudget]] = []

    def charge(self, name: str, budget: PrivacyBudget) -> None:
        self.entries.append((name, budget))

    def extend(self, other: "BudgetLedger", prefix: str = "") -> None:
        for name, b in other.entries:
            self.charge(prefix + name, b)

    @property
    def total(self) -> PrivacyBudget:
        return compose(b for _, b in self.entries)

    def to_dict(self) -> dict:
        return {
            "entries": [{"name": n, **b.to_dict()} for n, b in self.entries],
            "total": self.total.to_dict(),
        }


def _stream_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")


class Rng:
    """Seeded random stream that splits into independent named children.

    ``split(name)`` appends a 32-bit key derived from SHA-256 of ``name`` to the
    SeedSequence spawn key, so the child stream depends only on the root seed
    and the path of names, never on how many draws a sibling has made.
    """

    def __init__(self, seed: int, path: Sequence[int] = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def split(self, name: str) -> "Rng":
        return Rng(self.seed, self.path + (_stream_key(name),))

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, Rng):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


# --- ingestion / serialization ---------------------------------------------


def load_dataset(path, delimiter: str = ",", header: bool = True) -> Dataset:
    """Read a CSV whose first column is an id and the rest are features."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    ids, rows = [], []
    width = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                width = len(row)
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            if len(row) != width:
                raise IngestionError(
                    f"{path}: row {lineno} has {len(row)} columns, expected {width}"
                )
            if width < 2:
                raise IngestionError(f"{path}: need an id column and at least one feature")
            vals = []
            for col, cell in enumerate(row[1:], start=2):
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"{path}: row {lineno}, column {col}: non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise IngestionError(f"{path}: row {lineno}, column {col}: non-finite value")
                vals.append(v)
            ids.append(row[0])
            rows.append(vals)
    if len(rows) < 2:
        raise IngestionError(f"{path}: need at least 2 data rows, found {len(rows)}")
    return Dataset(np.array(rows, dtype=float), tuple(ids))


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_dataset(path, data: Dataset, prefix: str = "t") -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"{prefix}{j}" for j in range(data.dim)])
        for pid, row in zip(data.ids, data.points):
            w.writerow([pid] + [fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if not math.isfinite(v):
            return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
        return v
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


def dump_json(path, obj) -> None:
    """Write JSON; floats use Python's round-trip repr, so no precision is lost."""
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def to_json_str(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True)
