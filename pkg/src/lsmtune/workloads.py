"""Workload catalog, KL divergence, uncertainty regions and the benchmark sampler."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cost_model import InvalidWorkload, Workload

RNG_ALGORITHM = "numpy.PCG64"

# (z0, z1, q, w) percentages and category of each expected workload
_CATALOG = [
    ((25, 25, 25, 25), "uniform"),
    ((97, 1, 1, 1), "unimodal"),
    ((1, 97, 1, 1), "unimodal"),
    ((1, 1, 97, 1), "unimodal"),
    ((1, 1, 1, 97), "unimodal"),
    ((49, 49, 1, 1), "bimodal"),
    ((49, 1, 49, 1), "bimodal"),
    ((49, 1, 1, 49), "bimodal"),
    ((1, 49, 49, 1), "bimodal"),
    ((1, 49, 1, 49), "bimodal"),
    ((1, 1, 49, 49), "bimodal"),
    ((33, 33, 33, 1), "trimodal"),
    ((33, 33, 1, 33), "trimodal"),
    ((33, 1, 33, 33), "trimodal"),
    ((1, 33, 33, 33), "trimodal"),
]

CATEGORIES = ("uniform", "unimodal", "bimodal", "trimodal")


@dataclass(frozen=True)
class CatalogEntry:
    index: int
    workload: Workload
    category: str


def expected_catalog() -> list[CatalogEntry]:
    """The 15 expected workloads, indexed 0..14."""
    return [
        CatalogEntry(i, Workload(*(p / 100 for p in pct)), cat)
        for i, (pct, cat) in enumerate(_CATALOG)
    ]


def _check_normalized(p) -> np.ndarray:
    arr = np.asarray(p.as_tuple() if isinstance(p, Workload) else p, dtype=float)
    if arr.ndim != 1 or np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-9:
        raise InvalidWorkload(f"not a probability vector: {arr}")
    return arr


def kl_divergence(p, q) -> float:
    """sum_i p_i ln(p_i / q_i) with 0 ln(0/q) = 0 and +inf where q_i = 0 < p_i."""
    p = _check_normalized(p)
    q = _check_normalized(q)
    total = 0.0
    for pi, qi in zip(p.tolist(), q.tolist()):
        if pi == 0.0:
            continue
        if qi == 0.0:
            return math.inf
        total += pi * (math.log(pi) - math.log(qi))
    return max(total, 0.0)


def kl_divergence_rows(P: np.ndarray, q) -> np.ndarray:
    """KL of every row of ``P`` against a single strictly positive ``q``."""
    q = _check_normalized(q)
    P = np.asarray(P, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log(P / q), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


@dataclass(frozen=True)
class UncertaintyRegion:
    center: Workload
    rho: float

    def __post_init__(self):
        if not self.rho >= 0:
            raise ValueError("rho must be >= 0")

    def __contains__(self, candidate) -> bool:
        return in_region(candidate, self)


def in_region(candidate, region: UncertaintyRegion) -> bool:
    return kl_divergence(candidate, region.center) <= region.rho


def rho_hint(history) -> float:
    """Mean KL divergence over all ordered pairs of historical workloads."""
    history = list(history)
    if len(history) < 2:
        raise ValueError("need at least two historical workloads")
    pairs = list(itertools.permutations(history, 2))
    return sum(kl_divergence(a, b) for a, b in pairs) / len(pairs)


@dataclass
class BenchmarkSet:
    counts: np.ndarray  # (n, 4) integer query counts
    seed: int
    algorithm: str = RNG_ALGORITHM
    workloads: list = field(init=False, repr=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[1] != 4:
            raise ValueError("counts must have shape (n, 4)")
        if np.any(self.counts < 0) or np.any(self.counts.sum(axis=1) <= 0):
            raise ValueError("each count tuple must be non-negative with positive sum")
        self.workloads = [Workload.from_counts(row.tolist()) for row in self.counts]

    def __len__(self) -> int:
        return len(self.counts)

    def matrix(self) -> np.ndarray:
        return np.array([wl.as_tuple() for wl in self.workloads])

    def to_jsonl(self, path) -> None:
        with open(Path(path), "w") as fh:
            for idx, (row, wl) in enumerate(zip(self.counts, self.workloads)):
                rec = {
                    "counts": [int(c) for c in row],
                    "workload": list(wl.as_tuple()),
                    "seed": self.seed,
                    "index": idx,
                }
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "BenchmarkSet":
        counts, seeds = [], set()
        with open(Path(path)) as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    counts.append(rec["counts"])
                    seeds.add(rec.get("seed"))
        if not counts:
            raise ValueError(f"benchmark file {path} is empty")
        seed = seeds.pop() if len(seeds) == 1 else -1
        return cls(np.array(counts), seed=seed)


def sample_benchmark(n: int, seed: int, max_count: int = 10_000) -> BenchmarkSet:
    """Draw ``n`` tuples of four independent uniform counts in [1, max_count]."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if max_count < 4:
        raise ValueError("max_count must be >= 4")
    rng = np.random.Generator(np.random.PCG64(seed))
    counts = rng.integers(1, max_count, size=(n, 4), endpoint=True)
    return BenchmarkSet(counts, seed=seed)
