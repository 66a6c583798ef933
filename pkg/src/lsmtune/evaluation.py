"""Throughput metrics and the nominal-vs-robust comparison sweep."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cost_model import SystemParams, Tuning, Workload, cost_vector, workload_cost
from .nominal import TuningResult, tune_nominal
from .robust import RobustResult, tune_robust
from .workloads import CATEGORIES, BenchmarkSet, CatalogEntry, kl_divergence_rows

DEFAULT_RHO_GRID = tuple(0.25 * k for k in range(16))
RECORD_FIELDS = ("expected_idx", "rho", "z0", "z1", "q", "w",
                 "cost_nominal", "cost_robust", "delta", "kl")
SUMMARY_FIELDS = ("expected_idx", "category", "rho",
                  "policy_nominal", "T_nominal", "mfilt_bits_nominal",
                  "policy_robust", "T_robust", "mfilt_bits_robust", "objective_robust",
                  "mean_delta", "theta_nominal", "theta_robust")


def _check_cost(c: float) -> float:
    if not (math.isfinite(c) and c > 0):
        raise ValueError(f"cost must be positive and finite, got {c}")
    return c


def delta_from_costs(cost1, cost2):
    """Relative throughput gain of tuning 2 over tuning 1 given their costs."""
    c1 = np.asarray(cost1, dtype=float)
    c2 = np.asarray(cost2, dtype=float)
    if np.any(~np.isfinite(c1) | (c1 <= 0)) or np.any(~np.isfinite(c2) | (c2 <= 0)):
        raise ValueError("costs must be positive and finite")
    out = (1.0 / c2 - 1.0 / c1) * c1
    return float(out) if out.ndim == 0 else out


def delta_throughput(wkl: Workload, sys: SystemParams, t1: Tuning, t2: Tuning) -> float:
    """Positive iff ``t2`` outperforms ``t1`` on ``wkl``."""
    c1 = _check_cost(workload_cost(wkl, sys, t1))
    c2 = _check_cost(workload_cost(wkl, sys, t2))
    return delta_from_costs(c1, c2)


def range_from_costs(costs) -> float:
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        raise ValueError("benchmark is empty")
    if np.any(~np.isfinite(costs) | (costs <= 0)):
        raise ValueError("costs must be positive and finite")
    tput = 1.0 / costs
    return float(tput.max() - tput.min())


def throughput_range(bench: BenchmarkSet, sys: SystemParams, tun: Tuning) -> float:
    """Spread between best and worst throughput of ``tun`` over the benchmark."""
    if len(bench) == 0:
        raise ValueError("benchmark is empty")
    return range_from_costs(bench.matrix() @ cost_vector(sys, tun).as_array())


@dataclass(frozen=True)
class ComparisonRecord:
    expected_idx: int
    rho: float
    workload: Workload
    cost_nominal: float
    cost_robust: float
    delta: float
    kl: float


@dataclass
class SweepCell:
    """One (expected workload, rho) cell evaluated over the whole benchmark."""

    expected_idx: int
    category: str
    rho: float
    nominal: TuningResult
    robust: RobustResult
    cost_nominal: np.ndarray
    cost_robust: np.ndarray
    delta: np.ndarray
    kl: np.ndarray

    @property
    def mean_delta(self) -> float:
        return float(np.mean(self.delta))

    @property
    def theta_nominal(self) -> float:
        return range_from_costs(self.cost_nominal)

    @property
    def theta_robust(self) -> float:
        return range_from_costs(self.cost_robust)


@dataclass
class SweepReport:
    cells: list
    bench: BenchmarkSet = field(repr=False)

    def __len__(self) -> int:
        return sum(len(c.delta) for c in self.cells)

    def cell(self, expected_idx: int, rho: float) -> SweepCell:
        for c in self.cells:
            if c.expected_idx == expected_idx and c.rho == rho:
                return c
        raise KeyError((expected_idx, rho))

    def rhos(self) -> list:
        return sorted({c.rho for c in self.cells})

    def records(self):
        W = self.bench.workloads
        for c in self.cells:
            for k, wl in enumerate(W):
                yield ComparisonRecord(c.expected_idx, c.rho, wl, float(c.cost_nominal[k]),
                                       float(c.cost_robust[k]), float(c.delta[k]), float(c.kl[k]))

    def category_means(self, rho: float) -> dict:
        """Unweighted mean over member workloads of each workload's mean delta."""
        out = {}
        for cat in CATEGORIES:
            vals = [c.mean_delta for c in self.cells if c.category == cat and c.rho == rho]
            if vals:
                out[cat] = float(np.mean(vals))
        return out

    def mean_theta_robust(self, rho: float) -> float:
        return float(np.mean([c.theta_robust for c in self.cells if c.rho == rho]))

    def write_records_csv(self, path) -> None:
        M = self.bench.matrix()
        with open(Path(path), "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(RECORD_FIELDS)
            for c in self.cells:
                for k in range(len(M)):
                    out.writerow([c.expected_idx, repr(c.rho), *map(repr, M[k].tolist()),
                                  repr(float(c.cost_nominal[k])), repr(float(c.cost_robust[k])),
                                  repr(float(c.delta[k])), repr(float(c.kl[k]))])

    def summary_rows(self) -> list:
        rows = []
        for c in self.cells:
            tn, tr = c.nominal.tuning, c.robust.tuning
            rows.append([c.expected_idx, c.category, repr(c.rho),
                         tn.policy.value, repr(tn.size_ratio), repr(tn.filter_memory),
                         tr.policy.value, repr(tr.size_ratio), repr(tr.filter_memory),
                         repr(c.robust.objective), repr(c.mean_delta),
                         repr(c.theta_nominal), repr(c.theta_robust)])
        return rows

    def write_summary_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(SUMMARY_FIELDS)
            out.writerows(self.summary_rows())


def _robust_cell(args):
    sys, wkl, rho = args
    return tune_robust(sys, wkl, rho)


def run_sweep(sys: SystemParams, catalog: list, rho_grid, bench: BenchmarkSet,
              jobs: int = 1) -> SweepReport:
    """Tune nominal once per expected workload and robust per rho; compare over ``bench``.

    Cells are ordered by (catalog order, rho order) whatever ``jobs`` is.
    """
    catalog = list(catalog)
    rho_grid = [float(r) for r in rho_grid]
    if not catalog or not rho_grid:
        raise ValueError("catalog and rho grid must be non-empty")
    if any(r < 0 for r in rho_grid):
        raise ValueError("rho must be >= 0")
    if len(bench) == 0:
        raise ValueError("benchmark is empty")
    M = bench.matrix()
    tasks = [(sys, e.workload, rho) for e in catalog for rho in rho_grid]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            nominals = list(pool.map(tune_nominal, [sys] * len(catalog),
                                     [e.workload for e in catalog]))
            robusts = list(pool.map(_robust_cell, tasks))
    else:
        nominals = [tune_nominal(sys, e.workload) for e in catalog]
        robusts = [_robust_cell(t) for t in tasks]

    cells = []
    for i, entry in enumerate(catalog):
        entry: CatalogEntry
        nom = nominals[i]
        cost_n = M @ cost_vector(sys, nom.tuning).as_array()
        kl = kl_divergence_rows(M, entry.workload)
        for j, rho in enumerate(rho_grid):
            rob = robusts[i * len(rho_grid) + j]
            cost_r = M @ cost_vector(sys, rob.tuning).as_array()
            cells.append(SweepCell(entry.index, entry.category, rho, nom, rob,
                                   cost_n, cost_r, delta_from_costs(cost_n, cost_r), kl))
    return SweepReport(cells, bench)
