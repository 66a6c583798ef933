"""Nominal and KL-robust tuning of LSM-tree size ratio, filter memory and compaction policy."""
from .cost_model import (
    CostVector,
    InvalidTuning,
    InvalidWorkload,
    Policy,
    SystemParams,
    Tuning,
    Workload,
    cost_vector,
    workload_cost,
)
from .evaluation import SweepReport, delta_throughput, run_sweep, throughput_range
from .nominal import TuningResult, tune_nominal
from .robust import RobustResult, WorstCase, tune_robust, worst_case, worst_case_cost
from .search import InfeasibleBounds
from .workloads import (
    BenchmarkSet,
    UncertaintyRegion,
    expected_catalog,
    kl_divergence,
    rho_hint,
    sample_benchmark,
)

__all__ = [
    "BenchmarkSet", "CostVector", "InfeasibleBounds", "InvalidTuning", "InvalidWorkload",
    "Policy", "RobustResult", "SweepReport", "SystemParams", "Tuning", "TuningResult",
    "UncertaintyRegion", "Workload", "WorstCase", "cost_vector", "delta_throughput",
    "expected_catalog", "kl_divergence", "rho_hint", "run_sweep", "sample_benchmark",
    "throughput_range", "tune_nominal", "tune_robust", "workload_cost", "worst_case",
    "worst_case_cost",
]
