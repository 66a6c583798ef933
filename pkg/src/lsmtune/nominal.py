"""Nominal tuning: minimize expected cost for a single known workload."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cost_model import SystemParams, Tuning, Workload, workload_cost
from .search import search


@dataclass
class TuningResult:
    tuning: Tuning
    objective: float
    diagnostics: dict = field(default_factory=dict)

    def deployed_cost(self, wkl: Workload, sys: SystemParams) -> float:
        return workload_cost(wkl, sys, self.tuning.deployed())


def tune_nominal(sys: SystemParams, wkl: Workload) -> TuningResult:
    w = wkl.as_array()
    res = search(sys, lambda c: float(w[0] * c[0] + w[1] * c[1] + w[2] * c[2] + w[3] * c[3]), lambda C: C @ w)
    return TuningResult(res.tuning, res.objective, res.diagnostics)
