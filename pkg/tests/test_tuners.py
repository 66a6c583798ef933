import functools
import math

import numpy as np
import pytest

import oracles
from lsmtune.cost_model import Policy, SystemParams, Workload, cost_vector, workload_cost
from lsmtune.nominal import tune_nominal
from lsmtune.robust import tune_robust, worst_case_cost
from lsmtune.search import InfeasibleBounds, search, search_bounds
from lsmtune.workloads import expected_catalog, kl_divergence

W4 = Workload(0.01, 0.01, 0.01, 0.97)
W5 = Workload(0.49, 0.49, 0.01, 0.01)
W11 = Workload(0.33, 0.33, 0.33, 0.01)
UNIFORM = Workload(0.25, 0.25, 0.25, 0.25)


@functools.lru_cache(maxsize=None)
def oracle_grid(sys: SystemParams):
    """Loop-evaluated costs on integer T up to 300, a geometric tail and 65 filter steps.

    Returns a list of (policy, T, m_filt, [Z0, Z1, Q, W]).
    """
    t_hi = search_bounds(sys).size_ratio[1]
    Ts = sorted(set(range(2, min(300, int(t_hi)) + 1)) | set(np.geomspace(300, t_hi, 40).tolist()))
    mf_hi = sys.max_filter_bits
    mfs = [mf_hi * k / 64 for k in range(65)]
    out = []
    for policy in Policy:
        tiering = policy is Policy.TIERING
        for T in Ts:
            for mf in mfs:
                c = oracles.cost_vector(sys.total_memory_bits, sys.entry_size, sys.page_capacity,
                                        sys.num_entries, sys.rw_asymmetry, sys.range_selectivity,
                                        T, mf, tiering)
                out.append((policy, T, mf, c))
    return out


def oracle_argmin(sys, wkl):
    w = wkl.as_tuple()
    return min(oracle_grid(sys), key=lambda r: sum(wi * ci for wi, ci in zip(w, r[3])))


def oracle_min(sys, wkl):
    w = wkl.as_tuple()
    return min(sum(wi * ci for wi, ci in zip(w, r[3])) for r in oracle_grid(sys))


# -- nominal --------------------------------------------------------------------------


def test_write_heavy_prefers_tiering(sys_desk):
    assert oracle_argmin(sys_desk, W4)[0] is Policy.TIERING
    assert tune_nominal(sys_desk, W4).tuning.policy is Policy.TIERING


def test_read_heavy_prefers_leveling_with_large_filters(sys_desk):
    policy, _, mf, _ = oracle_argmin(sys_desk, W5)
    assert policy is Policy.LEVELING and mf / sys_desk.num_entries >= 5.0
    tun = tune_nominal(sys_desk, W5).tuning
    assert tun.policy is Policy.LEVELING
    assert tun.filter_memory / sys_desk.num_entries >= 5.0


def test_nominal_is_deterministic(sys_desk):
    a, b = tune_nominal(sys_desk, W11), tune_nominal(sys_desk, W11)
    assert a.tuning == b.tuning and a.objective == b.objective


@pytest.mark.parametrize("entry", expected_catalog(), ids=lambda e: f"w{e.index}")
def test_nominal_within_tenth_percent_of_grid(sys_10gb, entry):
    res = tune_nominal(sys_10gb, entry.workload)
    assert res.objective <= oracle_min(sys_10gb, entry.workload) * 1.001
    assert res.objective == pytest.approx(workload_cost(entry.workload, sys_10gb, res.tuning), rel=1e-9)
    assert res.objective <= res.diagnostics["grid_best"] * (1 + 1e-6)


@pytest.mark.parametrize("idx", [0, 4, 7, 12])
def test_nominal_within_tenth_percent_of_grid_multilevel(sys_desk, idx):
    wkl = expected_catalog()[idx].workload
    res = tune_nominal(sys_desk, wkl)
    assert res.objective <= oracle_min(sys_desk, wkl) * 1.001


def test_diagnostics_record_bounds(sys_desk):
    diag = tune_nominal(sys_desk, UNIFORM).diagnostics
    b = search_bounds(sys_desk)
    assert diag["bounds"]["size_ratio"] == list(b.size_ratio)
    assert diag["bounds"]["filter_memory_bits"] == list(b.filter_memory)
    assert diag["restarts"] == 2 * 16
    assert isinstance(diag["converged"], bool) and diag["iterations"] > 0


@pytest.mark.parametrize("k", [0.25, 8.0, 3.0])
def test_argmin_invariant_to_common_cost_scaling(sys_desk, k):
    w = W11.as_array()
    base = search(sys_desk, lambda c: float(np.dot(w, c)), lambda C: C @ w)
    scaled = search(sys_desk, lambda c: k * float(np.dot(w, c)), lambda C: k * (C @ w))
    assert scaled.tuning.policy is base.tuning.policy
    assert scaled.tuning.size_ratio == pytest.approx(base.tuning.size_ratio, rel=1e-6)
    assert scaled.tuning.filter_memory == pytest.approx(base.tuning.filter_memory, rel=1e-6, abs=1.0)
    assert scaled.objective == pytest.approx(k * base.objective, rel=1e-9)


def test_infeasible_memory_rejected():
    sys = SystemParams(total_memory_bits=4 * 8192, entry_size=8192, page_capacity=4, num_entries=1000)
    with pytest.raises(InfeasibleBounds):
        tune_nominal(sys, UNIFORM)
    with pytest.raises(InfeasibleBounds):
        tune_robust(sys, UNIFORM, 0.5)


# -- robust ---------------------------------------------------------------------------


def test_zero_radius_matches_nominal(sys_desk):
    for wkl in (UNIFORM, W4, W11):
        nom = tune_nominal(sys_desk, wkl)
        rob = tune_robust(sys_desk, wkl, 0.0)
        assert workload_cost(wkl, sys_desk, rob.tuning) <= nom.objective * 1.01


def test_size_ratio_shrinks_with_radius(sys_desk):
    ratios = [tune_robust(sys_desk, W11, rho).tuning.size_ratio for rho in (0.5, 1.0, 2.0)]
    assert ratios[0] >= ratios[1] >= ratios[2]


def test_pessimism_costs_on_the_center(sys_desk):
    nom = tune_nominal(sys_desk, UNIFORM)
    rob = tune_robust(sys_desk, UNIFORM, 2.0)
    assert workload_cost(UNIFORM, sys_desk, rob.tuning) >= nom.objective


def test_robust_is_deterministic(sys_desk):
    a, b = tune_robust(sys_desk, W5, 1.0), tune_robust(sys_desk, W5, 1.0)
    assert a.tuning == b.tuning and a.objective == b.objective


@pytest.mark.parametrize("idx, rho", [(0, 0.5), (3, 1.0), (9, 2.0), (13, 0.25)])
def test_robust_result_invariants(sys_desk, idx, rho):
    wkl = expected_catalog()[idx].workload
    res = tune_robust(sys_desk, wkl, rho)
    c = cost_vector(sys_desk, res.tuning)
    assert res.rho == rho
    assert res.objective >= workload_cost(wkl, sys_desk, res.tuning) - 1e-6
    assert kl_divergence(res.worst_workload, wkl) <= rho + 1e-4
    assert float(np.dot(res.worst_workload.as_array(), c.as_array())) == pytest.approx(res.objective, rel=1e-4)
    assert res.objective == pytest.approx(worst_case_cost(c, wkl, rho)[0], rel=1e-12)
    assert res.objective <= res.diagnostics["grid_best"] * (1 + 1e-6)
    if res.dual is not None:
        assert res.dual.lam >= 1e-6


def test_robust_dominates_sampled_region(sys_desk):
    rho = 1.0
    res = tune_robust(sys_desk, W11, rho)
    c = cost_vector(sys_desk, res.tuning).as_array()
    rng = np.random.default_rng(5)
    hits = 0
    for v in rng.dirichlet([0.5] * 4, size=4000):
        v = Workload.normalized(v)
        if kl_divergence(v, W11) <= rho:
            hits += 1
            assert float(np.dot(v.as_array(), c)) <= res.objective + 1e-6
    assert hits > 50
