import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

import oracles
from lsmtune.cost_model import (
    CostVector, InvalidTuning, InvalidWorkload, Policy, SystemParams, Tuning, Workload,
    cost_arrays, cost_vector, deploy_size_ratio, empty_point_cost, expected_cost, fp_rates,
    level_boundary, levels, nonempty_point_cost, parse_bytes, range_cost, workload_cost,
    write_cost,
)

LN10 = math.log(10)


def system_with_ratio(ratio, *, N=1000, B=4, A=1.0, S=0.0):
    """System whose data-to-buffer ratio N*E/m_buf is ``ratio`` when m_filt = 0."""
    E = 8.0
    return SystemParams(N * E / ratio, E, B, N, A, S)


def filter_bits_for(sys, exp_term):
    # m_filt with exp(-(m_filt/N) ln2^2) == exp_term
    return -math.log(exp_term) / math.log(2) ** 2 * sys.num_entries


# -- levels ------------------------------------------------------------------------


@pytest.mark.parametrize("ratio, T, expected", [(7, 2, 3), (99, 10, 2), (100, 10, 3)])
def test_levels_examples(ratio, T, expected):
    sys = system_with_ratio(ratio)
    assert levels(sys, Tuning(T, 0.0)) == expected


def test_levels_rejects_bad_tuning():
    sys = system_with_ratio(7)
    with pytest.raises(InvalidTuning):
        levels(sys, Tuning(1.5, 0.0))
    with pytest.raises(InvalidTuning):
        levels(sys, Tuning(2.0, sys.total_memory_bits))


def test_level_boundary_is_smallest_ratio_for_L():
    sys = system_with_ratio(1000)
    for L in (1, 2, 3, 5):
        T = level_boundary(sys, 0.0, L)
        if T >= 2:
            assert levels(sys, Tuning(T, 0.0)) == L
            assert levels(sys, Tuning(T * (1 - 1e-6), 0.0)) == L + 1


# -- false positive rates ----------------------------------------------------------


def test_fp_rates_zero_filter_memory_clamps_deepest_level():
    sys = system_with_ratio(7)
    f = fp_rates(sys, Tuning(2, 0.0))
    assert f[-1] == 1.0


def test_fp_rates_vanish_with_huge_filter_memory():
    N = 10**6
    sys = SystemParams(2e12, 8.0, 4, N)
    f = fp_rates(sys, Tuning(4, 1e12))
    assert all(fi < 1e-9 for fi in f)


def test_fp_rates_worked_example():
    # T = 4, L = 2 and an exponential factor of 0.1
    sys = system_with_ratio(10)
    tun = Tuning(4, filter_bits_for(sys, 0.1))
    sys = SystemParams(sys.total_memory_bits + tun.filter_memory, sys.entry_size,
                       sys.page_capacity, sys.num_entries)
    assert levels(sys, tun) == 2
    f = fp_rates(sys, tun)
    assert f == pytest.approx([0.03969, 0.15874], abs=1e-5)
    assert empty_point_cost(sys, tun) == pytest.approx(0.19843, abs=1e-5)


# -- per-query costs ---------------------------------------------------------------


@pytest.mark.parametrize("ratio", [1, 3])
def test_empty_cost_without_filters_is_level_count(ratio):
    # at T = 2 and no filter memory the two deepest levels clamp to f = 1
    sys = system_with_ratio(ratio)
    lev = Tuning(2, 0.0, Policy.LEVELING)
    tier = Tuning(2, 0.0, Policy.TIERING)
    L = levels(sys, lev)
    assert fp_rates(sys, lev) == [1.0] * L
    assert empty_point_cost(sys, lev) == L
    assert empty_point_cost(sys, tier) == L


def test_empty_cost_without_filters_keeps_shallow_levels_below_one():
    # L = 3, T = 2: f = (4/8, 4/4, 4/2 -> 1)
    sys = system_with_ratio(7)
    tun = Tuning(2, 0.0)
    assert fp_rates(sys, tun) == [0.5, 1.0, 1.0]
    assert empty_point_cost(sys, tun) == 2.5


@pytest.mark.parametrize("ratio", [1, 7, 500])
def test_range_cost_without_selectivity_is_seeks(ratio):
    sys = system_with_ratio(ratio)
    L = levels(sys, Tuning(2, 0.0))
    assert range_cost(sys, Tuning(2, 0.0, Policy.LEVELING)) == L
    assert range_cost(sys, Tuning(2, 0.0, Policy.TIERING)) == L


def test_nonempty_single_level_costs_one():
    sys = system_with_ratio(1)
    tun = Tuning(4, 0.0)
    assert levels(sys, tun) == 1
    assert nonempty_point_cost(sys, tun) == 1.0


def test_nonempty_perfect_filters_cost_one():
    N = 10**6
    sys = SystemParams(2e12, 8.0, 4, N)
    assert nonempty_point_cost(sys, Tuning(3, 1e12)) == pytest.approx(1.0, abs=1e-12)


def test_nonempty_worked_example():
    # L = 2, T = 2, leveling with f_1 = 0.1: (1/3) * 1 + (2/3) * 1.1
    base = system_with_ratio(3)
    tun = Tuning(2, filter_bits_for(base, 0.1))
    sys = SystemParams(base.total_memory_bits + tun.filter_memory, base.entry_size,
                       base.page_capacity, base.num_entries)
    assert levels(sys, tun) == 2
    assert fp_rates(sys, tun)[0] == pytest.approx(0.1)
    assert nonempty_point_cost(sys, tun) == pytest.approx(1.0667, abs=1e-4)


def test_range_worked_example():
    # S*N/B = 10, L = 3, tiering with T = 4
    N, B = 1000, 4
    sys = system_with_ratio(40, N=N, B=B, S=10 * B / N)
    tun = Tuning(4, 0.0, Policy.TIERING)
    assert levels(sys, tun) == 3
    assert range_cost(sys, tun) == pytest.approx(19.0)


def test_write_worked_example():
    sys = system_with_ratio(10, B=4, A=0.0)
    tun = Tuning(2, 0.0, Policy.LEVELING)
    assert levels(sys, tun) == 4
    assert write_cost(sys, tun) == pytest.approx(0.5)


def test_write_policies_agree_at_T2_and_asymmetry_doubles():
    sys0 = system_with_ratio(10, A=0.0)
    sys1 = system_with_ratio(10, A=1.0)
    lev, tier = Tuning(2, 0.0, Policy.LEVELING), Tuning(2, 0.0, Policy.TIERING)
    assert write_cost(sys0, lev) == write_cost(sys0, tier)
    assert write_cost(sys1, lev) == pytest.approx(2 * write_cost(sys0, lev))


def test_expected_cost_worked_example():
    c = CostVector(0.2, 1.07, 19, 0.5)
    assert expected_cost(Workload(0.25, 0.25, 0.25, 0.25), c) == pytest.approx(5.1925)


def test_workload_cost_picks_matching_component():
    sys = system_with_ratio(100, S=0.01)
    tun = Tuning(5, 20.0, Policy.TIERING)
    c = cost_vector(sys, tun)
    assert workload_cost(Workload(1, 0, 0, 0), sys, tun) == c.Z0
    assert workload_cost(Workload(0, 1, 0, 0), sys, tun) == c.Z1
    assert workload_cost(Workload(0, 0, 0, 1), sys, tun) == c.W


def test_workload_rejects_unnormalized():
    with pytest.raises(InvalidWorkload):
        Workload(0.5, 0.5, 0.5, 0.0)
    with pytest.raises(InvalidWorkload):
        Workload(1.1, -0.1, 0.0, 0.0)


def test_deploy_rounds_up():
    assert deploy_size_ratio(2.0) == 2
    assert deploy_size_ratio(5.0000000001) == 5
    assert deploy_size_ratio(5.3) == 6
    assert Tuning(7.2, 10.0, Policy.TIERING).deployed() == Tuning(8.0, 10.0, Policy.TIERING)


def test_system_from_dict_units():
    sys = SystemParams.from_dict({"total_memory_bytes": "10GB", "entry_size_bytes": "1KB",
                                  "page_size_bytes": 4096, "num_entries": 10})
    assert sys.total_memory_bits == 10 * 2**30 * 8
    assert sys.entry_size == 8192
    assert sys.page_capacity == 4
    assert SystemParams.from_dict(sys.to_dict()) == sys
    assert parse_bytes("1.5 MB") == 1.5 * 2**20
    with pytest.raises(ValueError):
        parse_bytes("12 parsecs")


def test_system_from_dict_rejects_missing_and_tiny_pages():
    with pytest.raises(ValueError):
        SystemParams.from_dict({"total_memory_bytes": 10})
    with pytest.raises(ValueError):
        SystemParams.from_dict({"total_memory_bytes": 100, "entry_size_bytes": 1024,
                                "page_size_bytes": 512, "num_entries": 10})


# -- properties ----------------------------------------------------------------------

systems = st.builds(
    SystemParams,
    total_memory_bits=st.floats(1e4, 1e9),
    entry_size=st.sampled_from([64.0, 1024.0, 8192.0]),
    page_capacity=st.integers(1, 64),
    num_entries=st.integers(1, 10**8),
    rw_asymmetry=st.floats(0, 5),
    range_selectivity=st.floats(0, 1),
)
policies = st.sampled_from(list(Policy))


@st.composite
def system_and_tuning(draw):
    sys = draw(systems)
    T = draw(st.floats(2.0, 200.0))
    frac = draw(st.floats(0.0, 0.999))
    return sys, Tuning(T, frac * sys.total_memory_bits, draw(policies))


@given(system_and_tuning())
def test_matches_loop_oracle(case):
    sys, tun = case
    got = cost_vector(sys, tun).as_array()
    want = oracles.cost_vector(sys.total_memory_bits, sys.entry_size, sys.page_capacity,
                               sys.num_entries, sys.rw_asymmetry, sys.range_selectivity,
                               tun.size_ratio, tun.filter_memory,
                               tun.policy is Policy.TIERING)
    assert got == pytest.approx(want, rel=1e-9, abs=1e-12)


@given(system_and_tuning())
def test_costs_finite_nonnegative_and_fp_in_unit_interval(case):
    sys, tun = case
    c = cost_vector(sys, tun).as_array()
    assert np.all(np.isfinite(c)) and np.all(c >= 0)
    assert c[1] >= 1.0 - 1e-12
    assert all(0.0 <= f <= 1.0 for f in fp_rates(sys, tun))


@given(system_and_tuning())
def test_grid_evaluation_matches_scalar(case):
    sys, tun = case
    arr = cost_arrays(sys, np.array([tun.size_ratio]), np.array([tun.filter_memory]), tun.policy)
    assert arr[0] == pytest.approx(cost_vector(sys, tun).as_array(), rel=1e-9, abs=1e-12)


@given(system_and_tuning(), st.floats(0.0, 1.0))
def test_more_filter_memory_never_raises_fp_rates(case, grow):
    sys, tun = case
    more = Tuning(tun.size_ratio, tun.filter_memory + grow * (sys.total_memory_bits - tun.filter_memory) * 0.5,
                  tun.policy)
    assume(levels(sys, more) == levels(sys, tun))
    f0, f1 = fp_rates(sys, tun), fp_rates(sys, more)
    assert all(b <= a for a, b in zip(f0, f1))
    assert empty_point_cost(sys, more) <= empty_point_cost(sys, tun)


@given(system_and_tuning())
def test_policies_coincide_at_T2(case):
    sys, tun = case
    lev = cost_vector(sys, Tuning(2.0, tun.filter_memory, Policy.LEVELING)).as_array()
    tier = cost_vector(sys, Tuning(2.0, tun.filter_memory, Policy.TIERING)).as_array()
    assert tier == pytest.approx(lev, rel=1e-12)


@given(system_and_tuning(), st.floats(0.0, 1.0), st.lists(st.floats(0.01, 1.0), min_size=8, max_size=8))
def test_workload_cost_is_linear(case, alpha, raw):
    sys, tun = case
    w1 = Workload.normalized(raw[:4])
    w2 = Workload.normalized(raw[4:])
    mix = Workload.normalized(alpha * w1.as_array() + (1 - alpha) * w2.as_array())
    lhs = workload_cost(mix, sys, tun)
    rhs = alpha * workload_cost(w1, sys, tun) + (1 - alpha) * workload_cost(w2, sys, tun)
    assert lhs == pytest.approx(rhs, rel=1e-9)


@given(system_and_tuning(), st.floats(1.0, 3.0), st.floats(0.0, 0.9))
def test_levels_non_increasing_in_T_and_buffer(case, scale, shrink):
    sys, tun = case
    L = levels(sys, tun)
    assert levels(sys, Tuning(tun.size_ratio * scale, tun.filter_memory, tun.policy)) <= L
    # less filter memory means a larger buffer
    assert levels(sys, Tuning(tun.size_ratio, tun.filter_memory * shrink, tun.policy)) <= L
