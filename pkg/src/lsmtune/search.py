"""Multi-start box search over (size ratio, filter memory) with grid verification.

Both tuners score a tuning through its cost vector; this module owns the
search contract so they share bounds, starts, grid and tie-breaking.

The level count L jumps as T crosses (N*E/m_buf + 1)**(1/L), and within a
fixed-L segment costs usually rise with T, so optima tend to sit on those
boundary curves. Besides the rectangular grid we therefore evaluate the
boundary point of every grid filter value and polish along the curves.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .cost_model import Policy, SystemParams, Tuning, cost_arrays, raw_costs

START_SIZE_RATIOS = (2.0, 5.0, 10.0, 20.0, 50.0)
START_FILTER_FRACTIONS = (0.1, 0.5, 0.9)
GRID_FILTER_STEPS = 64
GRID_INTEGER_T_CAP = 256
GRID_TAIL_POINTS = 32
FD_STEP = 1e-4
LOCAL_MAX_ITER = 60
MIN_STEP = 1e-6
POLISH_TOP = 3
POLISH_MAX_EVALS = 300
# policies whose objectives differ by less than this count as tied
POLICY_TIE = 1e-9


class InfeasibleBounds(ValueError):
    pass


@dataclass(frozen=True)
class Bounds:
    size_ratio: tuple[float, float]
    filter_memory: tuple[float, float]

    def to_dict(self) -> dict:
        return {"size_ratio": list(self.size_ratio), "filter_memory_bits": list(self.filter_memory)}


def search_bounds(sys: SystemParams) -> Bounds:
    """T in [2, max(2, N*E/m_buf)] at the smallest admissible buffer (one page)."""
    if sys.total_memory_bits <= sys.min_buffer_bits:
        raise InfeasibleBounds(
            f"total memory {sys.total_memory_bits:g} bits cannot hold one page of entries"
        )
    t_max = max(2.0, sys.data_bits / sys.min_buffer_bits)
    return Bounds((2.0, t_max), (0.0, sys.max_filter_bits))


@dataclass
class SearchResult:
    tuning: Tuning
    objective: float
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Grid:
    T: np.ndarray  # (nT,)
    filter_memory: np.ndarray  # (nM,)
    costs: dict  # Policy -> (nT, nM, 4)
    boundary_T: np.ndarray  # (nM, Lmax), nan outside the box
    boundary_costs: dict  # Policy -> (nM, Lmax, 4)


def grid_size_ratios(t_max: float) -> np.ndarray:
    ints = np.arange(2.0, math.floor(min(t_max, GRID_INTEGER_T_CAP)) + 1.0)
    if t_max > GRID_INTEGER_T_CAP:
        tail = np.geomspace(GRID_INTEGER_T_CAP, t_max, GRID_TAIL_POINTS + 1)[1:]
        ints = np.concatenate([ints, tail])
    elif t_max > ints[-1]:
        ints = np.append(ints, t_max)
    return ints


def boundary_size_ratios(sys: SystemParams, filter_memory: np.ndarray, t_max: float) -> np.ndarray:
    """T_L(m_filt) for L = 1..Lmax, nan where it falls outside [2, t_max]."""
    ratio = sys.data_bits / (sys.total_memory_bits - np.asarray(filter_memory, float))
    l_max = max(1, math.ceil(math.log(float(ratio.max()) + 1.0) / math.log(2.0)))
    TB = (ratio[:, None] + 1.0) ** (1.0 / np.arange(1, l_max + 1))
    return np.where((TB >= 2.0) & (TB <= t_max), TB, np.nan)


@functools.lru_cache(maxsize=16)
def dense_grid(sys: SystemParams) -> Grid:
    b = search_bounds(sys)
    Ts = grid_size_ratios(b.size_ratio[1])
    mfs = np.linspace(b.filter_memory[0], b.filter_memory[1], GRID_FILTER_STEPS)
    TT, MM = np.meshgrid(Ts, mfs, indexing="ij")
    TB = boundary_size_ratios(sys, mfs, b.size_ratio[1])
    MB = np.broadcast_to(mfs[:, None], TB.shape)
    TB_safe = np.where(np.isnan(TB), 2.0, TB)
    costs, bcosts = {}, {}
    for pol in Policy:
        costs[pol] = cost_arrays(sys, TT, MM, pol)
        bcosts[pol] = cost_arrays(sys, TB_safe, MB, pol)
        costs[pol].setflags(write=False)
        bcosts[pol].setflags(write=False)
    TB.setflags(write=False)
    return Grid(Ts, mfs, costs, TB, bcosts)


def projected_descent(f, jac, x0: np.ndarray, max_iter: int = LOCAL_MAX_ITER):
    """Projected gradient descent on the unit box with halving step search.

    Returns (x, f(x), iterations, converged). The direction is the negative
    gradient scaled to unit max-norm so the step length is in box units.
    """
    x = np.clip(np.asarray(x0, dtype=float), 0.0, 1.0)
    fx = f(x)
    step = 0.25
    for it in range(1, max_iter + 1):
        g = jac(x)
        gmax = float(np.max(np.abs(g)))
        if gmax == 0.0 or not np.isfinite(gmax):
            return x, fx, it, True
        d = -g / gmax
        moved = False
        while step >= MIN_STEP:
            cand = np.clip(x + step * d, 0.0, 1.0)
            if np.array_equal(cand, x):
                break
            fc = f(cand)
            if fc < fx:
                x, fx, moved = cand, fc, True
                step = min(1.0, 2.0 * step)
                break
            step *= 0.5
        if not moved:
            return x, fx, it, True
    return x, fx, max_iter, False


def _simplex(x: np.ndarray, size: float = 0.02) -> np.ndarray:
    pts = [x.copy()]
    for k in range(2):
        y = x.copy()
        y[k] = y[k] + size if y[k] + size <= 1.0 else y[k] - size
        pts.append(y)
    return np.clip(np.array(pts), 0.0, 1.0)


def _sort_key(res: SearchResult):
    t = res.tuning
    return (res.objective, t.policy.value, t.size_ratio, t.filter_memory)


def search(
    sys: SystemParams,
    score: Callable[[list], float],
    score_grid: Callable[[np.ndarray], np.ndarray],
) -> SearchResult:
    """Minimize ``score(cost_vector)`` over tunings.

    ``score`` maps one cost vector [Z0, Z1, Q, W] to a scalar; ``score_grid``
    maps an array (..., 4) of cost vectors to scalars and must agree with it.
    """
    bounds = search_bounds(sys)
    grid = dense_grid(sys)
    t_lo, t_hi = bounds.size_ratio
    lo_t, hi_t = math.log(t_lo), math.log(t_hi)
    span_t = hi_t - lo_t
    mf_hi = bounds.filter_memory[1]
    mfs = grid.filter_memory
    mf_step = float(mfs[1] - mfs[0]) if len(mfs) > 1 else mf_hi

    def decode_T(x0):
        if span_t <= 0:
            return t_lo
        return min(t_hi, max(t_lo, math.exp(lo_t + min(1.0, max(0.0, float(x0))) * span_t)))

    def decode_mf(x1):
        return min(1.0, max(0.0, float(x1))) * mf_hi

    def encode(T, mf):
        x0 = (math.log(T) - lo_t) / span_t if span_t > 0 else 0.0
        return np.clip(np.array([x0, mf / mf_hi if mf_hi > 0 else 0.0]), 0.0, 1.0)

    def on_boundary(mf, L):
        return (sys.data_bits / (sys.total_memory_bits - mf) + 1.0) ** (1.0 / L)

    per_policy = []
    diagnostics = {"bounds": bounds.to_dict(), "iterations": 0, "restarts": 0,
                   "evaluations": 0, "policies": {}}
    for policy in Policy:
        evals = 0

        def objective(T, mf):
            nonlocal evals
            evals += 1
            return score(raw_costs(sys, T, mf, policy))

        def f(x):
            return objective(decode_T(x[0]), decode_mf(x[1]))

        def jac(x):
            # central differences, one-sided where the probe leaves the box
            g = np.zeros(2)
            for k in range(2):
                up, dn = x.copy(), x.copy()
                up[k] = min(1.0, x[k] + FD_STEP)
                dn[k] = max(0.0, x[k] - FD_STEP)
                if up[k] == dn[k]:
                    continue
                g[k] = (f(up) - f(dn)) / (up[k] - dn[k])
            return g

        def result(T, mf):
            return SearchResult(Tuning(T, mf, policy), objective(T, mf))

        vals = score_grid(grid.costs[policy])
        gi, gj = np.unravel_index(int(np.argmin(vals)), vals.shape)
        grid_best = result(float(grid.T[gi]), float(mfs[gj]))

        bvals = np.where(np.isnan(grid.boundary_T), np.inf,
                         score_grid(grid.boundary_costs[policy]))
        n_l = bvals.shape[1]
        boundary = [divmod(int(k), n_l) for k in np.argsort(bvals, axis=None, kind="stable")
                    [:POLISH_TOP] if np.isfinite(bvals.flat[k])]

        starts = [encode(min(T, t_hi), frac * sys.total_memory_bits)
                  for T in START_SIZE_RATIOS for frac in START_FILTER_FRACTIONS]
        starts.append(encode(grid_best.tuning.size_ratio, grid_best.tuning.filter_memory))
        candidates = [grid_best]
        iterations = 0
        converged = False
        best_local = None
        for x0 in starts:
            x, _, nit, ok = projected_descent(f, jac, x0)
            iterations += nit
            cand = result(decode_T(x[0]), decode_mf(x[1]))
            candidates.append(cand)
            if best_local is None or _sort_key(cand) < _sort_key(best_local):
                best_local, converged = cand, ok

        # derivative-free polish; kinks in the worst-case objective stall
        # gradient steps
        for cand in sorted(candidates, key=_sort_key)[:POLISH_TOP]:
            x0 = encode(cand.tuning.size_ratio, cand.tuning.filter_memory)
            res = optimize.minimize(
                f, x0, method="Nelder-Mead", bounds=[(0.0, 1.0), (0.0, 1.0)],
                options={"maxfev": POLISH_MAX_EVALS, "xatol": 1e-8, "fatol": 1e-12,
                         "initial_simplex": _simplex(x0)},
            )
            candidates.append(result(decode_T(res.x[0]), decode_mf(res.x[1])))

        # one-dimensional polish along the level-boundary curves
        for j, li in boundary:
            L = li + 1

            # T_L grows with m_filt; keep the interval where T_L lies in [t_lo, t_hi]
            m = sys.total_memory_bits
            lo = max(0.0, float(mfs[j]) - mf_step, m - sys.data_bits / (t_lo**L - 1.0))
            hi = min(mf_hi, float(mfs[j]) + mf_step)
            if t_hi**L - 1.0 > 0:
                hi = min(hi, m - sys.data_bits / (t_hi**L - 1.0))
            candidates.append(result(on_boundary(float(mfs[j]), L), float(mfs[j])))
            if hi > lo:
                res = optimize.minimize_scalar(
                    lambda mf, L=L: objective(min(t_hi, max(t_lo, on_boundary(mf, L))), mf),
                    bounds=(lo, hi), method="bounded",
                    options={"xatol": 1e-10 * max(1.0, mf_hi)},
                )
                mf = float(res.x)
                candidates.append(result(min(t_hi, max(t_lo, on_boundary(mf, L))), mf))

        best = min(candidates, key=_sort_key)
        best.diagnostics = {
            "grid_best": grid_best.objective,
            "boundary_grid_best": float(bvals.min()),
            "local_best": best_local.objective,
            "converged": converged,
        }
        diagnostics["iterations"] += iterations
        diagnostics["restarts"] += len(starts)
        diagnostics["evaluations"] += evals
        diagnostics["policies"][policy.value] = {
            "objective": best.objective,
            "size_ratio": best.tuning.size_ratio,
            "filter_memory_bits": best.tuning.filter_memory,
            **best.diagnostics,
        }
        per_policy.append(best)

    lev, tier = per_policy
    winner = lev if lev.objective <= tier.objective + POLICY_TIE else tier
    diagnostics["converged"] = winner.diagnostics["converged"]
    diagnostics["grid_best"] = min(p.diagnostics["grid_best"] for p in per_policy)
    return SearchResult(winner.tuning, winner.objective, diagnostics)
