"""Worst-case expected cost over a KL ball, via the Lagrangian dual.

For a cost vector ``c`` and centre workload ``w`` the inner maximization

    max { v.c : v >= 0, sum(v) = 1, KL(v, w) <= rho }

equals the minimum over (lam > 0, eta) of

    g(lam, eta) = eta + rho*lam + lam * sum_i w_i * phi*((c_i - eta) / lam)

with phi*(s) = exp(s) - 1. Minimizing out eta gives the one-dimensional
convex function h(lam) = rho*lam + lam * log(sum_i w_i exp(c_i / lam)),
whose derivative is rho - KL(v_lam, w) with v_lam proportional to
w * exp(c / lam). The primary path finds the root of that derivative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .cost_model import CostVector, SystemParams, Tuning, Workload, cost_vector, workload_cost
from .search import search

LAMBDA_MIN = 1e-6
CONJUGATE_CAP = 700.0
SMALL_TILT = 1e-6
_TIE = 1e-12


@dataclass(frozen=True)
class DualVars:
    lam: float
    eta: float

    def __post_init__(self):
        if not self.lam >= LAMBDA_MIN:
            raise ValueError(f"lambda must be >= {LAMBDA_MIN}")


@dataclass(frozen=True)
class WorstCase:
    value: float
    workload: Workload
    dual: DualVars | None  # None when the optimum sits at a lambda limit
    at_max: bool = False


def kl_conjugate(s: float) -> float:
    """Convex conjugate of t ln t - t + 1, i.e. exp(s) - 1."""
    if s == -math.inf:
        return -1.0
    if s > CONJUGATE_CAP:
        raise OverflowError(f"conjugate argument {s} exceeds {CONJUGATE_CAP}")
    return math.expm1(s)


def _arrays(cvec, wkl):
    c = cvec.as_array() if isinstance(cvec, CostVector) else np.asarray(cvec, dtype=float)
    w = wkl.as_array() if isinstance(wkl, Workload) else np.asarray(wkl, dtype=float)
    return c, w


def dual_objective(cvec, wkl, rho: float, dv: DualVars) -> float:
    """g(lam, eta); +inf when an exponent overflows."""
    c, w = _arrays(cvec, wkl)
    if rho < 0:
        raise ValueError("rho must be >= 0")
    s = (c - dv.eta) / dv.lam
    if np.any(s[w > 0] > CONJUGATE_CAP):
        return math.inf
    conj = np.expm1(np.minimum(s, CONJUGATE_CAP))
    return float(dv.eta + rho * dv.lam + dv.lam * np.dot(w, conj))


def eliminated_dual(cvec, wkl, rho: float, lam: float) -> float:
    """min over eta of g(lam, eta) = rho*lam + lam * logsumexp(c/lam, b=w)."""
    c, w = _arrays(cvec, wkl)
    return float(rho * lam + lam * special.logsumexp(c / lam, b=w))


def _tilted(cs: list, ws: list, s: float) -> list:
    top = max(cs)
    z = [wi * math.exp(s * (ci - top)) for ci, wi in zip(cs, ws)]
    total = sum(z)
    return [zi / total for zi in z]


def _kl_support(v: list, ws: list) -> float:
    return sum(vi * math.log(vi / wi) for vi, wi in zip(v, ws) if vi > 0)


def _tilt_stats(cs: list, ws: list, s: float, top: float) -> tuple:
    """(KL(v_s, w), d KL / d log s, ln Z) for v_s proportional to w exp(s c).

    With Z = sum_i w_i exp(s (c_i - top)), KL = s E_v[c - top] - ln Z and the
    slope is s^2 Var_v(c).
    """
    z = [wi * math.exp(s * (ci - top)) for ci, wi in zip(cs, ws)]
    total = sum(z)
    mean = sum(zi * (ci - top) for zi, ci in zip(z, cs)) / total
    var = sum(zi * (ci - top - mean) ** 2 for zi, ci in zip(z, cs)) / total
    log_z = math.log(total)
    return s * mean - log_z, s * s * var, log_z


def _solve_log_tilt(cs: list, ws: list, rho: float, top: float, hi: float, x0: float):
    """Root of KL(v_s, w) = rho in x = log s, Newton safeguarded by bisection.

    Returns (x, ln Z at x), or None when KL stays below rho up to x = hi.
    """
    lo = -math.inf
    x = min(x0, hi)
    checked_hi = False
    for _ in range(300):
        kl, slope, log_z = _tilt_stats(cs, ws, math.exp(x), top)
        gap = kl - rho
        if gap > 0:
            hi = x
        else:
            if x >= hi:
                return None
            lo = x
        if abs(gap) <= 1e-13 * max(1.0, rho) or hi - lo < 1e-15:
            break
        # Newton step, capped because the slope vanishes at both ends of the curve
        step = x - max(-2.0, min(2.0, gap / slope)) if slope > 0 else math.nan
        if lo < step < hi:
            x = step
        elif step >= hi and not checked_hi:
            x, checked_hi = hi, True
        else:
            x = 0.5 * (lo + hi) if lo > -math.inf else hi - 2.0
    return x, log_z


def _solve(c: list, w: list, rho: float):
    """Core inner solve on plain lists.

    Returns (value, v, lam, eta); lam and eta are None at a lambda limit.
    """
    idx = [i for i, wi in enumerate(w) if wi > 0]
    cs, ws = [c[i] for i in idx], [w[i] for i in idx]
    cmax = max(cs)
    spread = cmax - min(cs)
    tie = _TIE * max(1.0, abs(cmax))
    if rho == 0 or spread <= tie:
        return sum(ci * wi for ci, wi in zip(c, w)), list(w), None, None

    mean = sum(wi * ci for wi, ci in zip(ws, cs))
    var = sum(wi * (ci - mean) ** 2 for wi, ci in zip(ws, cs))
    # small-s expansion KL ~ s^2 Var_w(c) / 2
    s0 = math.sqrt(2.0 * rho) / math.sqrt(var)
    if s0 * spread < SMALL_TILT:
        # KL is below float resolution here; use the second-order expansion
        lam = 1.0 / s0
        eta = mean + 0.5 * s0 * var
        v = [0.0] * len(w)
        for i, wi, ci in zip(idx, ws, cs):
            v[i] = wi * (1.0 + s0 * (ci - mean))
        return mean + s0 * var, v, lam, eta

    top = [ci >= cmax - tie for ci in cs]
    top_mass = sum(wi for wi, t in zip(ws, top) if t)
    root = None
    if rho < -math.log(top_mass):
        root = _solve_log_tilt(cs, ws, rho, cmax, math.log(1.0 / LAMBDA_MIN), math.log(s0))
    if root is None:
        # optimum at the lambda -> 0 limit: all mass on the costliest types
        v = [0.0] * len(w)
        for i, wi, t in zip(idx, ws, top):
            if t:
                v[i] = wi / top_mass
        return sum(vi * ci for vi, ci in zip(v, c)), v, None, None

    x, log_z = root
    s = math.exp(x)
    lam = 1.0 / s
    # eta minimizing g for this lambda: lam * log(sum_i w_i exp(c_i / lam))
    eta = cmax + lam * log_z
    v = [0.0] * len(w)
    for i, vi in zip(idx, _tilted(cs, ws, s)):
        v[i] = vi
    return rho * lam + eta, v, lam, eta


def worst_case_value(c, w, rho: float) -> float:
    """Worst-case value only, for plain sequences (no validation)."""
    return _solve(list(c), list(w), rho)[0]


def worst_case(cvec, wkl, rho: float) -> WorstCase:
    """Maximize v.c over the KL ball of radius ``rho`` around ``wkl``."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    c, w = _arrays(cvec, wkl)
    value, v, lam, eta = _solve(c.tolist(), w.tolist(), rho)
    dual = DualVars(lam, eta) if lam is not None else None
    return WorstCase(value, Workload.normalized(v), dual, at_max=dual is None and rho > 0)


def worst_case_cost(cvec, wkl, rho: float) -> tuple[float, Workload]:
    wc = worst_case(cvec, wkl, rho)
    return wc.value, wc.workload


def minimize_dual_2d(cvec, wkl, rho: float) -> tuple[float, DualVars]:
    """Cross-check path: minimize g over (log lam, eta) numerically."""
    c, w = _arrays(cvec, wkl)
    if rho == 0:
        return float(np.dot(w, c)), DualVars(1.0 / LAMBDA_MIN, float(np.dot(w, c)))
    scale = max(1.0, float(np.abs(c).max()))

    def obj(x):
        lam = max(math.exp(x[0]), LAMBDA_MIN)
        val = dual_objective(c, w, rho, DualVars(lam, x[1] * scale))
        return val / scale if math.isfinite(val) else 1e300

    best = None
    for lam0 in (0.1, 1.0, 10.0):
        lam0 = lam0 * scale
        x0 = [math.log(lam0), float(eliminated_dual(c, w, 0.0, lam0)) / scale]
        res = optimize.minimize(obj, x0, method="Nelder-Mead",
                                options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000})
        if best is None or res.fun < best.fun:
            best = res
    lam = max(math.exp(best.x[0]), LAMBDA_MIN)
    return best.fun * scale, DualVars(lam, best.x[1] * scale)


def worst_case_batch(C: np.ndarray, wkl, rho: float, iterations: int = 52) -> np.ndarray:
    """Vectorized worst-case value for each row of ``C`` (shape (n, 4)).

    Bisects the same stationarity condition as :func:`worst_case` in log(1/lam).
    """
    C = np.asarray(C, dtype=float)
    w = wkl.as_array() if isinstance(wkl, Workload) else np.asarray(wkl, dtype=float)
    flat = C.reshape(-1, C.shape[-1])
    expected = flat @ w
    if rho == 0:
        return expected.reshape(C.shape[:-1])
    support = w > 0
    cs = flat[:, support]
    ws = w[support]
    logw = np.log(ws)
    cmax = cs.max(axis=1, keepdims=True)
    spread = (cmax - cs.min(axis=1, keepdims=True))[:, 0]
    shifted = cs - cmax
    top = shifted >= -_TIE * np.maximum(1.0, np.abs(cmax))
    kl_limit = -np.log((ws * top).sum(axis=1))

    def kl_at(log_s):
        a = np.exp(log_s)[:, None] * shifted + logw
        a -= a.max(axis=1, keepdims=True)
        z = np.exp(a)
        v = z / z.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(v > 0, v * (np.log(v) - logw), 0.0)
        return t.sum(axis=1), v

    flat_spread = spread <= _TIE * np.maximum(1.0, np.abs(cmax[:, 0]))
    safe_spread = np.where(flat_spread, 1.0, spread)
    lo = np.log(1e-3 / safe_spread)
    for _ in range(20):
        g, _ = kl_at(lo)
        bad = g > rho
        if not bad.any():
            break
        lo = np.where(bad, lo - 5.0, lo)
    hi = np.full_like(lo, math.log(1.0 / LAMBDA_MIN))
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        g, _ = kl_at(mid)
        below = g < rho
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    s = np.exp(0.5 * (lo + hi))
    lam = 1.0 / s
    value = rho * lam + lam * special.logsumexp(shifted * s[:, None], b=ws, axis=1) + cmax[:, 0]
    value = np.where(rho >= kl_limit, cmax[:, 0], value)
    value = np.minimum(value, cmax[:, 0])
    mean = (cs * ws).sum(axis=1)
    var = ((cs - mean[:, None]) ** 2 * ws).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s0 = math.sqrt(2.0 * rho) / np.sqrt(var)
        small = s0 * spread < SMALL_TILT
        value = np.where(small, mean + s0 * var, value)
    value = np.where(flat_spread, expected, value)
    return value.reshape(C.shape[:-1])


@dataclass
class RobustResult:
    tuning: Tuning
    rho: float
    objective: float  # worst-case expected cost over the KL ball
    dual: DualVars | None
    worst_workload: Workload
    diagnostics: dict = field(default_factory=dict)


def tune_robust(sys: SystemParams, wkl: Workload, rho: float) -> RobustResult:
    """Minimize the worst-case cost over tunings for the ball of radius ``rho``."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    w = list(wkl.as_tuple())
    res = search(
        sys,
        lambda c: _solve(c, w, rho)[0],
        lambda C: worst_case_batch(C, wkl, rho),
    )
    wc = worst_case(cost_vector(sys, res.tuning), wkl, rho)
    diag = dict(res.diagnostics)
    diag["nominal_cost"] = workload_cost(wkl, sys, res.tuning)
    diag["lambda_limit"] = wc.dual is None
    return RobustResult(res.tuning, rho, wc.value, wc.dual, wc.workload, diag)
