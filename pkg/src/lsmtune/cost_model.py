"""Expected-I/O cost model of an LSM tree under leveling and tiering.

All memory quantities are in bits. Every public function is pure; the
``*_arrays`` helpers evaluate the same formulas over numpy grids of
(size ratio, filter memory) for the tuners.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LN2_SQ = math.log(2.0) ** 2
BITS_PER_BYTE = 8
# slack on log_T(x) before the ceiling so exact powers (log10(100)) are not bumped
_CEIL_EPS = 1e-9


class Policy(str, enum.Enum):
    LEVELING = "leveling"
    TIERING = "tiering"


class InvalidTuning(ValueError):
    pass


class InvalidWorkload(ValueError):
    pass


@dataclass(frozen=True)
class SystemParams:
    """Fixed environment. Memory and entry size in bits, B in entries/page."""

    total_memory_bits: float
    entry_size: float
    page_capacity: int
    num_entries: int
    rw_asymmetry: float = 1.0
    range_selectivity: float = 0.0

    def __post_init__(self):
        if not self.total_memory_bits > 0:
            raise ValueError("total memory must be positive")
        if not self.entry_size > 0:
            raise ValueError("entry size must be positive")
        if self.page_capacity < 1:
            raise ValueError("page capacity must be >= 1 entry")
        if self.num_entries < 1:
            raise ValueError("num_entries must be >= 1")
        if self.rw_asymmetry < 0:
            raise ValueError("rw_asymmetry must be >= 0")
        if not 0.0 <= self.range_selectivity <= 1.0:
            raise ValueError("range_selectivity must lie in [0, 1]")

    @property
    def data_bits(self) -> float:
        return self.num_entries * self.entry_size

    @property
    def min_buffer_bits(self) -> float:
        # buffer must hold at least one full page
        return self.page_capacity * self.entry_size

    @property
    def max_filter_bits(self) -> float:
        return self.total_memory_bits - self.min_buffer_bits

    @classmethod
    def from_dict(cls, doc: dict) -> "SystemParams":
        """Build from the byte-denominated JSON layout.

        Keys: total_memory_bytes, entry_size_bytes, page_size_bytes,
        num_entries, rw_asymmetry, range_selectivity. Memory may also be
        given as a string with a unit suffix (``"10GB"``).
        """
        required = ("total_memory_bytes", "entry_size_bytes", "page_size_bytes", "num_entries")
        missing = [k for k in required if k not in doc]
        if missing:
            raise ValueError(f"system config missing keys: {missing}")
        mem = parse_bytes(doc["total_memory_bytes"])
        entry = parse_bytes(doc["entry_size_bytes"])
        page = parse_bytes(doc["page_size_bytes"])
        if entry <= 0:
            raise ValueError("entry_size_bytes must be positive")
        return cls(
            total_memory_bits=mem * BITS_PER_BYTE,
            entry_size=entry * BITS_PER_BYTE,
            page_capacity=int(page // entry),
            num_entries=int(doc["num_entries"]),
            rw_asymmetry=float(doc.get("rw_asymmetry", 1.0)),
            range_selectivity=float(doc.get("range_selectivity", 0.0)),
        )

    @classmethod
    def from_json(cls, path) -> "SystemParams":
        with open(Path(path)) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "total_memory_bytes": self.total_memory_bits / BITS_PER_BYTE,
            "entry_size_bytes": self.entry_size / BITS_PER_BYTE,
            "page_size_bytes": self.page_capacity * self.entry_size / BITS_PER_BYTE,
            "num_entries": self.num_entries,
            "rw_asymmetry": self.rw_asymmetry,
            "range_selectivity": self.range_selectivity,
        }


_UNITS = {"": 1, "B": 1, "KB": 1024, "MB": 1024**2, "GB": 1024**3, "TB": 1024**4}


def parse_bytes(value) -> float:
    """Parse ``4096``, ``"4KB"`` or ``"10 GB"`` (powers of 1024) into bytes."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip().upper().replace(" ", "")
    num = text.rstrip("KMGTB")
    unit = text[len(num):]
    if unit not in _UNITS or not num:
        raise ValueError(f"cannot parse byte quantity {value!r}")
    return float(num) * _UNITS[unit]


@dataclass(frozen=True)
class Tuning:
    size_ratio: float
    filter_memory: float
    policy: Policy = Policy.LEVELING

    def buffer_memory(self, sys: SystemParams) -> float:
        return sys.total_memory_bits - self.filter_memory

    def validate(self, sys: SystemParams) -> None:
        if not (self.size_ratio >= 2.0 and math.isfinite(self.size_ratio)):
            raise InvalidTuning(f"size ratio must be >= 2, got {self.size_ratio}")
        if not 0.0 <= self.filter_memory < sys.total_memory_bits:
            raise InvalidTuning("filter memory must lie in [0, m)")
        if self.buffer_memory(sys) <= 0:
            raise InvalidTuning("derived buffer memory must be positive")

    def deployed(self) -> "Tuning":
        """Copy with the size ratio rounded up to an integer."""
        return Tuning(float(deploy_size_ratio(self.size_ratio)), self.filter_memory, self.policy)


def deploy_size_ratio(size_ratio: float) -> int:
    return max(2, math.ceil(size_ratio - 1e-9))


@dataclass(frozen=True)
class Workload:
    z0: float
    z1: float
    q: float
    w: float

    def __post_init__(self):
        vals = self.as_tuple()
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise InvalidWorkload(f"workload components must be >= 0: {vals}")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise InvalidWorkload(f"workload must sum to 1, got {sum(vals)!r}")

    def as_tuple(self) -> tuple:
        return (self.z0, self.z1, self.q, self.w)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=float)

    @classmethod
    def from_counts(cls, counts) -> "Workload":
        total = float(sum(counts))
        if total <= 0:
            raise InvalidWorkload("query counts must have a positive sum")
        z0, z1, q = (c / total for c in counts[:3])
        # last component absorbs rounding so the sum is exactly 1
        return cls(z0, z1, q, max(0.0, 1.0 - z0 - z1 - q))

    @classmethod
    def normalized(cls, values) -> "Workload":
        return cls.from_counts([float(v) for v in values])


@dataclass(frozen=True)
class CostVector:
    Z0: float
    Z1: float
    Q: float
    W: float

    def as_array(self) -> np.ndarray:
        return np.array([self.Z0, self.Z1, self.Q, self.W], dtype=float)


def size_ratio_upper_bound(sys: SystemParams, filter_memory: float) -> float:
    return max(2.0, sys.data_bits / (sys.total_memory_bits - filter_memory))


def _levels(sys: SystemParams, T: float, filter_memory: float) -> int:
    ratio = sys.data_bits / (sys.total_memory_bits - filter_memory)
    return max(1, math.ceil(math.log(ratio + 1.0) / math.log(T) - _CEIL_EPS))


def level_boundary(sys: SystemParams, filter_memory: float, L: int) -> float:
    """Smallest size ratio at which the data fits in ``L`` levels."""
    ratio = sys.data_bits / (sys.total_memory_bits - filter_memory)
    return (ratio + 1.0) ** (1.0 / L)


def levels(sys: SystemParams, tun: Tuning) -> int:
    tun.validate(sys)
    return _levels(sys, tun.size_ratio, tun.filter_memory)


def _fp_rates(sys: SystemParams, T: float, filter_memory: float, L: int) -> list[float]:
    scale = T ** (T / (T - 1.0)) * math.exp(-(filter_memory / sys.num_entries) * LN2_SQ)
    return [min(1.0, max(0.0, scale / T ** (L + 1 - i))) for i in range(1, L + 1)]


def fp_rates(sys: SystemParams, tun: Tuning) -> list[float]:
    """Per-level Bloom false-positive rates f_1..f_L, clamped into [0, 1]."""
    L = levels(sys, tun)
    return _fp_rates(sys, tun.size_ratio, tun.filter_memory, L)


def empty_point_cost(sys: SystemParams, tun: Tuning) -> float:
    total = sum(fp_rates(sys, tun))
    if tun.policy is Policy.TIERING:
        return (tun.size_ratio - 1.0) * total
    return total


def _level_weights(T: float, L: int) -> list[float]:
    # share of a full tree's entries on each level; the m_buf/E factor cancels
    raw = [(T - 1.0) * T ** (i - 1) for i in range(1, L + 1)]
    total = sum(raw)
    return [r / total for r in raw]


def _nonempty(T: float, f: list[float], tiering: bool) -> float:
    cost = 0.0
    preceding = 0.0
    for weight, fi in zip(_level_weights(T, len(f)), f):
        if tiering:
            cost += weight * (1.0 + (T - 1.0) * preceding + (T - 2.0) / 2.0 * fi)
        else:
            cost += weight * (1.0 + preceding)
        preceding += fi
    return cost


def nonempty_point_cost(sys: SystemParams, tun: Tuning) -> float:
    f = fp_rates(sys, tun)
    return _nonempty(tun.size_ratio, f, tun.policy is Policy.TIERING)


def range_cost(sys: SystemParams, tun: Tuning) -> float:
    L = levels(sys, tun)
    scan = sys.range_selectivity * sys.num_entries / sys.page_capacity
    if tun.policy is Policy.TIERING:
        return scan + L * (tun.size_ratio - 1.0)
    return scan + L


def write_cost(sys: SystemParams, tun: Tuning) -> float:
    L = levels(sys, tun)
    T = tun.size_ratio
    merges = (T - 1.0) / T if tun.policy is Policy.TIERING else (T - 1.0) / 2.0
    return L / sys.page_capacity * merges * (1.0 + sys.rw_asymmetry)


def raw_costs(sys: SystemParams, T: float, filter_memory: float, policy: Policy) -> list[float]:
    """[Z0, Z1, Q, W] without input validation; the tuners' hot path."""
    L = _levels(sys, T, filter_memory)
    f = _fp_rates(sys, T, filter_memory, L)
    tiering = policy is Policy.TIERING
    fsum = sum(f)
    scan = sys.range_selectivity * sys.num_entries / sys.page_capacity
    io = L / sys.page_capacity * (1.0 + sys.rw_asymmetry)
    if tiering:
        return [(T - 1.0) * fsum, _nonempty(T, f, True), scan + L * (T - 1.0), io * (T - 1.0) / T]
    return [fsum, _nonempty(T, f, False), scan + L, io * (T - 1.0) / 2.0]


def cost_vector(sys: SystemParams, tun: Tuning) -> CostVector:
    tun.validate(sys)
    return CostVector(*raw_costs(sys, tun.size_ratio, tun.filter_memory, tun.policy))


def workload_cost(wkl: Workload, sys: SystemParams, tun: Tuning) -> float:
    """Expected I/Os per query: empty-read share pairs with empty-read cost, etc."""
    if not isinstance(wkl, Workload):
        wkl = Workload(*wkl)
    return expected_cost(wkl, cost_vector(sys, tun))


def expected_cost(wkl: Workload, c: CostVector) -> float:
    return wkl.z0 * c.Z0 + wkl.z1 * c.Z1 + wkl.q * c.Q + wkl.w * c.W


# -- vectorized grid evaluation ------------------------------------------------


def levels_array(sys: SystemParams, T: np.ndarray, filter_memory: np.ndarray) -> np.ndarray:
    T, mf = np.broadcast_arrays(np.asarray(T, float), np.asarray(filter_memory, float))
    ratio = sys.data_bits / (sys.total_memory_bits - mf)
    raw = np.log(ratio + 1.0) / np.log(T)
    return np.maximum(1, np.ceil(raw - _CEIL_EPS)).astype(int)


def cost_arrays(sys: SystemParams, T, filter_memory, policy: Policy) -> np.ndarray:
    """Cost vectors for broadcast arrays of (T, m_filt); returns shape (..., 4)."""
    T, mf = np.broadcast_arrays(np.asarray(T, float), np.asarray(filter_memory, float))
    L = levels_array(sys, T, mf)
    Lmax = int(L.max()) if L.size else 1
    i = np.arange(1, Lmax + 1)
    Te = T[..., None]
    Le = L[..., None]
    mask = i <= Le
    scale = Te ** (Te / (Te - 1.0)) * np.exp(-(mf[..., None] / sys.num_entries) * LN2_SQ)
    with np.errstate(over="ignore", under="ignore"):
        f = np.clip(scale / Te ** (Le + 1 - i), 0.0, 1.0)
    f = np.where(mask, f, 0.0)
    fsum = f.sum(axis=-1)

    with np.errstate(over="ignore"):
        w_raw = np.where(mask, (Te - 1.0) * Te ** (i - 1.0), 0.0)
    weights = w_raw / w_raw.sum(axis=-1, keepdims=True)
    preceding = np.cumsum(f, axis=-1) - f
    scan = sys.range_selectivity * sys.num_entries / sys.page_capacity
    io_factor = L / sys.page_capacity * (1.0 + sys.rw_asymmetry)
    if policy is Policy.TIERING:
        z0 = (T - 1.0) * fsum
        z1 = (weights * (1.0 + (Te - 1.0) * preceding + (Te - 2.0) / 2.0 * f)).sum(axis=-1)
        q = scan + L * (T - 1.0)
        w = io_factor * (T - 1.0) / T
    else:
        z0 = fsum
        z1 = (weights * (1.0 + preceding)).sum(axis=-1)
        q = scan + L
        w = io_factor * (T - 1.0) / 2.0
    return np.stack([z0, z1, q, np.broadcast_to(w, z0.shape)], axis=-1)
