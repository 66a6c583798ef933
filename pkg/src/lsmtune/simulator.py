"""In-memory LSM tree that counts logical page I/Os.

Values are not stored: the entry size only sets page and buffer capacity.
Each run keeps its sorted keys, fence pointers (first key of every page) and
a Bloom filter sized from the per-level false-positive rates of the cost
model.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cost_model import LN2_SQ, Policy, SystemParams, Tuning

MAX_LEVELS = 20
KEY_DOMAIN_FACTOR = 8
_MASK = (1 << 64) - 1
QUERY_TYPES = ("empty_get", "nonempty_get", "range", "write")


class CapacityError(ValueError):
    pass


# -- hashing ---------------------------------------------------------------------


def _mix(x: int) -> int:
    """splitmix64 finalizer on Python ints."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def _mix_array(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64) + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


class BloomFilter:
    """Bit-array Bloom filter with seeded double hashing h1 + j*h2."""

    def __init__(self, keys: np.ndarray, bits_per_entry: float, salt: int):
        n = len(keys)
        self.salt = salt & _MASK
        self.nbits = max(1, math.ceil(bits_per_entry * n))
        self.k = max(1, round(math.log(2) * bits_per_entry))
        self.bits = np.zeros(self.nbits, dtype=bool)
        if n:
            h1 = _mix_array(np.asarray(keys, dtype=np.uint64) ^ np.uint64(self.salt))
            h2 = _mix_array(h1) | np.uint64(1)
            j = np.arange(self.k, dtype=np.uint64)
            pos = (h1[:, None] + j * h2[:, None]) % np.uint64(self.nbits)
            self.bits[pos.ravel().astype(np.int64)] = True

    def __contains__(self, key: int) -> bool:
        h1 = _mix((int(key) ^ self.salt) & _MASK)
        h2 = _mix(h1) | 1
        bits, m = self.bits, self.nbits
        for j in range(self.k):
            if not bits[((h1 + j * h2) & _MASK) % m]:
                return False
        return True


@dataclass
class Run:
    keys: np.ndarray  # sorted, unique
    page_capacity: int
    filter: BloomFilter | None  # None means every probe is positive

    def __post_init__(self):
        self.fences = self.keys[:: self.page_capacity]

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def pages(self) -> int:
        return -(-len(self.keys) // self.page_capacity)

    def may_contain(self, key: int) -> bool:
        return self.filter is None or key in self.filter

    def contains(self, key: int) -> bool:
        i = int(np.searchsorted(self.keys, key))
        return i < len(self.keys) and self.keys[i] == key

    def page_of(self, key: int) -> int:
        """Page located by the fence pointers for ``key``."""
        return max(0, int(np.searchsorted(self.fences, key, side="right")) - 1)

    def overlap_pages(self, lo: int, hi: int) -> int:
        a = int(np.searchsorted(self.keys, lo, side="left"))
        b = int(np.searchsorted(self.keys, hi, side="right"))
        if b <= a:
            return 0
        return (b - 1) // self.page_capacity - a // self.page_capacity + 1


# -- configuration and accounting -----------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    system: SystemParams
    tuning: Tuning
    key_domain: int | None = None
    seed: int = 0

    def __post_init__(self):
        self.tuning.validate(self.system)
        object.__setattr__(self, "tuning", self.tuning.deployed())
        if self.key_domain is None:
            object.__setattr__(self, "key_domain", KEY_DOMAIN_FACTOR * self.system.num_entries)
        if self.buffer_capacity < 1:
            raise CapacityError("buffer holds less than one entry")
        if self.key_domain < 1:
            raise ValueError("key domain must be positive")

    @property
    def size_ratio(self) -> int:
        return int(self.tuning.size_ratio)

    @property
    def policy(self) -> Policy:
        return self.tuning.policy

    @property
    def buffer_capacity(self) -> int:
        return int(self.tuning.buffer_memory(self.system) // self.system.entry_size)

    def level_capacity(self, level: int) -> int:
        """Entries level ``level`` (1-based) holds: (T-1) * T**(level-1) buffers."""
        T = self.size_ratio
        return (T - 1) * T ** (level - 1) * self.buffer_capacity

    def run_capacity(self, level: int) -> int:
        """Largest single run at ``level``: the whole level under leveling."""
        if self.policy is Policy.TIERING:
            return self.size_ratio ** (level - 1) * self.buffer_capacity
        return self.level_capacity(level)

    def fp_rate(self, level: int, depth: int) -> float:
        """False-positive target for ``level`` of a tree ``depth`` levels deep."""
        T = float(self.size_ratio)
        scale = T ** (T / (T - 1.0)) * math.exp(
            -(self.tuning.filter_memory / self.system.num_entries) * LN2_SQ
        )
        return min(1.0, scale / T ** (depth + 1 - level))

    def bits_per_entry(self, level: int, depth: int) -> float:
        f = self.fp_rate(level, depth)
        return 0.0 if f >= 1.0 else -math.log(f) / LN2_SQ


@dataclass
class IoStats:
    empty_get_reads: int = 0
    nonempty_get_reads: int = 0
    range_reads: int = 0
    flush_writes: int = 0
    compaction_reads: int = 0
    compaction_writes: int = 0
    queries: dict = field(default_factory=lambda: dict.fromkeys(QUERY_TYPES, 0))

    @property
    def page_reads(self) -> int:
        return self.empty_get_reads + self.nonempty_get_reads + self.range_reads + self.compaction_reads

    @property
    def page_writes(self) -> int:
        return self.flush_writes + self.compaction_writes

    def add(self, other: "IoStats") -> None:
        for name in ("empty_get_reads", "nonempty_get_reads", "range_reads",
                     "flush_writes", "compaction_reads", "compaction_writes"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        for q in QUERY_TYPES:
            self.queries[q] += other.queries[q]

    def write_io(self, rw_asymmetry: float) -> float:
        """Write-side I/O with page writes weighted by the device asymmetry."""
        return self.compaction_reads + rw_asymmetry * self.page_writes

    def means(self, rw_asymmetry: float = 1.0) -> dict:
        """Mean I/O per query of each type; write I/O is amortized over writes."""
        q = self.queries

        def per(total, n):
            return total / n if n else 0.0

        return {
            "empty_get": per(self.empty_get_reads, q["empty_get"]),
            "nonempty_get": per(self.nonempty_get_reads, q["nonempty_get"]),
            "range": per(self.range_reads, q["range"]),
            "write": per(self.write_io(rw_asymmetry), q["write"]),
        }

    def mean_io(self, rw_asymmetry: float = 1.0) -> float:
        """Mean I/O over all queries of the session."""
        n = sum(self.queries.values())
        reads = self.empty_get_reads + self.nonempty_get_reads + self.range_reads
        return (reads + self.write_io(rw_asymmetry)) / n if n else 0.0


# -- the tree ----------------------------------------------------------------------


class SimTree:
    """Buffer plus levels of runs; within a level runs are newest first."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.buffer: set = set()
        self.levels: list = []  # levels[i] is level i+1, a list of Run
        self.stats = IoStats()
        self._salt = cfg.seed * 0x100000001B3 & _MASK
        self._keys: list = []
        self._present: set = set()

    def copy(self) -> "SimTree":
        return copy.deepcopy(self)

    @property
    def depth(self) -> int:
        return len(self.levels)

    def __len__(self) -> int:
        return len(self._present)

    def occupancy(self) -> list:
        return [sum(len(r) for r in lvl) for lvl in self.levels]

    def runs(self):
        for lvl in self.levels:
            yield from lvl

    def _make_run(self, keys: np.ndarray, level: int) -> Run:
        self._salt = _mix(self._salt)
        bits = self.cfg.bits_per_entry(level, max(self.depth, level))
        filt = BloomFilter(keys, bits, self._salt) if bits > 0 else None
        return Run(keys, self.cfg.system.page_capacity, filt)

    def _ensure_level(self, level: int) -> None:
        if level > MAX_LEVELS:
            raise CapacityError(f"tree would exceed {MAX_LEVELS} levels")
        while len(self.levels) < level:
            self.levels.append([])

    def _track(self, keys) -> None:
        for k in keys:
            k = int(k)
            self._present.add(k)
            self._keys.append(k)

    # writes

    def put(self, key: int) -> IoStats:
        delta = IoStats()
        delta.queries["write"] = 1
        key = int(key)
        if key in self._present:
            raise ValueError(f"key {key} already present; writes use fresh keys")
        self._track([key])
        self.buffer.add(key)
        if len(self.buffer) >= self.cfg.buffer_capacity:
            self._flush(delta)
        self.stats.add(delta)
        return delta

    def _flush(self, delta: IoStats) -> None:
        keys = np.array(sorted(self.buffer), dtype=np.int64)
        self.buffer = set()
        self._ensure_level(1)
        B = self.cfg.system.page_capacity
        lvl = self.levels[0]
        if self.cfg.policy is Policy.LEVELING and lvl:
            # merge the in-memory buffer into the resident run
            old = lvl.pop()
            delta.compaction_reads += old.pages
            keys = np.sort(np.concatenate([old.keys, keys]))
            run = self._make_run(keys, 1)
            delta.compaction_writes += run.pages
        else:
            run = self._make_run(keys, 1)
            delta.flush_writes += -(-len(keys) // B)
        lvl.insert(0, run)
        self._compact(1, delta)

    def _compact(self, level: int, delta: IoStats) -> None:
        T = self.cfg.size_ratio
        while level <= self.depth:
            lvl = self.levels[level - 1]
            if self.cfg.policy is Policy.TIERING:
                if len(lvl) < T:
                    return
                merged = lvl[:]
                lvl.clear()
            else:
                if not lvl or len(lvl[0]) <= self.cfg.level_capacity(level):
                    return
                merged = [lvl.pop()]
            self._ensure_level(level + 1)
            below = self.levels[level]
            if self.cfg.policy is Policy.LEVELING and below:
                merged.append(below.pop())
            if len(merged) == 1:
                # trivial move into an empty level: no data is rewritten
                below.insert(0, merged[0])
            else:
                delta.compaction_reads += sum(r.pages for r in merged)
                keys = np.sort(np.concatenate([r.keys for r in merged]))
                run = self._make_run(keys, level + 1)
                delta.compaction_writes += run.pages
                below.insert(0, run)
            level += 1

    # reads

    def get(self, key: int) -> tuple[bool, IoStats]:
        key = int(key)
        delta = IoStats()
        found = key in self.buffer
        reads = 0
        if not found:
            for run in self.runs():
                if run.may_contain(key):
                    reads += 1  # fence pointers pick exactly one page
                    if run.contains(key):
                        found = True
                        break
        if found:
            delta.queries["nonempty_get"] = 1
            delta.nonempty_get_reads = reads
        else:
            delta.queries["empty_get"] = 1
            delta.empty_get_reads = reads
        self.stats.add(delta)
        return found, delta

    def range(self, lo: int, hi: int) -> tuple[int, IoStats]:
        if lo > hi:
            raise ValueError("lo must be <= hi")
        delta = IoStats()
        delta.queries["range"] = 1
        count = sum(1 for k in self.buffer if lo <= k <= hi)
        for run in self.runs():
            if len(run):
                delta.range_reads += 1 + run.overlap_pages(lo, hi)
                a = int(np.searchsorted(run.keys, lo, side="left"))
                b = int(np.searchsorted(run.keys, hi, side="right"))
                count += b - a
        self.stats.add(delta)
        return count, delta

    # sampling helpers

    def random_present(self, rng: np.random.Generator) -> int:
        return self._keys[int(rng.integers(len(self._keys)))]

    def random_absent(self, rng: np.random.Generator) -> int:
        if len(self._present) >= self.cfg.key_domain:
            raise CapacityError("key domain exhausted")
        while True:
            k = int(rng.integers(self.cfg.key_domain))
            if k not in self._present:
                return k


def full_tree_system(base: SystemParams, size_ratio: int, filter_bits_per_entry: float,
                     max_buffer: int = 128) -> tuple[SystemParams, Tuning]:
    """System and leveling tuning whose buffer makes ``base.num_entries`` fill whole levels.

    Picks the shallowest depth L whose buffer ceil(N / (T**L - 1)) holds at
    most ``max_buffer`` entries, then sets total memory to buffer plus filters.
    The cost model assumes full levels; a bulk-loaded tree that barely spills
    into a new level leaves it almost empty.
    """
    T, N = int(size_ratio), base.num_entries
    if T < 2:
        raise ValueError("size ratio must be >= 2")
    depth = 1
    while math.ceil(N / (T**depth - 1)) > max_buffer:
        depth += 1
    buffer_entries = max(base.page_capacity, math.ceil(N / (T**depth - 1)))
    filter_bits = filter_bits_per_entry * N
    sys = replace(base, total_memory_bits=buffer_entries * base.entry_size + filter_bits)
    return sys, Tuning(float(T), filter_bits)


def bulk_fill(cfg: SimConfig, n: int) -> list:
    """Entries per level after a greedy bottom-up fill of ``n`` entries.

    The depth is the fewest levels whose total capacity holds ``n``; the
    deepest level is filled first.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return []
    depth, total = 0, 0
    while total < n:
        depth += 1
        if depth > MAX_LEVELS:
            raise CapacityError(f"{n} entries exceed the capacity of {MAX_LEVELS} levels")
        total += cfg.level_capacity(depth)
    fill = [0] * depth
    remaining = n
    for level in range(depth, 0, -1):
        fill[level - 1] = min(cfg.level_capacity(level), remaining)
        remaining -= fill[level - 1]
    return fill


def bulk_load(cfg: SimConfig, n: int) -> SimTree:
    """Tree holding ``n`` unique random keys in a valid shape; no I/O is counted."""
    fill = bulk_fill(cfg, n)
    if n > cfg.key_domain:
        raise CapacityError("more entries than keys in the domain")
    tree = SimTree(cfg)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    keys = rng.choice(cfg.key_domain, size=n, replace=False).astype(np.int64)
    tree._ensure_level(len(fill))
    start = 0
    for level, count in enumerate(fill, start=1):
        chunk = keys[start:start + count]
        start += count
        size = cfg.run_capacity(level)
        runs = [np.sort(chunk[i:i + size]) for i in range(0, count, size)]
        tree.levels[level - 1] = [tree._make_run(r, level) for r in runs]
    tree._track(keys)
    return tree


def put(tree: SimTree, key: int) -> IoStats:
    return tree.put(key)


def get(tree: SimTree, key: int) -> tuple[bool, IoStats]:
    return tree.get(key)


def range_query(tree: SimTree, lo: int, hi: int) -> tuple[int, IoStats]:
    return tree.range(lo, hi)


def run_session(tree: SimTree, counts, seed: int) -> IoStats:
    """Run a shuffled mix of (empty gets, non-empty gets, ranges, writes).

    Range width is the selectivity times the key domain. Mutates ``tree``;
    use ``tree.copy()`` to replay from the same snapshot.
    """
    counts = [int(c) for c in counts]
    if len(counts) != 4 or any(c < 0 for c in counts):
        raise ValueError("counts must be four non-negative integers")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(np.repeat(np.arange(4), counts))
    width = max(0, round(tree.cfg.system.range_selectivity * tree.cfg.key_domain) - 1)
    session = IoStats()
    for op in order.tolist():
        if op == 0:
            _, d = tree.get(tree.random_absent(rng))
        elif op == 1:
            if not tree._keys:
                raise CapacityError("non-empty get on an empty tree")
            _, d = tree.get(tree.random_present(rng))
        elif op == 2:
            lo = int(rng.integers(tree.cfg.key_domain))
            _, d = tree.range(lo, lo + width)
        else:
            d = tree.put(tree.random_absent(rng))
        session.add(d)
    return session
