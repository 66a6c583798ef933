"""Compare simulated point-lookup I/O against the cost model.

Full-tree configurations (buffer sized so the data fills whole levels) are
the ones the model describes; ``--arbitrary`` adds fixed-memory settings
where the deepest level can hold nearly all data, to show the divergence.
"""
import argparse

import numpy as np

from lsmtune.cost_model import Policy, SystemParams, Tuning, cost_vector, levels
from lsmtune.simulator import SimConfig, bulk_load, full_tree_system, get


def measure(sys, tuning, n, queries, seed):
    tree = bulk_load(SimConfig(sys, tuning, seed=seed), n)
    rng = np.random.default_rng(seed + 1)
    z0 = np.mean([get(tree, tree.random_absent(rng))[1].empty_get_reads for _ in range(queries)])
    z1 = np.mean([get(tree, tree.random_present(rng))[1].nonempty_get_reads for _ in range(queries)])
    return tree, z0, z1


def row(label, sys, tuning, n, queries, seed):
    tree, z0, z1 = measure(sys, tuning, n, queries, seed)
    c = cost_vector(sys, tuning)
    print(f"{label:<28} L={levels(sys, tuning):<3} Z0 {c.Z0:7.4f} sim {z0:7.4f} ({z0 / c.Z0 - 1:+.3f})"
          f"   Z1 {c.Z1:6.4f} sim {z1:6.4f} ({z1 / c.Z1 - 1:+.3f})")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=10**5)
    p.add_argument("--queries", type=int, default=10**4)
    p.add_argument("--arbitrary", action="store_true")
    args = p.parse_args()
    base = SystemParams(10 * args.n, 8192, 4, args.n)

    for T in (2, 4, 8):
        for bits in (2.0, 5.0):
            sys, tun = full_tree_system(base, T, bits)
            for policy in Policy:
                t = Tuning(tun.size_ratio, tun.filter_memory, policy)
                row(f"full T={T} {bits:g}b/e {policy.value}", sys, t, args.n, args.queries, T)
    if args.arbitrary:
        for T in (2, 4, 8):
            for frac in (0.2, 0.5):
                for policy in Policy:
                    t = Tuning(T, frac * base.total_memory_bits, policy)
                    row(f"fixed T={T} m_filt={frac:g}m {policy.value}", base, t, args.n, args.queries, T)


if __name__ == "__main__":
    main()
