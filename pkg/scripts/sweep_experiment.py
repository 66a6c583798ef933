"""Nominal vs robust comparison over a sampled benchmark.

Writes records.csv and summary.csv and prints category means of the
throughput delta and the mean throughput range per rho.

    python3 scripts/sweep_experiment.py --system configs/system_desk.json --n 2000 --out results/sweep
"""
import argparse
import time
from pathlib import Path

from lsmtune.cost_model import SystemParams
from lsmtune.evaluation import DEFAULT_RHO_GRID, run_sweep
from lsmtune.workloads import CATEGORIES, expected_catalog, sample_benchmark


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--system", default="configs/system_desk.json")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--rho", default=",".join(str(r) for r in DEFAULT_RHO_GRID))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="results/sweep")
    args = p.parse_args()

    sys = SystemParams.from_json(args.system)
    rhos = [float(r) for r in args.rho.split(",")]
    bench = sample_benchmark(args.n, args.seed)
    t0 = time.perf_counter()
    report = run_sweep(sys, expected_catalog(), rhos, bench, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_records_csv(out / "records.csv")
    report.write_summary_csv(out / "summary.csv")

    print(f"{len(report)} comparisons in {time.perf_counter() - t0:.1f}s -> {out}")
    print("rho    " + "  ".join(f"{c:>9}" for c in CATEGORIES) + "  theta_robust")
    for rho in report.rhos():
        means = report.category_means(rho)
        print(f"{rho:<6g} " + "  ".join(f"{means[c]:+9.3f}" for c in CATEGORIES)
              + f"  {report.mean_theta_robust(rho):12.4f}")


if __name__ == "__main__":
    main()
