"""Command-line front end: tune, bench-gen, sweep, simulate and replay.

Exit codes: 0 success, 2 usage or configuration error, 3 infeasible bounds
or simulator capacity error. Every command writes a run manifest that
``replay`` turns back into byte-identical outputs.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .cost_model import (
    BITS_PER_BYTE, InvalidTuning, InvalidWorkload, Policy, SystemParams, Tuning, Workload,
    cost_vector,
)
from .evaluation import DEFAULT_RHO_GRID, run_sweep
from .nominal import tune_nominal
from .robust import tune_robust
from .search import InfeasibleBounds
from .simulator import CapacityError, SimConfig, bulk_load, run_session
from .workloads import BenchmarkSet, expected_catalog, kl_divergence_rows, sample_benchmark

log = logging.getLogger("lsmtune")

EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
NORMALIZE_TOL = 1e-6
EXPECTED_KL_MAX = 0.2
DOMINANT_SHARE = 0.8
SESSION_TEMPLATES = ("expected", "empty-read", "non-empty-read", "read", "range", "write")
SIM_FIELDS = ("session", "template", "source", "rho", "z0", "z1", "q", "w",
              "empty_get", "nonempty_get", "range", "write", "mean_io")


class UsageError(Exception):
    pass


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass
class RunManifest:
    command: str
    params: dict
    seeds: dict = field(default_factory=dict)
    version: str = field(default_factory=_version)
    outputs: list = field(default_factory=list)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc


def _system(doc) -> SystemParams:
    try:
        return SystemParams.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid system config: {exc}") from exc


def parse_workload(text: str) -> Workload:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"workload must be four comma-separated numbers: {text!r}") from exc
    if len(vals) != 4 or any(not math.isfinite(v) or v < 0 for v in vals) or sum(vals) <= 0:
        raise UsageError(f"workload must be four non-negative numbers with positive sum: {text!r}")
    if abs(sum(vals) - 1.0) > NORMALIZE_TOL:
        log.warning("workload sums to %g; renormalizing", sum(vals))
    return Workload.normalized(vals)


def parse_rho_grid(text: str) -> list:
    """``default``, ``start:stop:step`` (inclusive) or a comma list."""
    try:
        if text == "default":
            grid = list(DEFAULT_RHO_GRID)
        elif ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0:
                raise ValueError
            grid = [start + k * step for k in range(int(math.floor((stop - start) / step + 1e-9)) + 1)]
        else:
            grid = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"cannot parse rho grid {text!r}") from exc
    if not grid or any(not math.isfinite(r) or r < 0 for r in grid):
        raise UsageError(f"rho grid must be non-empty and non-negative: {text!r}")
    return grid


def parse_catalog(text: str) -> list:
    if text == "all":
        return list(range(15))
    try:
        idx = [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"catalog must be 'all' or comma-separated indices: {text!r}") from exc
    if not idx or any(not 0 <= i < 15 for i in idx):
        raise UsageError("catalog indices must lie in 0..14")
    return idx


# -- commands ------------------------------------------------------------------------


def cmd_tune(params: dict) -> list:
    sys_ = _system(params["system"])
    wkl = Workload(*params["workload"])
    rho = params["rho"]
    if rho is None:
        res = tune_nominal(sys_, wkl)
        objective = res.objective
    else:
        res = tune_robust(sys_, wkl, rho)
        objective = res.objective
    tun = res.tuning
    doc = {
        "policy": tun.policy.value,
        "T_continuous": tun.size_ratio,
        "T_deployed": int(tun.deployed().size_ratio),
        "m_filt_bytes": tun.filter_memory / BITS_PER_BYTE,
        "m_buf_bytes": tun.buffer_memory(sys_) / BITS_PER_BYTE,
        "objective": objective,
        "rho": rho,
        "workload": list(wkl.as_tuple()),
        "diagnostics": res.diagnostics,
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if params.get("out"):
        Path(params["out"]).write_text(text)
        return [params["out"]]
    sys.stdout.write(text)
    return []


def cmd_bench_gen(params: dict) -> list:
    n, seed = params["n"], params["seed"]
    if n < 1:
        raise UsageError("--n must be >= 1")
    bench = sample_benchmark(n, seed)
    try:
        bench.to_jsonl(params["out"])
    except OSError as exc:
        raise UsageError(f"cannot write {params['out']}: {exc.strerror or exc}") from exc
    uniform = Workload(0.25, 0.25, 0.25, 0.25)
    mean_kl = float(np.mean(kl_divergence_rows(bench.matrix(), uniform)))
    print(f"n={n} seed={seed} mean_kl_vs_uniform={mean_kl:.6f}")
    return [params["out"]]


def cmd_sweep(params: dict) -> list:
    sys_ = _system(params["system"])
    bench_path = params["bench"]
    if not Path(bench_path).is_file():
        raise UsageError(f"benchmark file {bench_path} not found")
    digest = _sha256(bench_path)
    if params.get("bench_sha256") not in (None, digest):
        raise UsageError(f"benchmark {bench_path} differs from the manifest")
    params["bench_sha256"] = digest
    bench = BenchmarkSet.from_jsonl(bench_path)
    catalog = [expected_catalog()[i] for i in params["catalog"]]
    report = run_sweep(sys_, catalog, params["rho_grid"], bench, jobs=params.get("jobs", 1))
    out = Path(params["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    records, summary = out / "records.csv", out / "summary.csv"
    report.write_records_csv(records)
    report.write_summary_csv(summary)
    return [str(records), str(summary)]


def _round_counts(mix: np.ndarray, queries: int) -> np.ndarray:
    # floor, with the remainder going to the largest share
    counts = np.floor(mix * queries).astype(int)
    counts[int(np.argmax(mix))] += queries - int(counts.sum())
    return counts


def session_counts(template: str, queries: int, tuning_workload: Workload,
                   rng: np.random.Generator) -> list:
    """Query counts for a named session template.

    The dominant type takes 80% of the queries and the rest is split evenly;
    ``read`` splits its 80% between the two point-read types. ``expected``
    draws a mix within KL 0.2 of the tuning workload.
    """
    if template == "expected":
        w = tuning_workload.as_array()
        counts = _round_counts(w, queries)
        for _ in range(1000):
            cand = _round_counts(rng.dirichlet(50.0 * w + 1e-3), queries)
            if kl_divergence_rows(cand[None, :] / queries, tuning_workload)[0] < EXPECTED_KL_MAX:
                counts = cand
                break
        return counts.tolist()
    dominant = {"empty-read": [0], "non-empty-read": [1], "read": [0, 1],
                "range": [2], "write": [3]}[template]
    rest = [i for i in range(4) if i not in dominant]
    mix = np.zeros(4)
    mix[dominant] = DOMINANT_SHARE / len(dominant)
    mix[rest] = (1.0 - DOMINANT_SHARE) / len(rest)
    counts = _round_counts(mix, queries)
    return counts.tolist()


def _session_spec(spec: dict, i: int) -> tuple:
    if not isinstance(spec, dict):
        raise UsageError(f"session {i} must be a JSON object")
    if "counts" in spec:
        counts = spec["counts"]
        if len(counts) != 4 or any(int(c) != c or c < 0 for c in counts) or sum(counts) <= 0:
            raise UsageError(f"session {i}: counts must be four non-negative integers")
        return "custom", [int(c) for c in counts]
    template = spec.get("template")
    if template not in SESSION_TEMPLATES:
        raise UsageError(f"session {i}: template must be one of {SESSION_TEMPLATES}")
    queries = spec.get("queries", 10_000)
    if not isinstance(queries, int) or queries < 1:
        raise UsageError(f"session {i}: queries must be a positive integer")
    return template, queries


def cmd_simulate(params: dict) -> list:
    sys_ = _system(params["system"])
    tdoc = params["tuning"]
    try:
        tuning = Tuning(float(tdoc["T_deployed"]), float(tdoc["m_filt_bytes"]) * BITS_PER_BYTE,
                        Policy(tdoc["policy"]))
        tuning.validate(sys_)
        tuning_workload = Workload.normalized(tdoc.get("workload", (0.25, 0.25, 0.25, 0.25)))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid tuning file: {exc}") from exc
    sessions = params["sessions"]
    if not isinstance(sessions, list):
        raise UsageError("sessions file must hold a JSON list")
    specs = [_session_spec(s, i) for i, s in enumerate(sessions)]
    seed = params["seed"]
    rows = []
    if specs:
        cfg = SimConfig(sys_, tuning, seed=seed)
        tree = bulk_load(cfg, sys_.num_entries)
        model = cost_vector(sys_, cfg.tuning).as_array()
        for i, (template, arg) in enumerate(specs):
            ss = np.random.SeedSequence([seed, i])
            mix_rng, run_seed = np.random.Generator(np.random.PCG64(ss)), int(ss.generate_state(1)[0])
            counts = arg if template == "custom" else session_counts(template, arg, tuning_workload,
                                                                     mix_rng)
            wl = Workload.from_counts(counts)
            stats = run_session(tree, counts, run_seed)
            m = stats.means(sys_.rw_asymmetry)
            measured = [m["empty_get"], m["nonempty_get"], m["range"], m["write"]]
            head = [i, template]
            tail_wl = [repr(v) for v in wl.as_tuple()]
            rho = "" if tdoc.get("rho") is None else repr(float(tdoc["rho"]))
            rows.append(head + ["model", rho] + tail_wl + [repr(float(v)) for v in model]
                        + [repr(float(model @ wl.as_array()))])
            rows.append(head + ["simulator", rho] + tail_wl + [repr(float(v)) for v in measured]
                        + [repr(stats.mean_io(sys_.rw_asymmetry))])
    with open(params["out"], "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(SIM_FIELDS)
        out.writerows(rows)
    return [params["out"]]


COMMANDS = {"tune": cmd_tune, "bench-gen": cmd_bench_gen, "sweep": cmd_sweep,
            "simulate": cmd_simulate}


def execute(manifest: RunManifest, manifest_path) -> None:
    manifest.outputs = COMMANDS[manifest.command](manifest.params)
    manifest.write(manifest_path)


# -- argument handling -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsmtune", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tune", help="nominal or robust tuning for one workload")
    t.add_argument("system", help="system JSON config")
    t.add_argument("--workload", required=True, help="z0,z1,q,w")
    mode = t.add_mutually_exclusive_group(required=True)
    mode.add_argument("--rho", type=float)
    mode.add_argument("--nominal", action="store_true")
    t.add_argument("--out", help="write tuning JSON here instead of stdout")
    t.add_argument("--manifest")

    b = sub.add_parser("bench-gen", help="sample a benchmark set")
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--seed", type=int, required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--manifest")

    s = sub.add_parser("sweep", help="compare nominal and robust tunings over a benchmark")
    s.add_argument("system")
    s.add_argument("--bench", required=True)
    s.add_argument("--rho-grid", default="default")
    s.add_argument("--catalog", default="all")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--manifest")

    m = sub.add_parser("simulate", help="measure I/O of sessions on the simulated tree")
    m.add_argument("system")
    m.add_argument("--tuning", required=True)
    m.add_argument("--sessions", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.add_argument("--manifest")

    r = sub.add_parser("replay", help="re-run a manifest")
    r.add_argument("manifest")
    r.add_argument("--out-dir", help="redirect outputs into this directory")
    return p


def _manifest_path(args, default: str) -> str:
    return args.manifest or default


def _from_args(args) -> tuple:
    if args.command == "tune":
        params = {"system": _load_json(args.system), "workload": list(parse_workload(args.workload).as_tuple()),
                  "rho": None if args.nominal else args.rho, "out": args.out}
        if params["rho"] is not None and not (math.isfinite(params["rho"]) and params["rho"] >= 0):
            raise UsageError("--rho must be a non-negative number")
        default = (args.out + ".manifest.json") if args.out else "tune.manifest.json"
        return RunManifest("tune", params), _manifest_path(args, default)
    if args.command == "bench-gen":
        params = {"n": args.n, "seed": args.seed, "out": args.out}
        return (RunManifest("bench-gen", params, seeds={"benchmark": args.seed}),
                _manifest_path(args, args.out + ".manifest.json"))
    if args.command == "sweep":
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        params = {"system": _load_json(args.system), "bench": args.bench,
                  "rho_grid": parse_rho_grid(args.rho_grid), "catalog": parse_catalog(args.catalog),
                  "out_dir": args.out_dir, "jobs": args.jobs}
        return (RunManifest("sweep", params),
                _manifest_path(args, str(Path(args.out_dir) / "manifest.json")))
    if args.command == "simulate":
        params = {"system": _load_json(args.system), "tuning": _load_json(args.tuning),
                  "sessions": _load_json(args.sessions), "seed": args.seed, "out": args.out}
        return (RunManifest("simulate", params, seeds={"simulation": args.seed}),
                _manifest_path(args, args.out + ".manifest.json"))
    raise UsageError(f"unknown command {args.command}")


def _replay(args) -> tuple:
    try:
        manifest = RunManifest.read(args.manifest)
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise UsageError(f"cannot read manifest {args.manifest}: {exc}") from exc
    if manifest.command not in COMMANDS:
        raise UsageError(f"manifest names unknown command {manifest.command!r}")
    path = args.manifest
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        p = manifest.params
        for key in ("out", "out_dir"):
            if p.get(key):
                p[key] = str(out / Path(p[key]).name) if key == "out" else str(out)
        path = str(out / Path(args.manifest).name)
    return manifest, path


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        manifest, path = _replay(args) if args.command == "replay" else _from_args(args)
        execute(manifest, path)
    except (UsageError, InvalidWorkload, InvalidTuning) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleBounds, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
