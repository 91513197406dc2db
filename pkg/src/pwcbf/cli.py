"""Command-line front end: synth, simulate, check and table.

Every command writes plain UTF-8 files into ``--out``. Wall-clock timings
live in ``timings.json`` so that all other outputs are byte-identical across
repeated runs with the same inputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from .controller import controller_from_csv
from .geometry import Partition, PartitionError, build_partition
from .lp import LPSolution
from .system import BENCHMARKS, ConfigError, SystemSpec, benchmark_text, load_spec
from .synthesis import SynthesisError, SynthesisOptions, barrier_from_csv, solution_json, synthesize
from .validation import binomial_bound, check_certificate, simulate

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_MISMATCH, EXIT_SOLVER = 0, 1, 2, 3, 4
TIMING_FIELDS = ("synth_seconds", "bound_seconds")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunSummary:
    name: str
    K: int
    grid_counts: list[int]
    eta: float
    beta: float
    p_safe: float
    synth_seconds: float
    bound_seconds: float
    lp_variables: int
    lp_constraints: int
    mc_empirical: float | None = None
    mc_lower_bound: float | None = None

    def stable_dict(self) -> dict:
        """Everything except wall-clock timings."""
        return {k: v for k, v in asdict(self).items() if k not in TIMING_FIELDS}

    def timing_dict(self) -> dict:
        return {k: getattr(self, k) for k in TIMING_FIELDS}


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(out: Path, name: str, text: str) -> None:
    (out / name).write_text(text, encoding="utf-8")


def workers_from_env() -> int:
    raw = os.environ.get("THREADS", "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise CliError(EXIT_USAGE, f"THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise CliError(EXIT_USAGE, f"THREADS must be a positive integer, got {raw!r}")
    return value


def load_config(ref: str) -> SystemSpec:
    """A config file path, or the name of a shipped benchmark."""
    if not ref:
        raise CliError(EXIT_USAGE, "config not found: empty name")
    path = Path(ref)
    try:
        if path.is_file():
            return load_spec(path.read_text(encoding="utf-8"), name=path.stem)
        if ref in BENCHMARKS:
            return load_spec(benchmark_text(ref), name=ref)
    except ConfigError as exc:
        raise CliError(EXIT_USAGE, f"invalid config: {exc}") from None
    raise CliError(EXIT_USAGE, f"config not found: {ref}")


def parse_grid(text: str | None, spec: SystemSpec) -> tuple[int, ...]:
    if text is None:
        if not spec.grids:
            raise CliError(EXIT_USAGE, "no --grid given and the config lists no grids")
        return tuple(spec.grids[0])
    try:
        counts = tuple(int(c) for c in text.split(","))
    except ValueError:
        raise CliError(EXIT_USAGE, f"bad --grid {text!r}: expected comma-separated integers") from None
    if len(counts) != spec.n or min(counts) < 1:
        raise CliError(EXIT_USAGE, f"--grid needs {spec.n} positive counts, got {text!r}")
    return counts


def parse_horizon(text: str | None, spec: SystemSpec) -> float:
    if text is None:
        return spec.horizon
    if text == "infinite":
        return math.inf
    try:
        value = int(text)
    except ValueError:
        value = -1
    if value < 0:
        raise CliError(EXIT_USAGE, f"--horizon must be a non-negative integer or 'infinite', got {text!r}")
    return float(value)


def make_partition(spec: SystemSpec, counts) -> Partition:
    try:
        return build_partition(spec, counts)
    except PartitionError as exc:
        raise CliError(EXIT_USAGE, f"cannot partition: {exc}") from None


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_synth(spec: SystemSpec, counts, horizon: float, mode: str, workers: int):
    partition = make_partition(spec, counts)
    try:
        options = SynthesisOptions.from_spec(spec, bound_mode=mode)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_USAGE, f"invalid synthesis options: {exc}") from None
    t0 = time.perf_counter()
    try:
        result = synthesize(spec, partition, horizon=horizon, options=options, workers=workers)
    except SynthesisError as exc:
        raise CliError(EXIT_SOLVER, f"solver failure: {exc}") from None
    elapsed = time.perf_counter() - t0
    if not isinstance(result.solution, LPSolution) or not result.solution.ok:
        raise CliError(EXIT_SOLVER, f"solver failure: {result.solution.status}")
    b = result.barrier
    summary = RunSummary(spec.name, partition.K, list(partition.grid_counts), float(b.eta), float(b.beta),
                         float(b.p_safe), elapsed, float(result.timings.get("bound_seconds", 0.0)),
                         result.model.num_vars, result.model.num_constraints)
    return partition, result, summary


def cmd_synth(args) -> int:
    spec = load_config(args.config)
    counts = parse_grid(args.grid, spec)
    horizon = parse_horizon(args.horizon, spec)
    out = _out_dir(args.out)
    partition, result, summary = run_synth(spec, counts, horizon, args.mode, workers_from_env())
    _write(out, "barrier.csv", result.barrier.to_csv())
    _write(out, "controller.csv", result.controller.to_csv())
    _write(out, "partition.csv", partition.to_csv())
    _write(out, "solution.json", solution_json(result))
    _write(out, "summary.json", _dump_json(summary.stable_dict()))
    _write(out, "timings.json", _dump_json({**summary.timing_dict(), **result.timings}))
    if args.dump_bounds:
        _write(out, "bounds.csv", result.bounds.to_csv())
    if args.dump_lp:
        _write(out, "model.mps", result.model.to_mps())
    print(f"{spec.name}: K={partition.K} eta={summary.eta:.6g} beta={summary.beta:.6g} "
          f"p_safe={summary.p_safe:.6f}")
    return EXIT_OK


def read_controller(path: str, spec: SystemSpec):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"controller not found: {path} ({exc.strerror})") from None
    try:
        return controller_from_csv(text, spec.control_box)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"bad controller file: {exc}") from None


def matched_partition(spec: SystemSpec, grid: str | None, controller) -> Partition:
    """Partition from --grid, else from the controller's grid header; sizes must agree."""
    if grid is None and controller.grid_counts:
        counts = tuple(controller.grid_counts)
        if len(counts) != spec.n:
            raise CliError(EXIT_MISMATCH, f"partition mismatch: controller grid {counts} is not {spec.n}-dimensional")
    else:
        counts = parse_grid(grid, spec)
    if controller.grid_counts and tuple(controller.grid_counts) != counts:
        raise CliError(EXIT_MISMATCH, f"partition mismatch: controller grid {tuple(controller.grid_counts)} "
                                      f"vs requested {counts}")
    partition = make_partition(spec, counts)
    if controller.controls.shape != (partition.K, spec.m):
        raise CliError(EXIT_MISMATCH, f"partition mismatch: controller has {controller.controls.shape[0]} rows of "
                                      f"{controller.controls.shape[1]} controls, partition needs {partition.K} of {spec.m}")
    return partition


def cmd_simulate(args) -> int:
    spec = load_config(args.config)
    controller = read_controller(args.controller, spec)
    partition = matched_partition(spec, args.grid, controller)
    if args.trials < 1 or args.steps < 0:
        raise CliError(EXIT_USAGE, "--trials must be >= 1 and --steps >= 0")
    out = _out_dir(args.out)
    report, traj = simulate(spec, partition, controller, trials=args.trials, steps=args.steps, seed=args.seed,
                            record=True)
    doc = {k: v for k, v in report.to_dict().items() if k != "exit_times"}
    doc["lower_bound_95"] = binomial_bound(report)
    _write(out, "mc_report.json", _dump_json(doc))
    _write(out, "exit_times.csv", "trial,exit_step\n" + "".join(f"{t},{int(e)}\n"
                                                               for t, e in enumerate(report.exit_times)))
    if args.trajectories:
        _write(out, "trajectories.csv", traj.to_csv(report.exit_times))
    print(f"{spec.name}: {report.violations}/{report.trials} violations, empirical safety "
          f"{report.empirical_safety:.4f}, 95% lower bound {doc['lower_bound_95']:.4f}")
    return EXIT_OK


def cmd_check(args) -> int:
    spec = load_config(args.config)
    controller = read_controller(args.controller, spec)
    partition = matched_partition(spec, args.grid, controller)
    try:
        barrier = barrier_from_csv(Path(args.barrier).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"barrier not found: {args.barrier} ({exc.strerror})") from None
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"bad barrier file: {exc}") from None
    try:
        report = check_certificate(spec, partition, barrier, controller, args.samples, args.seed)
    except PartitionError as exc:
        raise CliError(EXIT_MISMATCH, str(exc)) from None
    print(report.describe())
    return EXIT_OK if report.passed else EXIT_FAIL


TABLE_COLUMNS = ("name", "K", "grid_counts", "eta", "beta", "p_safe", "synth_seconds", "bound_seconds",
                 "lp_variables", "lp_constraints", "mc_empirical", "mc_lower_bound", "error")


def table_rows(names, horizon: str | None, trials: int, steps: int, seed: int, workers: int):
    for name in names:
        spec = load_config(name)
        h = parse_horizon(horizon, spec)
        for counts in sorted(spec.grids, key=lambda g: math.prod(g)):
            try:
                partition, result, summary = run_synth(spec, counts, h, "affine", workers)
                report = simulate(spec, partition, result.controller, trials=trials, steps=steps, seed=seed)
                summary.mc_empirical = report.empirical_safety
                summary.mc_lower_bound = binomial_bound(report)
                yield {**asdict(summary), "grid_counts": "x".join(map(str, counts)), "error": ""}
            except (CliError, ArithmeticError, ValueError, RuntimeError) as exc:
                logging.getLogger(__name__).warning("%s %s failed: %s", name, counts, exc)
                yield {"name": spec.name, "grid_counts": "x".join(map(str, counts)), "error": str(exc)}


def cmd_table(args) -> int:
    if not args.bench:
        raise CliError(EXIT_USAGE, "config not found: empty benchmark name")
    names = BENCHMARKS if args.bench == "all" else [n for n in args.bench.split(",")]
    for n in names:
        if not n:
            raise CliError(EXIT_USAGE, "config not found: empty benchmark name")
        load_config(n)
    out = _out_dir(args.out)
    buf = io.StringIO()
    w = csv.DictWriter(buf, TABLE_COLUMNS, lineterminator="\n", restval="")
    w.writeheader()
    for row in table_rows(names, args.horizon, args.trials, args.steps, args.seed, workers_from_env()):
        w.writerow(row)
        print(",".join(str(row.get(c, "")) for c in TABLE_COLUMNS), flush=True)
    _write(out, "table.csv", buf.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pwcbf", description="Piecewise-constant stochastic barrier synthesis")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize a barrier and controller")
    s.add_argument("--config", required=True, help="config file or shipped benchmark name")
    s.add_argument("--grid", help="cells per dimension, e.g. 10,10 (default: first grid in the config)")
    s.add_argument("--horizon", help="steps N or 'infinite' (default: from the config)")
    s.add_argument("--mode", choices=("affine", "constant"), default="affine")
    s.add_argument("--out", required=True)
    s.add_argument("--dump-bounds", action="store_true", help="also write bounds.csv")
    s.add_argument("--dump-lp", action="store_true", help="also write the final LP as model.mps")
    s.set_defaults(func=cmd_synth)

    m = sub.add_parser("simulate", help="Monte Carlo runs of a synthesized controller")
    m.add_argument("--config", required=True)
    m.add_argument("--controller", required=True)
    m.add_argument("--grid")
    m.add_argument("--trials", type=int, default=500)
    m.add_argument("--steps", type=int, default=50)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.add_argument("--trajectories", action="store_true", help="also write trajectories.csv")
    m.set_defaults(func=cmd_simulate)

    c = sub.add_parser("check", help="sampled exact-kernel re-check of a certificate")
    c.add_argument("--config", required=True)
    c.add_argument("--barrier", required=True)
    c.add_argument("--controller", required=True)
    c.add_argument("--grid")
    c.add_argument("--samples", type=int, default=64)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_check)

    t = sub.add_parser("table", help="synthesize and simulate every configured grid")
    t.add_argument("--bench", default="all", help="'all', a benchmark name, or a comma-separated list")
    t.add_argument("--horizon")
    t.add_argument("--trials", type=int, default=500)
    t.add_argument("--steps", type=int, default=50)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_table)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
