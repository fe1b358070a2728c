"""Command-line front end.

Exit codes: 0 success, 1 domain failure (infeasible run, solver failure,
missing or malformed scenario, oracle bound exceeded), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import reporting
from .orchestrate import SolverOptions, run_noris, run_protocol, run_quantized
from .power import expectation_oracle_suite, mr_speed
from .scenario import ScenarioError, default_scenario, load_scenario, scenario_to_dict

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
OUT_DIR_ENV = "RISWPT_OUT_DIR"
DEFAULT_SEED = 42


class UsageError(Exception):
    pass


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", type=Path, default=None, help="JSON scenario file (default: built-in scenario)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed for every random draw (default 42)")
    p.add_argument("--out-dir", type=Path, default=None,
                   help=f"output directory (default: ${OUT_DIR_ENV} or ./riswpt-out)")


def _add_solver(p: argparse.ArgumentParser) -> None:
    p.add_argument("--m", type=int, default=None, help="override the number of RIS elements")
    p.add_argument("--max-segment-length", type=float, default=None,
                   help="override the path-discretization segment cap in metres")
    p.add_argument("--reduced", action="store_true", help="shorthand for --max-segment-length 2")
    p.add_argument("--n-max", type=int, default=None, help="outer iteration cap")
    p.add_argument("--cone-tol", type=float, default=None)
    p.add_argument("--mu-schedule", choices=("capped", "jump"), default=None)
    p.add_argument("--no-plots", action="store_true", help="skip SVG rendering")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="riswpt", description="RIS-assisted UAV wireless power transfer planner")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="optimize one mission and write a CSV bundle")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--protocol", choices=("fhb", "pd"), default="fhb")
    p.add_argument("--bits", type=int, default=None, help="also run the b-bit quantized-phase baseline")
    p.add_argument("--no-ris", action="store_true", help="direct link only")

    p = sub.add_parser("sweep-m", help="UAV energy versus number of RIS elements")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--m-values", type=_int_list, default=[0, 8, 16])
    p.add_argument("--protocols", default="fhb,pd")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("sweep-ereq", help="UAV energy and mission time versus the per-sensor requirement")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--ereq-mj", type=_float_list, default=[0.02, 0.1, 0.2])
    p.add_argument("--protocols", default="fhb,pd")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("validate", help="check a scenario file and print derived constants")
    _add_common(p)

    p = sub.add_parser("oracle-check", help="closed-form mean power against sampled channels")
    _add_common(p)
    p.add_argument("--samples", type=float, default=1e6, help="channel draws per case (default 1e6)")
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--bound", type=float, default=None,
                   help="max relative error (default 0.01 at 1e6 draws, scaled by 1/sqrt(N) up to 0.1)")
    return ap


# ---------------------------------------------------------------------------
# helpers


def out_dir(args) -> Path:
    if args.out_dir is not None:
        return args.out_dir
    return Path(os.environ.get(OUT_DIR_ENV, "riswpt-out"))


def load_cfg(args):
    if args.scenario is None:
        cfg = default_scenario()
    else:
        cfg = load_scenario(args.scenario)
    changes = {}
    if getattr(args, "m", None) is not None:
        if args.m < 0:
            raise UsageError("--m must be >= 0")
        changes["ris_elements"] = args.m
    seg = getattr(args, "max_segment_length", None)
    if getattr(args, "reduced", False):
        seg = 2.0 if seg is None else seg
    if seg is not None:
        changes["max_segment_length"] = seg
    return cfg.with_updates(**changes).validate() if changes else cfg


def solver_options(args) -> SolverOptions:
    changes = {}
    if args.n_max is not None:
        changes["n_max"] = args.n_max
    if args.cone_tol is not None:
        changes["cone_tol"] = args.cone_tol
        changes["cone_tol_max"] = max(args.cone_tol, SolverOptions.cone_tol_max)
    if args.mu_schedule is not None:
        changes["mu_schedule"] = args.mu_schedule
    try:
        return replace(SolverOptions(), **changes).validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def mission_time(traj, cfg) -> float:
    if traj.protocol == "PD":
        return float(traj.durations.sum())
    return float(traj.durations.sum() + traj.segment_lengths.sum() / mr_speed(cfg.rotor))


def _emit(report, cfg, dest: Path, plots: bool, extra=None) -> None:
    reporting.write_bundle(report, cfg, dest)
    if extra:
        (dest / "summary.txt").write_text(reporting.summary_text(report, extra))
    if plots:
        reporting.plot_bundle(dest, cfg.sensor_array)


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    cfg = load_cfg(args)
    opts = solver_options(args)
    if args.bits is not None and args.bits < 1:
        raise UsageError("--bits must be >= 1")
    if args.no_ris:
        cfg = cfg.with_updates(ris_elements=0)
        report = run_noris(cfg, opts, args.protocol)
    else:
        report = run_protocol(cfg, opts, args.protocol)
    dest = out_dir(args)
    extra = {"mission_time_s": f"{mission_time(report.trajectory, cfg):.4f}"} if report.trajectory else {}
    code = EXIT_OK if (report.ok and report.feasible) else EXIT_FAIL
    if args.bits is not None and report.ok and cfg.ris_elements > 0 and not args.no_ris:
        qr = run_quantized(cfg, opts, args.bits, args.protocol, continuous=report)
        extra.update({
            "quantization_bits": args.bits,
            "continuous_energy_J": f"{qr.baseline.energy:.6f}",
            "quantized_energy_J": f"{qr.quantized.energy:.6f}",
            "quantized_over_continuous": f"{qr.ratio:.8f}",
            "quantized_feasible": qr.quantized.feasible,
        })
        reporting.write_bundle(qr.quantized, cfg, dest / f"quantized_{args.bits}bit")
        print(f"{args.bits}-bit quantized / continuous energy ratio: {qr.ratio:.6f}")
        if not (qr.quantized.ok and qr.quantized.feasible):
            code = EXIT_FAIL
    _emit(report, cfg, dest, not args.no_plots, extra)
    print(reporting.summary_text(report, extra), end="")
    print(f"bundle written to {dest}")
    if code != EXIT_OK:
        print(f"error: run did not finish feasibly: {report.status} {report.message}", file=sys.stderr)
    return code


def _sweep_cell(job):
    cfg, opts, protocol = job
    if cfg.ris_elements == 0:
        r = run_noris(cfg, opts, protocol)
    else:
        r = run_protocol(cfg, opts, protocol)
    return {"energy": r.energy, "status": r.status, "feasible": r.feasible, "iterations": len(r.rows),
            "mission_time": mission_time(r.trajectory, cfg) if r.trajectory is not None else math.nan,
            "converged": r.converged()}


def _run_cells(jobs, n_workers: int) -> list[dict]:
    if n_workers < 1:
        raise UsageError("--jobs must be >= 1")
    if n_workers == 1 or len(jobs) == 1:
        return [_sweep_cell(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_sweep_cell, jobs))


def _protocols(text: str) -> list[str]:
    ps = [p.strip().lower() for p in text.split(",") if p.strip()]
    if not ps or any(p not in ("fhb", "pd") for p in ps):
        raise UsageError(f"--protocols must list fhb and/or pd, got {text!r}")
    return ps


def cmd_sweep_m(args) -> int:
    cfg = load_cfg(args)
    opts = solver_options(args)
    protos = _protocols(args.protocols)
    if any(m < 0 for m in args.m_values):
        raise UsageError("--m-values must be >= 0")
    cells = [(m, p) for m in args.m_values for p in protos]
    res = _run_cells([(cfg.with_updates(ris_elements=m), opts, p) for m, p in cells], args.jobs)
    energy = {c: r["energy"] for c, r in zip(cells, res)}
    rows = []
    for (m, p), r in zip(cells, res):
        flag = ""
        if (m, "fhb") in energy and (m, "pd") in energy:
            flag = int(energy[(m, "pd")] < energy[(m, "fhb")])
        rows.append((m, p, r["energy"], r["status"], int(r["feasible"]), r["iterations"], int(r["converged"]),
                     flag))
    dest = out_dir(args)
    dest.mkdir(parents=True, exist_ok=True)
    reporting.write_csv(dest / "energy_vs_m.csv", ("M", "protocol", "energy_J", "status", "feasible",
                                                   "iterations", "converged", "pd_below_fhb"), rows)
    if not args.no_plots:
        ms = sorted(set(args.m_values))
        series = [(p.upper(), ms, [energy[(m, p)] for m in ms]) for p in protos]
        reporting.plot_series(dest / "energy_vs_m.svg", series, "RIS elements M", "UAV energy (J)")
    failed = [c for c, r in zip(cells, res) if r["status"] != "ok" or not r["feasible"]]
    for p in protos:
        e = [energy[(m, p)] for m in sorted(set(args.m_values))]
        mono = all(b < a for a, b in zip(e, e[1:]))
        print(f"{p.upper()}: energy strictly decreasing in M: {'yes' if mono else 'no'}  "
              + "  ".join(f"M={m}:{energy[(m, p)]:.2f}J" for m in sorted(set(args.m_values))))
    for m in sorted(set(args.m_values)):
        if (m, "fhb") in energy and (m, "pd") in energy:
            print(f"M={m}: PD below FHB: {'yes' if energy[(m, 'pd')] < energy[(m, 'fhb')] else 'no'}")
    for c in failed:
        print(f"error: cell M={c[0]} protocol={c[1]} did not finish feasibly", file=sys.stderr)
    print(f"wrote {dest / 'energy_vs_m.csv'}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_sweep_ereq(args) -> int:
    cfg = load_cfg(args)
    opts = solver_options(args)
    protos = _protocols(args.protocols)
    if any(not v > 0 for v in args.ereq_mj):
        raise UsageError("--ereq-mj values must be positive")
    K = cfg.num_sensors
    cells = [(e, p) for e in args.ereq_mj for p in protos]
    res = _run_cells([(cfg.with_updates(sensor_energy_req=(e * 1e-3,) * K), opts, p) for e, p in cells], args.jobs)
    rows = [(e, p, r["energy"], r["mission_time"], r["status"], int(r["feasible"]), r["iterations"])
            for (e, p), r in zip(cells, res)]
    dest = out_dir(args)
    dest.mkdir(parents=True, exist_ok=True)
    reporting.write_csv(dest / "energy_vs_ereq.csv", ("ereq_mJ", "protocol", "energy_J", "mission_time_s",
                                                      "status", "feasible", "iterations"), rows)
    if not args.no_plots:
        xs = sorted(set(args.ereq_mj))
        by = {(e, p): r for (e, p), r in zip(cells, res)}
        series = [(p.upper(), xs, [by[(e, p)]["energy"] for e in xs]) for p in protos]
        reporting.plot_series(dest / "energy_vs_ereq.svg", series, "required energy per sensor (mJ)",
                              "UAV energy (J)")
    for r in rows:
        print(f"{r[1].upper()} ereq={r[0]:g} mJ: energy {r[2]:.2f} J, mission time {r[3]:.2f} s, {r[4]}")
    failed = [r for r in rows if r[4] != "ok" or not r[5]]
    print(f"wrote {dest / 'energy_vs_ereq.csv'}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_cfg(args)
    v = mr_speed(cfg.rotor)
    print(f"scenario ok: {cfg.num_sensors} sensors, M={cfg.ris_elements}, "
          f"segment cap {cfg.max_segment_length} m")
    print(f"maximum-range speed: {v:.4f} m/s")
    return EXIT_OK


def oracle_bound(n_samples: int) -> float:
    """Relative-error bound: 1% at 1e6 draws, widened with the standard error, capped at 10%."""
    return float(min(0.1, 0.01 * math.sqrt(max(1e6 / n_samples, 1.0))))


def cmd_oracle_check(args) -> int:
    n = int(args.samples)
    if n < 1 or args.cases < 1:
        raise UsageError("--samples and --cases must be >= 1")
    bound = oracle_bound(n) if args.bound is None else args.bound
    cfg = load_cfg(args)
    cases = expectation_oracle_suite(cfg, n_cases=args.cases, n_samples=n, seed=args.seed)
    errs = np.array([c.rel_error for c in cases])
    worst = cases[int(np.argmax(errs))]
    dest = out_dir(args)
    dest.mkdir(parents=True, exist_ok=True)
    reporting.write_csv(dest / "oracle.csv", ("case", "M", "x_m", "y_m", "sensor", "analytic_W", "sampled_W",
                                              "std_error_W", "rel_error"),
                        [(i, c.elements, c.position.real, c.position.imag, c.sensor + 1, c.analytic, c.sampled,
                          c.std_error, c.rel_error) for i, c in enumerate(cases)])
    print(f"cases: {len(cases)}  draws per case: {n}  seed: {args.seed}")
    print(f"max relative error: {errs.max():.6e}  (bound {bound:g})")
    if errs.max() < bound:
        return EXIT_OK
    dump = {"M": worst.elements, "uav": [worst.position.real, worst.position.imag], "sensor": worst.sensor + 1,
            "theta": worst.theta.tolist(), "analytic_W": worst.analytic, "sampled_W": worst.sampled,
            "scenario": scenario_to_dict(cfg)}
    print("worst case:\n" + json.dumps(dump, indent=2), file=sys.stderr)
    return EXIT_FAIL


COMMANDS = {
    "run": cmd_run,
    "sweep-m": cmd_sweep_m,
    "sweep-ereq": cmd_sweep_ereq,
    "validate": cmd_validate,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for bad usage
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ScenarioError as exc:
        print(f"error: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
