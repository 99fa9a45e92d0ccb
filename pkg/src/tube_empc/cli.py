"""Command-line front end: ``rci``, ``simulate``, ``verify`` and ``sweep``.

Exit codes:

==  ==========================================================
0   success
1   verification ran and at least one selected check failed
2   scenario, configuration or set-computation error
3   tube OCP infeasible in the middle of a run
4   disturbance sample outside W
5   unknown selector, or too few horizons to judge it
6   tube OCP infeasible at the initial state
==  ==========================================================
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .closedloop import DisturbanceSource, fmt, run, tube_containment
from .errors import (AssumptionViolation, DisturbanceError, InitialInfeasibleError,
                     MidRunInfeasibleError, ScenarioError, SelectorError, TubeMPCError)
from .rci import rpi_certificate, verify_rci
from .scenario import SCHEMA_VERSION, build_system, load_scenario

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_MIDRUN = 3
EXIT_DISTURBANCE = 4
EXIT_SELECTOR = 5
EXIT_INITIAL = 6

EXIT_CODES = {
    "ok": EXIT_OK, "verification_failed": EXIT_VERIFY_FAILED, "config": EXIT_CONFIG,
    "midrun_infeasible": EXIT_MIDRUN, "disturbance": EXIT_DISTURBANCE,
    "selector": EXIT_SELECTOR, "initial_infeasible": EXIT_INITIAL,
}

DIST_FLAGS = {"zero": "zero", "uniform": "uniform_seeded", "vertex": "vertex_extreme",
              "file": "explicit_sequence"}

log = logging.getLogger("tube_empc")


def write_atomic(path: Path, text: str):
    """Write via a temporary file and rename, so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path: Path, data: dict):
    data = dict(data)
    data.setdefault("schema_version", SCHEMA_VERSION)
    write_atomic(path, json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return str(v)


def rows_csv(reports, extra=()) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(list(analysis.CSV_COLUMNS) + list(extra))
    for r in reports:
        row = r.row()
        writer.writerow([_cell(row[c]) for c in analysis.CSV_COLUMNS]
                        + [_cell(r.details.get(e)) for e in extra])
    return buf.getvalue()


def _out_dir(args, scn) -> Path:
    return Path(args.out or scn.output)


def _figures(args) -> bool:
    return not args.no_figures


def cmd_rci(args) -> int:
    scn = load_scenario(args.scenario)
    system = build_system(scn)
    out = _out_dir(args, scn)
    report = verify_rci(scn.model, system.omega, system.constraints, n_samples=args.samples,
                        seed=scn.seed)
    write_json(out / "omega.json", system.omega.to_dict())
    write_json(out / "zbar.json", system.z_bar.to_dict())
    write_json(out / "rci_report.json", {
        "scenario": scn.name,
        "spectral_radius": scn.model.spectral_radius,
        "omega_vertices": system.omega.vertices(),
        "certificate_min_slack": float(np.min(rpi_certificate(scn.model.A_K, system.omega, scn.W))),
        "sampled": report.to_dict(),
    })
    if _figures(args):
        from .plotting import plot_sets
        plot_sets(system.omega, scn.W, system.z_bar, str(out / "sets.png"))
    print(f"Omega: {system.omega!r}; worst sampled margin {report.worst_margin:.3g}")
    return EXIT_OK if report.holds else EXIT_VERIFY_FAILED


def _apply_overrides(scn, args):
    if getattr(args, "horizon", None):
        scn.N = args.horizon
    if getattr(args, "steps", None) is not None:
        scn.T = args.steps
    if getattr(args, "mode", None):
        scn.mode = args.mode
    if getattr(args, "variant", None):
        scn.variant = args.variant
    if getattr(args, "seed", None) is not None:
        scn.seed = args.seed
        scn.disturbance.seed = args.seed
    if getattr(args, "dist", None):
        kind = DIST_FLAGS[args.dist]
        seq = None
        if kind == "explicit_sequence":
            if not args.dist_file:
                raise ScenarioError("--dist file needs --dist-file")
            with open(args.dist_file) as fh:
                seq = json.load(fh)["sequence"]
        scn.disturbance = DisturbanceSource(kind, scn.seed, seq)
    scn.validate()


def cmd_simulate(args) -> int:
    scn = load_scenario(args.scenario)
    _apply_overrides(scn, args)
    system = build_system(scn)
    out = _out_dir(args, scn)
    problem = system.problem()
    try:
        lg = run(problem, system.x0(), scn.T, scn.disturbance, scn.W)
    except MidRunInfeasibleError as exc:
        if exc.log is not None:
            write_atomic(out / "log_prefix.csv", exc.log.to_csv())
        print(f"mid-run infeasibility at step {exc.step}", file=sys.stderr)
        return EXIT_MIDRUN
    write_atomic(out / "log.csv", lg.to_csv())
    summary = lg.summary()
    summary["tube_margin"] = tube_containment(lg, system.omega)
    summary["ross"] = system.ross().to_dict()
    write_json(out / "summary.json", summary)
    # timings are run metadata and kept out of the data files
    write_json(out / "run_meta.json", {"timing": lg.timing()})
    if _figures(args):
        from .plotting import plot_closed_loop
        plot_closed_loop(lg, system.omega, system.ross().zs, str(out / "closed_loop.png"))
    print(f"J_cl_T = {summary['jcl_nominal']:.10g} over {scn.T} steps")
    return EXIT_OK


def _selectors(text: str) -> list:
    if text in (None, "", "all"):
        return list(analysis.SELECTORS)
    names = [s.strip() for s in text.split(",") if s.strip()]
    unknown = [s for s in names if s not in analysis.SELECTORS]
    if unknown:
        raise SelectorError(f"unknown selector(s): {', '.join(unknown)}; "
                            f"choose from {', '.join(analysis.SELECTORS)} or all")
    return names


def _int_list(text):
    return [int(t) for t in text.split(",") if t.strip()] if text else None


def _run_sweep(args, selectors, enforce_arity: bool) -> int:
    scn = load_scenario(args.scenario)
    _apply_overrides(scn, args)
    N_list = _int_list(args.N_list) or list(scn.sweep["N_list"])
    T_list = _int_list(args.T_list) or list(scn.sweep["T_list"])
    seeds = _int_list(args.seeds) or list(scn.sweep["seeds"])
    if enforce_arity and len(set(N_list)) < 2:
        needy = [s for s in selectors if s in analysis.NEEDS_TWO_HORIZONS]
        if needy:
            raise SelectorError(f"{', '.join(needy)} need at least two horizons, got {N_list}")
    system = build_system(scn)
    bundle = analysis.sweep(system, N_list, T_list, seeds, selectors, jobs=args.jobs)
    out = _out_dir(args, scn)
    for name, reps in bundle.rows.items():
        extra = ("eps",) if name == "turnpike" else ()
        write_atomic(out / f"{name}.csv", rows_csv(reps, extra))
    write_json(out / "verdicts.json", {
        "scenario": scn.name, "N_list": N_list, "T_list": T_list, "seeds": seeds,
        "variant": scn.variant, "disturbance": scn.disturbance.kind,
        "passed": bundle.passed, "selectors": bundle.verdicts,
    })
    if _figures(args):
        from .plotting import plot_curves
        for name, verdict in bundle.verdicts.items():
            if verdict.get("curves"):
                plot_curves(name, verdict, str(out / f"{name}.png"))
    for name, verdict in bundle.verdicts.items():
        print(f"{name:14s} {'PASS' if verdict['passed'] else 'FAIL'}")
    return EXIT_OK if bundle.passed else EXIT_VERIFY_FAILED


def cmd_verify(args) -> int:
    return _run_sweep(args, _selectors(args.select), enforce_arity=True)


def cmd_sweep(args) -> int:
    code = _run_sweep(args, list(analysis.SELECTORS), enforce_arity=False)
    # a sweep reports verdicts but only fails on errors
    return EXIT_OK if code in (EXIT_OK, EXIT_VERIFY_FAILED) else code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tube-empc",
                                     description="Tube-based robust economic MPC toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True,
                       help="scenario JSON path or bundled name (e1, e2, equilibrium)")
        p.add_argument("--out", help="output directory (default: scenario 'output')")
        p.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    def run_opts(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--horizon", type=int, help="prediction horizon N")
        p.add_argument("--steps", type=int, help="closed-loop steps T")
        p.add_argument("--mode", choices=("tc", "uc"))
        p.add_argument("--variant", choices=("nominal", "integral", "worst_case"))
        p.add_argument("--dist", choices=tuple(DIST_FLAGS))
        p.add_argument("--dist-file", help="JSON file with a 'sequence' list (for --dist file)")

    p = sub.add_parser("rci", help="compute Omega and the tightened constraints")
    common(p)
    p.add_argument("--samples", type=int, default=10_000)
    p.set_defaults(func=cmd_rci)

    p = sub.add_parser("simulate", help="run the closed loop once")
    common(p)
    run_opts(p)
    p.set_defaults(func=cmd_simulate)

    for name, func, helptext in (("verify", cmd_verify, "check selected inequalities"),
                                 ("sweep", cmd_sweep, "run every check over the sweep grid")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        run_opts(p)
        if name == "verify":
            p.add_argument("--select", default="all",
                           help=f"comma list of {', '.join(analysis.SELECTORS)} or all")
        p.add_argument("--N-list", dest="N_list", help="comma list of horizons")
        p.add_argument("--T-list", dest="T_list", help="comma list of run lengths")
        p.add_argument("--seeds", help="comma list of seeds")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SelectorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SELECTOR
    except DisturbanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DISTURBANCE
    except InitialInfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INITIAL
    except (AssumptionViolation, TubeMPCError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
