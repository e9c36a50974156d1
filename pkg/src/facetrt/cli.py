"""Command-line front end.

Verbs: run, compare, oracle, report-discretization, timing, list-scenarios.
Exit codes: 0 success, 2 validation error, 3 numerical-domain error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def build_parser():
    p = argparse.ArgumentParser(
        prog="facetrt",
        description=(
            "Near-field bistatic scattering from faceted PEC bodies: ray "
            "tracing with uniform edge, corner and second-order diffraction, "
            "validated against built-in analytical series references."
        ),
    )
    sub = p.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="execute a scenario sweep")
    run.add_argument("scenario", help="bundled scenario name or scenario file path")
    run.add_argument("-o", "--output", default="out", help="output directory")
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--no-figures", action="store_true")
    run.add_argument("--compare-oracle", action="store_true",
                     help="also compute the analytical reference and RMSE table")
    run.add_argument("--dump-paths", action="store_true",
                     help="write the path census dump for the first observation")

    cmp_ = sub.add_parser("compare", help="RMSE of a sweep CSV vs a reference")
    cmp_.add_argument("sweep", help="sweep CSV path")
    cmp_.add_argument("reference",
                      help="reference CSV path, or 'oracle:<scenario-name>'")
    cmp_.add_argument("-o", "--output", default=None,
                      help="directory for the delta CSV and figures")

    orc = sub.add_parser("oracle", help="evaluate an analytical reference sweep")
    orc.add_argument("body", choices=["cylinder", "sphere"])
    orc.add_argument("--radius-wl", type=float, required=True)
    orc.add_argument("--distance-wl", type=float, required=True)
    orc.add_argument("--step-deg", type=float, default=0.5)
    orc.add_argument("--frequency-hz", type=float, default=2.0e9)
    orc.add_argument("--polarization", choices=["HH", "VV"], default="HH")
    orc.add_argument("-o", "--output", default="out")

    disc = sub.add_parser("report-discretization",
                          help="facet-size adequacy of a mesh at a frequency")
    disc.add_argument("mesh", help="mesh file (text or binary)")
    disc.add_argument("frequency_hz", type=float)
    disc.add_argument("--curvature-radius-m", type=float, default=None)

    tim = sub.add_parser("timing", help="wall-clock table over mechanism sets")
    tim.add_argument("scenarios", nargs="+", help="scenario names or paths")
    tim.add_argument("--workers", type=int, default=None)
    tim.add_argument("-o", "--output", default=None, help="optional CSV path")

    sub.add_parser("list-scenarios", help="list bundled scenarios")
    return p


def _cmd_run(args):
    from facetrt.scenario import load_scenario
    from facetrt.sweep import compare, emit_outputs, format_rmse_table, oracle_sweep, run_sweep

    scenario = load_scenario(args.scenario)
    result = run_sweep(scenario, workers=args.workers)
    reference = None
    if args.compare_oracle:
        if scenario.oracle_kind == "none":
            print("no analytical reference for this scenario", file=sys.stderr)
            return EXIT_VALIDATION
        reference = oracle_sweep(scenario)
    written = emit_outputs(result, args.output, figures=not args.no_figures,
                           reference=reference)
    if reference is not None:
        table, _ = compare(result, reference, regions=scenario.regions)
        print(format_rmse_table([(scenario.name, table)]))
    if args.dump_paths:
        from facetrt.paths import dump_paths, find_cascade_paths, find_vertex_paths, \
            trace_direct_and_reflections
        from facetrt.sweep import SweepEngine

        eng = SweepEngine(scenario)
        obs0 = eng.obs[0]
        paths = trace_direct_and_reflections(
            eng.source, eng.mesh, obs0, scenario.toggles.reflection_order, occ=eng.occ
        )
        paths += find_vertex_paths(eng.corners, eng.source, obs0, occ=eng.occ)
        paths += find_cascade_paths(eng.wedges, eng.corners, eng.source, obs0,
                                    eng.mesh, scenario.toggles, occ=eng.occ)
        dump_path = Path(args.output) / f"{scenario.name}_paths.txt"
        with open(dump_path, "w", encoding="utf-8") as fh:
            dump_paths(paths, fh)
        written.append(dump_path)
    for w in written:
        print(f"wrote {w}")
    print(f"stages (s): " + ", ".join(
        f"{k}={v:.2f}" for k, v in result.stage_seconds.items()))
    return EXIT_OK


def _cmd_compare(args):
    from facetrt.plotting import render_compare_figures
    from facetrt.sweep import compare, format_rmse_table, oracle_result, read_csv

    if str(args.reference).startswith("oracle:"):
        from facetrt.scenario import load_scenario

        scenario = load_scenario(str(args.reference).split(":", 1)[1])
        reference = oracle_result(scenario)
    else:
        reference = args.reference
    table, deltas = compare(args.sweep, reference)
    label = Path(args.sweep).stem
    print(format_rmse_table([(label, table)]))
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"{label}_delta.csv", "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["region", "angle_deg", "delta_db"])
            for name, (ang, delta) in deltas.items():
                for a, d in zip(ang, delta):
                    wr.writerow([name, f"{a:.17g}", f"{d:.17g}"])
        cols, _ = read_csv(args.sweep)

        class _Shim:
            angles_deg = cols["angle_deg"]
            observation = cols["angle_deg"]
            es_db = cols["Es_db"]
            et_db = cols["Et_db"]

        render_compare_figures(_Shim(), None, deltas, out, label)
        print(f"wrote {out}")
    return EXIT_OK


def _cmd_oracle(args):
    from facetrt.scenario import parse_scenario
    from facetrt.sweep import emit_outputs, oracle_result

    body = args.body
    geometry = "prism_cylinder" if body == "cylinder" else "fibonacci_sphere"
    filler = "sides = 8" if body == "cylinder" else "points = 16"
    text = f"""
[scenario]
name = {body}
frequency_hz = {args.frequency_hz}

[geometry]
kind = {geometry}
{filler}
radius_wl = {args.radius_wl}

[source]
kind = plane_wave
polarization = {args.polarization}

[observation]
kind = circle
radius_wl = {args.distance_wl}
step_deg = {args.step_deg}

[oracle]
kind = {body}
"""
    scenario = parse_scenario(text)
    result = oracle_result(scenario)
    for w in emit_outputs(result, args.output, figures=False):
        print(f"wrote {w}")
    print(f"truncation order: {result.metadata['oracle_truncation']}, "
          f"certificate change: {result.metadata['oracle_certificate_change']:.2e}")
    return EXIT_OK


def _cmd_report_discretization(args):
    from facetrt.geometry import discretization_report, load_mesh
    from scipy.constants import c as c0

    mesh = load_mesh(args.mesh)
    lam = c0 / args.frequency_hz
    report = discretization_report(mesh, lam, curvature_radius_hint=args.curvature_radius_m)
    print(report)
    return EXIT_OK


def _cmd_timing(args):
    from facetrt.sweep import format_timing_table, timing_report

    rows = timing_report(args.scenarios, workers=args.workers)
    print(format_timing_table(rows))
    if args.output:
        with open(args.output, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            labels = list(rows[0][1].keys()) if rows else []
            wr.writerow(["geometry"] + labels)
            for name, cells in rows:
                wr.writerow([name] + [f"{cells[c]['seconds']:.4f}" for c in labels])
        print(f"wrote {args.output}")
    return EXIT_OK


def _cmd_list(_args):
    from facetrt.scenario import bundled_scenario_names

    for name in bundled_scenario_names():
        print(name)
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "compare": _cmd_compare,
        "oracle": _cmd_oracle,
        "report-discretization": _cmd_report_discretization,
        "timing": _cmd_timing,
        "list-scenarios": _cmd_list,
    }
    try:
        return handlers[args.verb](args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
