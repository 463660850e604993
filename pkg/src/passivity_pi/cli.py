"""Command-line entry point.

    passivity-pi run SCENARIO.yaml [--out DIR] [--set key=value ...]
    passivity-pi preset NAME [--out DIR] [--set key=value ...]
    passivity-pi props --seed N --count N [--out DIR]

Exit codes: 0 ok, 2 configuration error, 3 numerical failure. Runs write
``trace.csv``, ``summary.json`` and ``manifest.json`` into the output
directory (``--out``, else ``$PASSIVITY_PI_OUT/<name>``, else
``runs/<name>``).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, apply_overrides, load_document, parse_yaml, preset_names, preset_text, to_scenario
from .metrics import MetricError
from .mmc import InfeasibleReference
from .sim import (
    Scenario,
    SimulationDiverged,
    SimulationTrace,
    UnknownPlant,
    augmented_output_series,
    dissipation_check,
    lyapunov_monitor,
    run_closed_loop,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
OUT_ENV = "PASSIVITY_PI_OUT"
CSV_FORMAT = "%.17g"

log = logging.getLogger("passivity_pi")


def default_out_dir(name: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "runs")) / (name or "scenario")


def write_trace_csv(trace: SimulationTrace, path: Path) -> list[str]:
    """Write every trace column with 17 significant digits (round-trip exact)."""
    cols = trace.columns()
    names = list(cols)
    data = np.column_stack([np.asarray(cols[k], dtype=float) for k in names])
    np.savetxt(path, data, fmt=CSV_FORMAT, delimiter=",", header=",".join(names), comments="")
    return names


def read_trace_csv(path: Path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        names = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {k: data[:, j] for j, k in enumerate(names)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def plant_summary(trace: SimulationTrace, scenario: Scenario) -> dict:
    if scenario.plant == "boost_pfc":
        from .boost import summarize
    elif scenario.plant == "mmc":
        from .mmc import summarize
    else:
        err = np.linalg.norm(trace.x_err, axis=1)
        return dict(plant=scenario.plant, error_initial=float(err[0]), error_final=float(err[-1]))
    return summarize(trace, scenario)


def monitor_summary(trace: SimulationTrace, scenario: Scenario) -> dict:
    out = dict(V_max=float(np.nanmax(trace.V)), W_max_step_increase=float(max(np.max(np.diff(trace.W), initial=0.0), 0.0)))
    mon = scenario.monitors
    cert = trace.certificate
    if cert is None:
        return out
    out["certificate_valid"] = bool(cert.valid)
    if mon.get("dissipation"):
        if scenario.record_every != 1:
            out["dissipation"] = "skipped: needs record_every = 1"
        else:
            rep = dissipation_check(trace, cert.P)
            out["dissipation"] = dict(max_excess=rep.max_excess, tolerance=rep.tolerance, violations=rep.violations)
    if mon.get("lyapunov") and trace.gains is not None:
        rep = lyapunov_monitor(trace, cert.P, trace.gains.Ki)
        out["lyapunov"] = dict(W0=rep.W0, max_increase=rep.max_increase, ok=rep.ok())
    if mon.get("augmented_output") and cert.valid:
        rep = augmented_output_series(trace, cert)
        out["augmented_output"] = dict(
            initial=float(rep.norms[0]),
            final=float(rep.norms[-1]),
            min_sigma=rep.min_sigma,
            deficient_samples=int(rep.deficient_times.size),
        )
    return out


def execute(doc: dict, out_dir: Path | None, argv: list[str]) -> int:
    scenario = to_scenario(doc)
    out = out_dir or default_out_dir(scenario.name)
    t0 = time.perf_counter()
    trace = run_closed_loop(scenario)
    runtime = time.perf_counter() - t0
    summary = dict(name=scenario.name, runtime_s=runtime, samples=len(trace))
    summary.update(plant_summary(trace, scenario))
    summary["monitors"] = monitor_summary(trace, scenario)
    summary["events"] = summary.get("events", [dict(t=t, description=d) for t, _, d in trace.events])

    out.mkdir(parents=True, exist_ok=True)
    columns = write_trace_csv(trace, out / "trace.csv")
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2) + "\n")
    manifest = dict(
        package_version=__version__,
        python=platform.python_version(),
        numpy=np.__version__,
        argv=argv,
        seed=scenario.seed,
        columns=columns,
        config=doc,
    )
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2) + "\n")
    print(json.dumps(_jsonable(summary), indent=2))
    print(f"wrote {out}", file=sys.stderr)
    return EXIT_OK


def run_props(seed: int, count: int, out_dir: Path | None) -> int:
    from .props import run_property_suite

    report = run_property_suite(seed, count)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "props.json").write_text(json.dumps(_jsonable(report.to_dict()), indent=2) + "\n")
    print(json.dumps(_jsonable(report.summary()), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="passivity-pi", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_opts(p):
        p.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV}/<name> or runs/<name>)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a dotted config key, e.g. controller.mode=tanh")

    p_run = sub.add_parser("run", help="run a scenario file")
    p_run.add_argument("scenario", type=Path)
    scenario_opts(p_run)

    p_pre = sub.add_parser("preset", help="run a bundled preset")
    p_pre.add_argument("name", nargs="?", help="preset name; omit to list presets")
    scenario_opts(p_pre)

    p_props = sub.add_parser("props", help="randomized passivity property suite")
    p_props.add_argument("--seed", type=int, default=0)
    p_props.add_argument("--count", type=int, default=100)
    p_props.add_argument("--out", type=Path)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "props":
            if args.count < 1 or args.seed < 0:
                raise ConfigError("props: --count must be >= 1 and --seed >= 0")
            return run_props(args.seed, args.count, args.out)
        if args.command == "preset":
            if args.name is None:
                print("\n".join(preset_names()))
                return EXIT_OK
            doc = apply_overrides(parse_yaml(preset_text(args.name)), args.overrides)
        else:
            doc = load_document(args.scenario, args.overrides)
        return execute(doc, args.out, argv)
    except (SimulationDiverged, InfeasibleReference, MetricError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, UnknownPlant, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
