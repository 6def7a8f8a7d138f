"""Command-line front end.

Every subcommand reads a scenario (the shipped baseline when no path is
given), applies ``--set`` overrides, runs one analysis and writes its
outputs plus ``manifest.json`` into ``<out>/<command>-<hash prefix>/``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import r0, r0_spectral
from .bifurcation.center_manifold import (
    CenterManifoldWeights,
    alpha_c,
    center_manifold_coefficients,
    critical_alpha,
)
from .bifurcation.continuation import ContinuationSettings
from .errors import NumericalError, SettleTimeout
from .integrate import SolverSettings, integrate, settle
from .io import (
    ScenarioError,
    RunManifest,
    baseline_scenario_text,
    parse_scenario,
    write_branch_csv,
    write_equilibria_csv,
    write_events_csv,
    write_orbit_csv,
    write_orbit_family_csv,
    write_trajectory_csv,
    write_table,
)
from .workflows import (
    bifurcation_diagram,
    equilibrium_catalog,
    orbit_families,
    reproduce,
    strain1_only_state,
)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("simulate", "settle", "r0", "equilibria", "bifcoeff", "continue", "orbits", "reproduce")
DEFAULT_ORBIT_RANGE = (0.1, 0.75)


class _Run:
    """Output directory, manifest and console reporting for one invocation."""

    def __init__(self, args, scenario, command, settings=None):
        self.manifest = RunManifest.create(scenario, command, settings, args.overrides)
        self.dir = self.manifest.run_directory(args.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.quiet = args.quiet

    def path(self, name: str) -> Path:
        return self.dir / name

    def add(self, *paths):
        for p in paths:
            self.manifest.outputs.append(Path(p).name)

    def say(self, text: str = ""):
        if not self.quiet:
            print(text)

    def finish(self):
        self.manifest.write(self.dir)
        self.say(f"outputs: {self.dir}")
        return EXIT_OK


def _solver_settings(opts) -> SolverSettings:
    keys = ("rel_tol", "abs_tol", "max_step", "dense_output_interval")
    return SolverSettings(**{k: opts[k] for k in keys if k in opts})


def _cont_settings(opts) -> ContinuationSettings:
    keys = ("initial_step", "min_step", "max_step", "max_points", "event_tol",
            "intervals", "degree", "orbit_tol")
    kw = {k: opts[k] for k in keys if k in opts}
    for k in ("max_points", "intervals", "degree"):
        if k in kw:
            kw[k] = int(kw[k])
    try:
        return ContinuationSettings(**kw)
    except ValueError as exc:
        raise ScenarioError(str(exc), field="run_options") from exc


def _json_dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# -- subcommands -------------------------------------------------------------------------

def cmd_simulate(args, sc):
    opts = sc.run_options
    solver = _solver_settings(opts)
    run = _Run(args, sc, "simulate", dataclasses.asdict(solver))
    traj = integrate(sc.initial_state, sc.params, opts["t_span"], solver)
    out = write_trajectory_csv(traj, run.path("trajectory.csv"))
    run.add(out)
    fin = traj.state(-1)
    run.say(f"integrated {traj.times[0]:g} to {traj.times[-1]:g} months in {traj.meta['steps']} steps")
    run.say(f"final I_tot = {fin.I_tot:.10g}, I_sec = {fin.I_sec:.10g}, N = {fin.N:.10g}, M = {fin.M:.10g}")
    return run.finish()


def cmd_settle(args, sc):
    opts = sc.run_options
    solver = _solver_settings(opts)
    kw = {k: opts[k] for k in ("tol", "t_max", "chunk") if k in opts}
    run = _Run(args, sc, "settle", {**dataclasses.asdict(solver), **kw})
    try:
        rec = settle(sc.initial_state, sc.params, settings=solver, **kw)
    except SettleTimeout as exc:
        if exc.trajectory is not None:
            run.add(write_trajectory_csv(exc.trajectory, run.path("trajectory.csv")))
        run.manifest.write(run.dir)
        raise
    run.add(write_equilibria_csv({"settled": rec}, run.path("equilibrium.csv")))
    run.say(f"settled to {rec.kind} (stable in full space: {rec.stable}), residual {rec.residual_norm:.3e}")
    run.say(f"I_tot = {rec.state.I_tot:.10g}, I_sec = {rec.state.I_sec:.10g}")
    return run.finish()


def cmd_r0(args, sc):
    run = _Run(args, sc, "r0")
    value = r0(sc.params)
    verdict = "supercritical" if value > 1 else ("subcritical" if value < 1 else "critical")
    run.add(_json_dump(run.path("r0.json"), {
        "R0": value, "R0_next_generation": r0_spectral(sc.params),
        "critical_alpha": critical_alpha(sc.params) if sc.params.beta > 0 else None,
        "verdict": verdict}))
    run.say(f"R0 = {value:.10f} ({verdict})")
    return run.finish()


def cmd_equilibria(args, sc):
    run = _Run(args, sc, "equilibria")
    cat = equilibrium_catalog(sc.params)
    run.add(write_equilibria_csv(cat, run.path("equilibria.csv")))
    run.say(f"{'kind':<22}{'stable':<8}{'max Re(eig)':>14}{'I_tot':>16}{'residual':>12}")
    for label, rec in cat.items():
        run.say(f"{label:<22}{str(rec.stable):<8}{rec.max_real:>14.6g}{rec.state.I_tot:>16.8g}"
                f"{rec.residual_norm:>12.2e}")
    return run.finish()


def cmd_bifcoeff(args, sc):
    w = CenterManifoldWeights(**sc.run_options.get("weights", {}))
    run = _Run(args, sc, "bifcoeff", {"weights": dataclasses.asdict(w)})
    a, b = center_manifold_coefficients(sc.params, w)
    a_star, a_c = critical_alpha(sc.params), alpha_c(sc.params, w)
    kind = "backward" if a > 0 else "forward"
    run.add(_json_dump(run.path("bifcoeff.json"), {
        "alpha_star": a_star, "a": a, "b": b, "alpha_c": a_c, "bifurcation": kind,
        "weights": dataclasses.asdict(w)}))
    run.say(f"alpha* = {a_star:.8g}  alpha_c = {a_c:.8g}")
    run.say(f"a = {a:.8g}  b = {b:.8g}  ->  {kind} bifurcation at R0 = 1")
    return run.finish()


def _write_diagram(run, diagram):
    labelled = []
    for label, br in diagram.branches.items():
        main, ev = write_branch_csv(br, br.events, run.path(f"branch_{label}.csv"))
        run.add(main, ev)
        run.say(f"branch {label}: {len(br)} points over [{br.param_values.min():.6g}, "
                f"{br.param_values.max():.6g}] ({br.termination})")
        labelled += [(label, e) for e in br.events]
    run.add(write_events_csv(labelled, run.path("events.csv"), with_branch=True))
    for label, e in labelled:
        extra = f", omega = {e.imag_pair:.6g}" if e.imag_pair is not None else ""
        run.say(f"  {e.event_kind} on {label} at {e.param_name} = {e.param_value:.8g}{extra}")


def cmd_continue(args, sc):
    opts = sc.run_options
    settings = _cont_settings(opts)
    run = _Run(args, sc, "continue", dataclasses.asdict(settings))
    diagram = bifurcation_diagram(sc.params, opts["free_param"], opts["range"], settings,
                                  start=opts.get("start", "disease_free"))
    _write_diagram(run, diagram)
    return run.finish()


def cmd_orbits(args, sc):
    opts = sc.run_options
    free = opts.get("free_param", "alpha")
    if "range" in opts:
        rng = opts["range"]
    elif free == "alpha":
        rng = DEFAULT_ORBIT_RANGE
    else:
        raise ScenarioError("orbits needs a range unless the free parameter is alpha",
                            field="run_options.range")
    settings = _cont_settings(opts)
    run = _Run(args, sc, "orbits", dataclasses.asdict(settings))
    diagram = bifurcation_diagram(sc.params, free, rng, settings, start=opts.get("start", "disease_free"))
    _write_diagram(run, diagram)
    fams = orbit_families(diagram, sc.params, rng, settings, int(opts.get("max_orbits", 400)))
    if not fams:
        run.say("no Hopf point in range; no periodic orbits")
    for label, fam in fams:
        for k, orbit in enumerate(fam.orbits):
            run.add(write_orbit_csv(orbit, run.path(f"orbit_{label}_{k:03d}.csv")))
        run.add(write_orbit_family_csv(fam.orbits, run.path(f"family_{label}.csv")))
        amps = [o.amplitude for o in fam.orbits]
        vals = fam.param_values
        run.say(f"orbit family from the Hopf on {label}: {len(fam)} orbits, {free} in "
                f"[{vals.min():.6g}, {vals.max():.6g}], amplitude up to {max(amps):.6g}, "
                f"period {fam.orbits[0].period:.4g} to {fam.orbits[-1].period:.4g} months ({fam.termination})")
    return run.finish()


def cmd_reproduce(args, sc):
    if sc.initial_state is None:
        raise ScenarioError("reproduce needs an initial_state", field="initial_state")
    settings = _cont_settings(sc.run_options)
    run = _Run(args, sc, "reproduce", dataclasses.asdict(settings))
    rows, _, diagram, fams = reproduce(sc.params, sc.initial_state, settings)
    solver = SolverSettings(dense_output_interval=1.0)
    x0 = np.asarray(sc.initial_state, dtype=float)
    for name, start in (("transient_two_strain.csv", x0), ("transient_one_strain.csv", strain1_only_state(x0))):
        run.add(write_trajectory_csv(integrate(start, sc.params, (0, 600), solver), run.path(name)))
    _write_diagram(run, diagram)
    for label, fam in fams:
        run.add(write_orbit_family_csv(fam.orbits, run.path(f"family_{label}.csv")))
    run.add(write_table(run.path("summary.csv"), ["quantity", "reported", "computed", "passed"],
                        [[r.quantity, r.reported, r.computed, "true" if r.passed else "false"] for r in rows]))
    run.say("")
    w = max(len(r.quantity) for r in rows)
    for r in rows:
        run.say(f"{'PASS' if r.passed else 'FAIL'}  {r.quantity:<{w}}  reported: {r.reported:<34} computed: {r.computed}")
    return run.finish()


HANDLERS = {
    "simulate": cmd_simulate, "settle": cmd_settle, "r0": cmd_r0, "equilibria": cmd_equilibria,
    "bifcoeff": cmd_bifcoeff, "continue": cmd_continue, "orbits": cmd_orbits, "reproduce": cmd_reproduce,
}


# -- argument handling ---------------------------------------------------------------------

def _parse_set(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    name, value = text.split("=", 1)
    try:
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"value for {name!r} is not a number: {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dengue2s", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario_path", nargs="?", metavar="SCENARIO",
                        help="scenario JSON (default: shipped baseline)")
    common.add_argument("--scenario", dest="scenario_opt", metavar="PATH", help="scenario JSON")
    common.add_argument("--out", default="runs", help="root output directory (default: runs)")
    common.add_argument("--set", dest="sets", action="append", type=_parse_set, default=[],
                        metavar="NAME=VALUE", help="override a parameter or initial-state value")
    common.add_argument("--free", help="free parameter for continue/orbits")
    common.add_argument("--range", nargs=2, type=float, metavar=("LO", "HI"),
                        help="free-parameter range for continue/orbits")
    common.add_argument("--tol", type=float, help="tolerance: rel_tol (simulate), settle tol, "
                        "event_tol (continue) or orbit_tol (orbits)")
    common.add_argument("--t-span", nargs=2, type=float, metavar=("T0", "T1"),
                        help="time span in months (simulate)")
    common.add_argument("--start", help="start equilibrium kind for continue/orbits")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress console summary")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "integrate the model and write the trajectory",
        "settle": "integrate until an equilibrium is reached",
        "r0": "basic reproduction number and threshold verdict",
        "equilibria": "closed-form equilibria with stability",
        "bifcoeff": "center-manifold coefficients a, b and alpha_c",
        "continue": "continue equilibria and detect bifurcations",
        "orbits": "continue periodic orbits from Hopf points",
        "reproduce": "run the reference analyses and compare with reported values",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _load(args):
    if args.scenario_path and args.scenario_opt and args.scenario_path != args.scenario_opt:
        raise ScenarioError("give the scenario either positionally or with --scenario, not both")
    path = args.scenario_opt or args.scenario_path
    text = Path(path).read_bytes() if path else baseline_scenario_text()
    sc = parse_scenario(text)
    args.overrides = dict(args.sets)
    sc = sc.with_overrides(args.overrides)
    kind = "continue" if args.command == "reproduce" else args.command
    extra = {}
    if args.free is not None:
        extra["free_param"] = args.free
    if args.range is not None:
        extra["range"] = list(args.range)
    if args.t_span is not None:
        extra["t_span"] = list(args.t_span)
    if args.start is not None:
        extra["start"] = args.start
    if args.tol is not None:
        key = {"simulate": "rel_tol", "settle": "tol", "continue": "event_tol",
               "orbits": "orbit_tol", "equilibria": "tol"}.get(args.command)
        if key is None:
            raise ScenarioError(f"--tol does not apply to {args.command}", field="tol")
        extra[key] = args.tol
    if args.command == "reproduce":
        # reproduce fixes its own free parameter and range
        return sc.for_kind("orbits", {k: v for k, v in extra.items() if k not in ("free_param", "range")})
    if kind == "continue" and args.command == "continue":
        extra.setdefault("free_param", sc.run_options.get("free_param", "alpha"))
    return sc.for_kind(kind, extra)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        sc = _load(args)
        return HANDLERS[args.command](args, sc)
    except (ScenarioError, ValueError) as exc:
        print(f"error[validation]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SettleTimeout as exc:
        tail = " oscillating" if exc.oscillating else ""
        print(f"error[numerical]: timeout{tail}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error[numerical]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
