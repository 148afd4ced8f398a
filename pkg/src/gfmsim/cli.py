"""Command-line entry point: ``gfmsim {tune,bode,simulate,verify,sweep}``.

Exit codes: 0 success, 2 usage or configuration error, 3 simulation
divergence, 4 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .benchmark import LOOPS, OWPP_PRESETS, loop_corner_frequencies, loops_from_gains, tune_system
from .config import ConfigDocument, atomic_write, load_config, read_gains, write_gains
from .exceptions import ConfigError, DivergenceError, GfmError, InfeasibleError, InvalidInputError
from .linsys import margins, write_bode_csv
from .sim import build_system, compute_metrics, initialize, run, verify_invariants

log = logging.getLogger(__name__)

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3, 4

SCENARIOS = ("fcr", "inertia", "custom")
WTG_SWEEP = ("K_Rw", "K_Hw")
TUNING_SWEEP = ("h_ac", "h_dc", "h_wtg")
SWEEPABLE = WTG_SWEEP + TUNING_SWEEP


def _gains_for(doc: ConfigDocument, gains_path=None):
    if gains_path:
        return read_gains(gains_path)
    return tune_system(doc.system)[0]


def _apply_scenario_preset(gains, scenario: str):
    return gains if scenario == "custom" else OWPP_PRESETS[scenario](gains)


# -- tune -------------------------------------------------------------------

def cmd_tune(args) -> int:
    doc = load_config(args.config)
    gains, report, _ = tune_system(doc.system)
    write_gains(args.out, gains)
    text = report.to_text()
    atomic_write(args.report or f"{args.out}.report.txt", text)
    sys.stdout.write(text)
    for w in report.warnings:
        log.warning(w)
    return EXIT_OK


# -- bode -------------------------------------------------------------------

def cmd_bode(args) -> int:
    if args.loop not in LOOPS:
        raise InvalidInputError(f"unknown loop {args.loop!r}; choose from {', '.join(LOOPS)}")
    doc = load_config(args.config)
    gains = _gains_for(doc, args.gains)
    tf = loops_from_gains(doc.system, gains)[args.loop]
    w_L, _ = loop_corner_frequencies(args.loop, gains, doc.system)
    lo, hi = w_L / 100.0, 10.0 * doc.system.omega_N
    n = int(math.ceil(50 * math.log10(hi / lo))) + 1
    omegas = np.logspace(math.log10(lo), math.log10(hi), n)
    m = margins(tf, lo, max(hi, 1e5))
    footer = [f"loop = {args.loop}",
              f"phase_margin_deg = {m.phase_margin_deg!r}",
              f"gain_crossover_rad_s = {m.gain_crossover_rad_s!r}",
              f"gain_margin_db = {m.gain_margin_db!r}",
              f"phase_crossover_rad_s = {m.phase_crossover_rad_s!r}"]
    write_bode_csv(args.out, tf, omegas, footer)
    print(f"{args.loop}: PM {m.phase_margin_deg:.2f} deg at {m.gain_crossover_rad_s:.4g} rad/s")
    return EXIT_OK


# -- simulate ---------------------------------------------------------------

def _simulate(doc: ConfigDocument, gains, scenario_name: str, dt=None):
    scenario = doc.scenario.scenario(scenario_name, dt)
    system = build_system(doc.system, gains)
    initialize(system, settle_time=0.0, dt=scenario.dt)
    return run(system, scenario), scenario


def cmd_simulate(args) -> int:
    doc = load_config(args.config)
    gains = _apply_scenario_preset(_gains_for(doc, args.gains), args.scenario)
    sim_log, scenario = _simulate(doc, gains, args.scenario, args.dt)
    sim_log.to_csv(args.out)
    report = {"scenario": args.scenario, "duration": scenario.duration, "dt": scenario.dt,
              "wall_time_s": sim_log.wall_time, "metrics": None}
    if sim_log.event_time is not None and sim_log.t[-1] - sim_log.event_time >= 10.0:
        report["metrics"] = compute_metrics(sim_log, f_N=doc.system.onshore.f_N).to_dict()
    report["invariants"] = verify_invariants(sim_log, gains.mmc_on.K_R, gains.mmc_off.K_R)
    atomic_write(args.metrics or f"{args.out}.metrics.json", json.dumps(report, indent=2) + "\n")
    print(f"{args.scenario}: {scenario.duration:g} s simulated in {sim_log.wall_time:.2f} s")
    return EXIT_OK


# -- verify -----------------------------------------------------------------

def cmd_verify(args) -> int:
    from .verify import run_suite

    doc = load_config(args.config)
    results = run_suite(doc.system, fault=args.fault, dt=args.dt or doc.scenario.dt)
    for r in results:
        print(r.line())
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_VERIFY if failed else EXIT_OK


# -- sweep ------------------------------------------------------------------

def _sweep_point(doc: ConfigDocument, param: str, value: float, scenario: str, dt, gains_path):
    """One sweep row; divergence is reported in the row instead of raised."""
    if param in TUNING_SWEEP:
        doc = replace(doc, system=replace(doc.system, tuning=replace(doc.system.tuning, **{param: value})))
        gains = tune_system(doc.system)[0]
    else:
        gains = _gains_for(doc, gains_path)
    gains = _apply_scenario_preset(gains, scenario)
    if param in WTG_SWEEP:
        gains = gains.with_wtg(**{param: value})
    row = {"value": value, "f_nadir": math.nan, "max_rocof": math.nan, "settling": math.nan,
           "diverged": 0}
    try:
        sim_log, _ = _simulate(doc, gains, scenario, dt)
    except DivergenceError:
        row["diverged"] = 1
        return row
    m = compute_metrics(sim_log, f_N=doc.system.onshore.f_N)
    row.update(f_nadir=m.f_nadir, max_rocof=m.max_rocof, settling=m.settling_time)
    return row


def _parse_values(text: str) -> list[float]:
    vals = [v.strip() for v in text.split(",") if v.strip()]
    if not vals:
        raise InvalidInputError("empty value list")
    try:
        return [float(v) for v in vals]
    except ValueError:
        raise InvalidInputError(f"values must be numbers: {text!r}") from None


def cmd_sweep(args) -> int:
    if args.param not in SWEEPABLE:
        raise InvalidInputError(f"{args.param!r} is not sweepable; choose from {', '.join(SWEEPABLE)}")
    values = _parse_values(args.values)
    doc = load_config(args.config)
    if args.scenario == "custom" and not doc.scenario.parse_events():
        raise InvalidInputError("custom sweep scenario has no events")
    jobs = max(1, args.jobs)
    call = (doc, args.param)
    if jobs == 1:
        rows = [_sweep_point(*call, v, args.scenario, args.dt, args.gains) for v in values]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futures = [ex.submit(_sweep_point, *call, v, args.scenario, args.dt, args.gains)
                       for v in values]
            rows = [f.result() for f in futures]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["value", "f_nadir", "max_rocof", "settling", "diverged"],
                       lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if k != "diverged" else v) for k, v in r.items()})
    atomic_write(args.out, buf.getvalue())
    n_div = sum(r["diverged"] for r in rows)
    print(f"sweep {args.param}: {len(rows)} runs, {n_div} diverged")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration (benchmark defaults if omitted)")
    common.add_argument("--seedless", action="store_true",
                        help="reserved; the simulator has no randomness")

    p = argparse.ArgumentParser(prog="gfmsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tune", parents=[common], help="tune all loops and write a gains file")
    t.add_argument("--out", metavar="PATH", required=True)
    t.add_argument("--report", metavar="PATH", help="margin report (default OUT.report.txt)")
    t.set_defaults(func=cmd_tune)

    b = sub.add_parser("bode", parents=[common], help="write the Bode table of one loop")
    b.add_argument("--loop", metavar="NAME", required=True, help=" | ".join(LOOPS))
    b.add_argument("--out", metavar="PATH", required=True)
    b.add_argument("--gains", metavar="PATH", help="gains file (tuned from the config if omitted)")
    b.set_defaults(func=cmd_bode)

    s = sub.add_parser("simulate", parents=[common], help="run one scenario")
    s.add_argument("--scenario", choices=SCENARIOS, required=True)
    s.add_argument("--out", metavar="PATH", required=True)
    s.add_argument("--metrics", metavar="PATH", help="metrics JSON (default OUT.metrics.json)")
    s.add_argument("--gains", metavar="PATH")
    s.add_argument("--dt", type=float, metavar="SECONDS")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    v.add_argument("--fault", choices=("kd_x10", "onshore_f_wire"),
                   help="inject a known defect; the suite is then expected to fail")
    v.add_argument("--dt", type=float, metavar="SECONDS")
    v.set_defaults(func=cmd_verify)

    w = sub.add_parser("sweep", parents=[common], help="simulate once per parameter value")
    w.add_argument("--param", required=True, help=" | ".join(SWEEPABLE))
    w.add_argument("--values", required=True, help="comma-separated values")
    w.add_argument("--out", metavar="PATH", required=True)
    w.add_argument("--scenario", choices=SCENARIOS, default="fcr")
    w.add_argument("--gains", metavar="PATH")
    w.add_argument("--jobs", type=int, default=1, metavar="N")
    w.add_argument("--dt", type=float, metavar="SECONDS")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "dt", None) is not None and not args.dt > 0:
        parser.error("--dt must be positive")
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError, InfeasibleError) as e:
        print(f"gfmsim: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as e:
        print(f"gfmsim: diverged at t = {e.time:.6f} s: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except GfmError as e:
        print(f"gfmsim: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
