"""Command line entry point.

Exit codes
    0  success (check-gains: every condition holds)
    1  check-gains found a violated condition, or a runtime failure
    2  scenario or polytope file could not be parsed
    3  the initial state is outside the safe set (some h_i(x(0)) <= 0)
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .barriers import BarrierSet
from .config import ConfigError, format_config, read_config
from .geometry import GeometryError, read_polytope, solve_mvie, vcbf_value
from .safety_filters import METHOD_NAMES, Method, SafetyFilter
from .sim import InfeasibleInitialState, initial_state, monte_carlo, run_scenario, write_outputs

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_INFEASIBLE_INIT = 0, 1, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="safecbf", description="Disturbance-observer and volume CBF safety filters.")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        sp.add_argument("--scenario", required=True, help="scenario .ini file")
        sp.add_argument("--echo-config", action="store_true",
                        help="print the parsed scenario in canonical form and exit")

    r = sub.add_parser("run", help="simulate one scenario")
    scenario_args(r)
    r.add_argument("--method", choices=METHOD_NAMES, help="override the filter method")
    r.add_argument("--out", default="out", help="output directory (log.csv, metrics.json)")

    m = sub.add_parser("montecarlo", help="paired DobVcbf / DobCbf feasible-runtime study")
    scenario_args(m)
    m.add_argument("--runs", type=int, default=50)
    m.add_argument("--seed", type=int, default=None, help="defaults to the scenario seed")
    m.add_argument("--randomize", choices=("initial", "gains"), default="initial")
    m.add_argument("--out", default="out", help="output directory (summary.json)")

    e = sub.add_parser("ellipsoid", help="maximum-volume inscribed ellipsoid of a polytope file")
    e.add_argument("polytope", help="text file: header 'm k', then k rows 'a_1 ... a_m b' for a.u <= b")
    e.add_argument("--xi", type=float, default=1e-4, help="volume-barrier margin")

    c = sub.add_parser("check-gains", help="verify the observer / certificate parameter conditions")
    scenario_args(c)
    return p


def _load(path):
    if not os.path.exists(path):
        raise ConfigError(f"no such file: {path}")
    return read_config(path)


def check_gains(cfg) -> list:
    """List of ``(name, ok, detail)`` for every parameter condition."""
    g = cfg.observer
    plant = cfg.plant.build()
    checks = [("beta_condition", g.gain_condition(),
               f"beta={g.beta:g} > delta2 + delta3/max(1, alpha-gamma) = {g.beta_threshold:g}")]
    for i, b in enumerate(cfg.barriers):
        checks.append((f"poles[{i}]", all(p > 0 for p in b.poles), f"poles={list(b.poles)}"))
        checks.append((f"lambda_V>=lambda_r[{i}]", g.lambda_v >= b.last_pole,
                       f"lambda_V={g.lambda_v:g}, lambda_r={b.last_pole:g}"))
    x0 = initial_state(cfg, plant)
    if cfg.barriers:
        bset = BarrierSet(cfg.barriers, plant)
        h, phi1 = bset.evaluate(x0)[:2]
        for i in range(len(cfg.barriers)):
            ok = bool(h[i] > 0 and phi1[i] > 0)
            beta1 = g.delta1**2 / (2.0 * phi1[i]) if phi1[i] > 0 else float("nan")
            checks.append((f"beta1[{i}]", ok, f"h(0)={h[i]:.6g}, phi1(0)={phi1[i]:.6g}, beta1={beta1:.6g}"))
    if cfg.filter.method.uses_vcbf:
        box = cfg.plant.box(plant)
        filt = SafetyFilter(cfg.filter, plant, BarrierSet(cfg.barriers, plant), box, g)
        try:
            vv = filt.vcbf(x0, np.zeros(x0.size))[0]
        except GeometryError as exc:
            checks.append(("beta2", False, f"V_v(0) undefined: {exc}"))
        else:
            beta2 = cfg.filter.beta2 if cfg.filter.beta2 is not None else (
                g.delta1**2 / (2.0 * vv) if vv > 0 else float("nan"))
            checks.append(("beta2", bool(vv > 0 and beta2 > 0), f"V_v(0)={vv:.6g}, beta2={beta2:.6g}"))
        checks.append(("lambda_V>=lambda_Vv", g.lambda_v >= cfg.filter.lambda_vv,
                       f"lambda_V={g.lambda_v:g}, lambda_Vv={cfg.filter.lambda_vv:g}"))
    return checks


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "ellipsoid":
            try:
                poly = read_polytope(args.polytope)
            except (OSError, ValueError) as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_PARSE
            try:
                res = solve_mvie(poly)
            except GeometryError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_FAIL
            e = res.ellipsoid
            print(json.dumps({"B": e.B.tolist(), "c": e.c.tolist(), "det_B": e.det,
                              "V_v": vcbf_value(e, args.xi)}, indent=2))
            return EXIT_OK

        cfg = _load(args.scenario)
        if args.echo_config:
            sys.stdout.write(format_config(cfg))
            return EXIT_OK

        if args.command == "check-gains":
            checks = check_gains(cfg)
            for name, ok, detail in checks:
                print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
            return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_FAIL

        if args.command == "run":
            if args.method:
                cfg = cfg.with_method(args.method)
            log = run_scenario(cfg)
            m = write_outputs(log, cfg, args.out)
            print(json.dumps(m.to_dict(), indent=2))
            return EXIT_OK if log.meta.get("fault") is None else EXIT_FAIL

        if args.command == "montecarlo":
            rand = cfg.initial_box if args.randomize == "initial" else cfg.gain_box
            seed = cfg.seed if args.seed is None else args.seed
            summary = monte_carlo(cfg, args.runs, rand, seed, methods=(Method.DOB_VCBF, Method.DOB_CBF))
            os.makedirs(args.out, exist_ok=True)
            with open(os.path.join(args.out, "summary.json"), "w") as fh:
                json.dump(summary, fh, indent=2)
            print(json.dumps({k: v["mean_feasible_runtime"] for k, v in summary["methods"].items()}, indent=2))
            return EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InfeasibleInitialState as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE_INIT
    return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
