"""Command line interface: ``fit``, ``simulate`` and ``benchmark``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .edmd import load_model, save_model
from .harness import ClosedLoopError, ConfigError, fit_model, load_scenario, run_closed_loop, run_suite
from .mpc import SolverError
from .refcalc import ReferenceCalculationError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _fit(args) -> int:
    scenario = load_scenario(args.config)
    model = fit_model(scenario)
    save_model(model, args.out)
    print(f"wrote {model.kind} model ({model.size} observables) to {args.out}")
    return EXIT_OK


def _simulate(args) -> int:
    scenario = load_scenario(args.config)
    try:
        model = load_model(args.model)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load model {args.model}: {exc}") from exc
    if (model.n, model.m) != (scenario.n, scenario.m):
        raise ConfigError(f"model dimensions {(model.n, model.m)} do not match the scenario {(scenario.n, scenario.m)}")
    if model.kind != scenario.model.kind:
        logging.getLogger(__name__).warning("model kind %s differs from scenario model.kind %s",
                                            model.kind, scenario.model.kind)
    trace = run_closed_loop(scenario, model)
    trace.write_csv(args.out)
    print(f"{scenario.name}: final state error {trace.err_state[-1]:.3e}, "
          f"final output error {trace.err_output[-1]:.3e}")
    return EXIT_OK


def _benchmark(args) -> int:
    comp = run_suite(args.suite, args.out_dir, seed=args.seed)
    for row in comp.summary():
        print(f"{row['scenario']:<40s} final output error {row['final_err_output']:.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="koopmpc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="generate data and fit a surrogate model")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_fit)

    p = sub.add_parser("simulate", help="run the closed loop with a fitted model")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_simulate)

    p = sub.add_parser("benchmark", help="run a full comparison suite")
    p.add_argument("--suite", required=True, choices=["vdp", "four-tanks"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_benchmark)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ClosedLoopError as exc:
        print(f"numerical failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SolverError, ReferenceCalculationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
