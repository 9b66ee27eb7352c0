"""Command-line interface.

Subcommands: lift, simulate, edmd, predict, kkf, and bench
{spectrum,kkf,reconstruct}.  Exit codes: 0 success, 1 usage error, 2
numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import bench, dynamics, edmd, kkf
from .dynamics import IntegrationError
from .edmd import DecompositionError, FitError
from .expr import ExprError
from .kkf import FilterError
from .polylift import (
    LiftError,
    dump_lifted,
    dump_observables,
    lift,
    load_system,
    observables_from_lift,
)

_NUMERICAL_ERRORS = (
    LiftError,
    IntegrationError,
    FitError,
    DecompositionError,
    FilterError,
    np.linalg.LinAlgError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="kooplift",
        description="Polynomialization-based Koopman analysis and filtering",
    )
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--out-dir", help="output directory")
    parser.add_argument(
        "--format", choices=("csv",), default="csv", help="output format"
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("lift", help="polynomialize an ODE system file")
    p.add_argument("system", help="system file (name' = expr lines)")
    p.add_argument("--max-rounds", type=int, default=10)

    p = sub.add_parser("simulate", help="integrate a system and write CSV")
    p.add_argument("--system", help="system file (default: built-in SMIB)")
    p.add_argument("--x0", required=True, help="comma-separated initial state")
    p.add_argument("--dt", type=float, default=0.005)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--substeps", type=int, default=5)
    p.add_argument("--out", help="output CSV (default: stdout)")

    p = sub.add_parser("edmd", help="fit a dictionary, save the Koopman tuple")
    p.add_argument("--dict", default="lie", dest="dictionary")

    p = sub.add_parser("predict", help="spectral prediction from a saved model")
    p.add_argument("--model", required=True, help="model JSON from 'edmd'")
    p.add_argument("--x0", required=True)
    p.add_argument("--steps", type=int, default=160)
    p.add_argument("--out", help="output CSV (default: stdout)")

    p = sub.add_parser("kkf", help="run one Kalman-filter tracking case")
    p.add_argument("--case", type=int, required=True, help="case number (1-based)")
    p.add_argument("--dict", default="lie", dest="dictionary")
    p.add_argument("--model", help="reuse a saved model JSON instead of refitting")

    p = sub.add_parser("bench", help="run a full benchmark")
    p.add_argument("experiment", choices=("spectrum", "kkf", "reconstruct"))
    p.add_argument("--start", help="start state for 'reconstruct'")

    return parser


def _load_cfg(args) -> bench.ExperimentConfig:
    cfg = bench.load_config(args.config) if args.config else bench.ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.out_dir is not None:
        cfg = replace(cfg, out_dir=args.out_dir)
    return cfg


def _parse_state(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")])


def _write_or_print(traj: dynamics.Trajectory, out: str | None):
    if out:
        traj.to_csv(out)
        print(f"wrote {out}")
    else:
        traj.to_csv("/dev/stdout")


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        return _dispatch(args)
    except _UsageError as exc:
        print(f"kooplift: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (OSError, ValueError, ExprError) as exc:
        print(f"kooplift: {exc}", file=sys.stderr)
        return 1
    except _NUMERICAL_ERRORS as exc:
        print(f"kooplift: numerical failure: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "lift":
        system = load_system(args.system)
        lifted = lift(system, max_rounds=args.max_rounds)
        sys.stdout.write(dump_lifted(lifted))
        sys.stdout.write("\n")
        sys.stdout.write(dump_observables(observables_from_lift(lifted)))
        return 0

    if args.command == "simulate":
        if args.system:
            system = load_system(args.system)
        else:
            system, _ = dynamics.smib_build()
        traj = dynamics.integrate_rk4(
            system, _parse_state(args.x0), args.dt, args.steps, args.substeps
        )
        _write_or_print(traj, args.out)
        return 0

    cfg = _load_cfg(args)

    if args.command == "edmd":
        run = bench.prepare_training(cfg)
        dec = bench.fit_dictionary(run, args.dictionary)
        os.makedirs(cfg.out_dir, exist_ok=True)
        model_path = os.path.join(cfg.out_dir, f"model_{args.dictionary}.json")
        edmd.save_decomposition(dec, model_path)
        for lam in dec.lambda_c:
            print(f"lambda_c = {lam.real:+.6f} {lam.imag:+.6f}j")
        print(f"wrote {model_path}")
        return 0

    if args.command == "predict":
        dec = edmd.load_decomposition(args.model)
        traj = edmd.predict(dec, _parse_state(args.x0), args.steps)
        _write_or_print(traj, args.out)
        return 0

    if args.command == "kkf":
        if not (1 <= args.case <= len(cfg.cases)):
            raise _UsageError(
                f"case must be in 1..{len(cfg.cases)} (configured cases)"
            )
        system, derived = dynamics.smib_build(cfg.smib)
        if args.model:
            dec = edmd.load_decomposition(args.model)
        else:
            run = bench.prepare_training(cfg)
            dec = bench.fit_dictionary(run, args.dictionary)
        meas = kkf.build_measurement(dec, derived)
        ci = args.case - 1
        di = cfg.dictionaries.index(args.dictionary) if args.dictionary in cfg.dictionaries else 0
        result = kkf.kkf_run(
            cfg.cases[ci],
            cfg.duration,
            system,
            dec,
            meas,
            cfg.noise(),
            seed=bench.kkf_seed(cfg.master_seed, ci, di),
            P0_scale=cfg.p0_scale,
        )
        os.makedirs(cfg.out_dir, exist_ok=True)
        path = os.path.join(
            cfg.out_dir, f"kkf_case{args.case}_{args.dictionary}.csv"
        )
        dynamics.write_csv(
            path,
            ("t", "delta_true", "omega_true", "delta_hat", "omega_hat",
             "eps_delta", "eps_omega", "P_meas", "Q_meas"),
            np.column_stack(
                [
                    result.truth.times,
                    result.truth.states,
                    result.estimate.states,
                    result.eps_delta,
                    result.eps_omega,
                    result.measurements,
                ]
            ),
        )
        for key, value in result.stats.items():
            print(f"{key} = {value:.6g}")
        print(f"wrote {path}")
        return 0

    if args.command == "bench":
        run = bench.prepare_training(cfg)
        if args.experiment == "spectrum":
            table = bench.run_spectrum_bench(cfg, run)
            _print_table(table)
        elif args.experiment == "kkf":
            table = bench.run_kkf_bench(cfg, run)
            _print_table(table)
        else:
            start = _parse_state(args.start) if args.start else np.array([-0.50, -0.75])
            path = bench.run_reconstruction(cfg, start, run)
            print(f"wrote {path}")
        print(f"outputs in {cfg.out_dir}")
        return 0

    raise _UsageError(f"unknown command {args.command!r}")


def _print_table(table: bench.ResultTable):
    print(",".join(table.columns))
    for row in table.rows:
        print(
            ",".join(
                f"{v:.4f}" if isinstance(v, float) else str(v) for v in row
            )
        )


if __name__ == "__main__":
    sys.exit(main())
