"""Command-line interface.

Subcommands: generate (dataset to disk), discover (dataset dir -> JSON),
check-assumptions (scenario -> JSON report), experiment (scenario -> CSV),
oracle-validate (exact-quantity validation suite). Exit codes: 0 success,
1 validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import load_dataset, save_dataset, generate_dataset
from .discovery import DiscoveryConfig, DiscoveryError, discover
from .experiments import (
    DEFAULT_VALIDATE_MECHANISMS,
    Scenario,
    assumption_report,
    build_model_and_env,
    dataset_seed,
    load_scenario,
    oracle_validate,
    run_scenario,
)
from .scm import BUILTIN_KINDS
from .stein import SteinConfig


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duet",
        description="Causal graph recovery from rescaled environments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="sample a multi-environment dataset to a directory")
    gen.add_argument("--mechanism", required=True, choices=BUILTIN_KINDS)
    gen.add_argument("--d", type=int, default=2)
    gen.add_argument("--n", type=int, default=2000)
    gen.add_argument("--k", type=int, default=3, help="number of auxiliary environments")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--family", choices=["gaussian", "gamma"], default="gaussian")
    gen.add_argument("--variance-range", type=float, nargs=2, default=[1.0, 1.5])
    gen.add_argument("--alpha-range", type=float, nargs=2, default=[2.0, 2.5])
    gen.add_argument("--theta-range", type=float, nargs=2, default=[1.75, 2.25])
    gen.add_argument("--lambda-low", type=float, default=1.5)
    gen.add_argument("--lambda-high", type=float, default=2.5)
    gen.add_argument("--unsigned", action="store_true", help="positive rescalings only")

    dis = sub.add_parser("discover", help="run the pipeline on an exported dataset directory")
    dis.add_argument("--data", required=True)
    dis.add_argument("--out", default=None, help="write the JSON result here (default stdout)")
    dis.add_argument("--tau", type=float, default=0.25)
    dis.add_argument("--ridge", type=float, default=1e-3)
    dis.add_argument("--bandwidth-factor", type=float, default=1.0)
    dis.add_argument("--gap-tol", type=float, default=1e-3)

    chk = sub.add_parser("check-assumptions", help="assumption report for a scenario file")
    chk.add_argument("--scenario", required=True)
    chk.add_argument("--out", default=None)
    chk.add_argument("--tol", type=float, default=1e-9)

    exp = sub.add_parser("experiment", help="run a scenario sweep to CSV")
    exp.add_argument("--scenario", required=True)
    exp.add_argument("--out", required=True)
    exp.add_argument("--seed-offset", type=int, default=0)
    exp.add_argument("--threads", type=int, default=None)

    val = sub.add_parser("oracle-validate", help="exact-quantity validation suite")
    val.add_argument("--d", type=int, default=2)
    val.add_argument("--seeds", type=int, default=20)
    val.add_argument("--mechanisms", default=",".join(DEFAULT_VALIDATE_MECHANISMS))
    val.add_argument("--n", type=int, default=24)
    val.add_argument("--residual-tol", type=float, default=1e-3)

    return parser


def _cmd_generate(args) -> int:
    scenario = Scenario(
        scenario_id=f"generate-{args.seed}",
        mechanisms=(args.mechanism,),
        d=args.d,
        n=args.n,
        env_counts=(args.k,),
        seeds=1,
        source_family=args.family,
        variance_range=tuple(args.variance_range),
        alpha_range=tuple(args.alpha_range) if args.family == "gamma" else None,
        theta_range=tuple(args.theta_range) if args.family == "gamma" else None,
        lambda_low=args.lambda_low,
        lambda_high=args.lambda_high,
        lambda_signed=not args.unsigned,
    )
    model, env = build_model_and_env(scenario, args.mechanism, args.k, args.seed)
    dataset = generate_dataset(
        model, env, args.n, seed=dataset_seed(scenario, args.mechanism, args.k, args.seed)
    )
    out = save_dataset(dataset, args.out)
    print(f"wrote {args.k + 1} environments of {args.n} x {args.d} samples to {out}")
    return 0


def _cmd_discover(args) -> int:
    dataset = load_dataset(args.data)
    config = DiscoveryConfig(
        estimator=SteinConfig(ridge=args.ridge, bandwidth_factor=args.bandwidth_factor),
        tau=args.tau,
        gap_tol=args.gap_tol,
    )
    try:
        estimate = discover(dataset, config=config)
    except DiscoveryError as err:
        print(f"discovery failed at stage {err.stage}: {err}", file=sys.stderr)
        return 1
    result = {
        "support": estimate.support.tolist(),
        "edges": sorted([list(e) for e in estimate.edges]),
        "jacobian": estimate.jacobian.tolist(),
        "diagnostics": _jsonable(estimate.diagnostics),
    }
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def _cmd_check_assumptions(args) -> int:
    scenario = load_scenario(args.scenario)
    report = assumption_report(scenario, tol=args.tol)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0 if report["pass"] else 1


def _cmd_experiment(args) -> int:
    scenario = load_scenario(args.scenario)
    rows, summary = run_scenario(
        scenario, args.out, seed_offset=args.seed_offset, max_workers=args.threads
    )
    errors = sum(1 for r in rows if r.error)
    print(f"wrote {len(rows)} rows to {args.out} ({errors} error rows)")
    for entry in summary:
        print(
            f"  {entry['mechanism']:>14s} k={entry['n_envs']} tau={entry['tau']:g}: "
            f"mean shd {entry['mean_shd']:.3f} +- {entry['std_shd']:.3f}"
        )
    return 0


def _cmd_oracle_validate(args) -> int:
    mechanisms = tuple(m.strip() for m in args.mechanisms.split(",") if m.strip())
    report = oracle_validate(d=args.d, seeds=args.seeds, mechanisms=mechanisms, n=args.n)
    print(
        f"max Hessian-identity residual over {report.total} configurations: "
        f"{report.max_residual:.3e}"
    )
    print(f"oracle discovery: {report.total - report.shd_failures}/{report.total} runs with shd 0")
    ok = report.all_zero_shd and report.max_residual <= args.residual_tol
    return 0 if ok else 1


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "generate": _cmd_generate,
        "discover": _cmd_discover,
        "check-assumptions": _cmd_check_assumptions,
        "experiment": _cmd_experiment,
        "oracle-validate": _cmd_oracle_validate,
    }
    return handlers[args.command](args)


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
