"""Command-line entry point.

Subcommands:
  solve <problem>    train a model, write per-seed CSVs + summary + manifest
  oracle <problem>   independent reference value as JSON on stdout
  params             parameter-count table (walked vs formula, size ratios)
  compare <problem>  paired convergence comparison of both models

Exit codes: 0 success, 1 configuration error, 2 runtime divergence,
3 accuracy gate failed under --check.
"""

import argparse
import json
import os
import sys

from . import harness, oracles, problems

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_CHECK = 3


def _parse_seeds(text):
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers: {err}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="acpde",
        description="Actor-critic solver for high-dimensional semilinear parabolic PDEs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="train on a problem and write run artifacts")
    solve.add_argument("problem", help=f"one of {problems.problem_names()}")
    solve.add_argument("--model", choices=harness.MODELS, default=None)
    solve.add_argument("--seeds", type=_parse_seeds, default=None,
                       help="comma-separated, e.g. 0,1,2")
    solve.add_argument("--config", default=None,
                       help="flat JSON config file; a run manifest is accepted as-is")
    solve.add_argument("--check", action="store_true",
                       help="apply the per-problem accuracy gate after training")
    solve.add_argument("--output", default=None, help="artifact directory")
    solve.add_argument("--max-iterations", type=int, default=None, dest="max_iterations")
    solve.add_argument("--early-stop", action="store_true", default=None, dest="early_stop")

    oracle = sub.add_parser("oracle", help="independent reference value for a problem")
    oracle.add_argument("problem")
    oracle.add_argument("--samples", type=int, default=10**6)
    oracle.add_argument("--seed", type=int, default=0)

    params = sub.add_parser("params", help="model size table: walked counts vs formulas")
    params.add_argument("--all", action="store_true", dest="with_timing",
                        help="also measure per-iteration wall time for both models")
    params.add_argument("--json", action="store_true", dest="as_json")

    compare = sub.add_parser("compare", help="paired convergence of both models")
    compare.add_argument("problem")
    compare.add_argument("--seeds", type=_parse_seeds, default=(0, 1, 2, 3, 4))
    compare.add_argument("--max-iterations", type=int, default=None, dest="max_iterations")
    compare.add_argument("--models", nargs=2, default=("actor-critic", "dbsde"),
                         metavar=("A", "B"))
    compare.add_argument("--output", default=None,
                         help="directory to also write compare_<problem>.json into")
    return parser


def _solve_config(args):
    mapping = {}
    if args.config:
        with open(args.config) as fh:
            mapping = json.load(fh)
        if not isinstance(mapping, dict):
            raise harness.ConfigError(
                [f"config file {args.config} must hold a flat JSON object"])
        file_problem = mapping.get("problem")
        if file_problem is not None and file_problem != args.problem:
            raise harness.ConfigError(
                [f"problem on the command line ({args.problem}) disagrees with "
                 f"the config file ({file_problem})"])
    mapping["problem"] = args.problem
    # explicit command-line flags win over config-file values
    for key in ("model", "seeds", "output", "max_iterations", "early_stop"):
        value = getattr(args, key)
        if value is not None:
            mapping["output_dir" if key == "output" else key] = (
                list(value) if key == "seeds" else value)
    return harness.config_from_mapping(mapping)


def _cmd_solve(args):
    config = _solve_config(args)
    summary = harness.run(config)
    code = EXIT_OK
    if args.check:
        summary["check"] = harness.check_summary(summary)
        if not summary["check"]["passed"]:
            code = EXIT_CHECK
    if summary["failed_seeds"]:
        code = EXIT_RUNTIME
    print(json.dumps(summary, indent=2, sort_keys=True))
    return code


def _cmd_oracle(args):
    problem = problems.make_problem(args.problem)
    result = oracles.reference_for(problem, samples=args.samples, seed=args.seed)
    if result is None:
        print(f"no reference oracle is available for {args.problem}", file=sys.stderr)
        return EXIT_CONFIG
    payload = {"problem": args.problem, "samples": args.samples, "seed": args.seed}
    payload.update(result.as_dict())
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_params(args):
    rows = harness.params_report(with_timing=args.with_timing)
    if args.as_json:
        print(json.dumps(rows, indent=2))
        return EXIT_OK
    header = (f"{'problem':<22}{'d':>5}{'N':>5}{'pair':>10}{'baseline':>10}"
              f"{'pair=formula':>14}{'base=formula':>14}{'ratio %':>9}")
    print(header)
    for row in rows:
        print(f"{row['problem']:<22}{row['d']:>5}{row['num_steps']:>5}"
              f"{row['actor_critic_params']:>10}{row['dbsde_params']:>10}"
              f"{str(row['actor_critic_params'] == row['actor_critic_formula']):>14}"
              f"{str(row['dbsde_params'] == row['dbsde_formula']):>14}"
              f"{row['ratio_percent']:>9.3f}")
        if args.with_timing:
            print(f"{'':<22}{'':>10}per-iteration s: "
                  f"pair {row['seconds_per_iteration_actor-critic']:.4f}  "
                  f"baseline {row['seconds_per_iteration_dbsde']:.4f}  "
                  f"ratio {row['seconds_per_iteration_rpi_ratio_percent']:.1f}%")
    return EXIT_OK


def _cmd_compare(args):
    result = harness.compare_convergence(
        args.problem,
        seeds=args.seeds,
        max_iterations=args.max_iterations,
        model_a=args.models[0],
        model_b=args.models[1],
    )
    text = json.dumps(result, indent=2, sort_keys=True)
    print(text)
    if args.output:
        os.makedirs(args.output, exist_ok=True)
        path = os.path.join(args.output, f"compare_{args.problem}.json")
        with open(path, "w") as fh:
            fh.write(text + "\n")
    failed = any(entry["failed"]
                 for model in result["models"].values()
                 for entry in model["per_seed"])
    return EXIT_RUNTIME if failed else EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; remap
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "oracle":
            return _cmd_oracle(args)
        if args.command == "params":
            return _cmd_params(args)
        return _cmd_compare(args)
    except harness.ConfigError as err:
        for line in err.errors:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, ValueError, FileNotFoundError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
