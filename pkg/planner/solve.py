# This file is part of the decem project.
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
solve.py

Main script of the planner: solves DEC-POMDPs with EM from seeded random restarts,
evaluates and simulates stored policies and runs bench suites. Restarts can run in
parallel threads, their logs are buffered and written by a single writer.

Usage:
    Run via the runner script in the repository root:
    `
        python run_planner.py solve --model problems/broadcast.dpomdp --nodes 2 2 --restarts 10 --seed 7
        python run_planner.py evaluate --model problems/broadcast.dpomdp --policy data/runs/<run>/policy.json
        python run_planner.py simulate --model problems/broadcast.dpomdp --policy <policy.json> --episodes 100000
        python run_planner.py bench --suite suites/table1.csv --ci --jobs 4
        python run_planner.py export-model --model builtin:meeting_grid_2x2 --out meeting_grid_2x2.dpomdp
        python run_planner.py validate --model problems/dectiger.dpomdp
    `

    Adjust other variables within the `global_defaults.py` script if needed.

Exit codes: 0 success, 1 input error, 2 numerical abort, 3 bench tolerance miss (with --ci).

Dependencies: argparse, concurrent.futures, numpy, pandas, custom modules for the model,
 controllers, evaluation, EM and file I/O.
"""

import argparse
import concurrent.futures
import json
import os
import time
from dataclasses import dataclass

import pandas as pd

from .bench_check import main as bench_check
from .controller import check_compatible, init_random
from .em import EmConfig, NumericalAbort, em_solve, parse_cutoff
from .evaluation import EVAL_METHODS, evaluate_exact, simulate
from .file_io import (cleanup_old_files,
                      export_model,
                      load_model,
                      load_policy,
                      load_suite,
                      save_json,
                      save_policy,
                      save_results,
                      save_run_log,
                      save_summary,
                      save_table)
from .global_defaults import (AUDIT_EVERY,
                              CUTOFF,
                              EVAL_METHOD,
                              EVAL_TOL,
                              EXIT_BENCH_MISS,
                              EXIT_INPUT_ERROR,
                              EXIT_NUMERICAL_ABORT,
                              EXIT_OK,
                              JOBS,
                              KEEP_LOGS,
                              LIK_TOL,
                              LOG_DIR,
                              MAX_ITERS,
                              NODES,
                              OUTPUT_DIR,
                              OUTPUT_FORMAT,
                              RESTARTS,
                              RUNS_DIR,
                              SEED,
                              SIM_EPISODES,
                              TIMESTAMP)
from .logger_setup import get_logger
from .model import build_successor_index, validate_model


@dataclass(frozen=True)
class SolveConfig:
    model_path: str
    nodes_1: int = NODES[0]
    nodes_2: int = NODES[1]
    restarts: int = RESTARTS
    seed: int = SEED
    max_iters: int = MAX_ITERS
    lik_tol: float = LIK_TOL
    cutoff: str = CUTOFF
    audit_every: int = AUDIT_EVERY
    output_path: str = None
    output_format: str = OUTPUT_FORMAT
    jobs: int = JOBS

    def em_config(self):
        return EmConfig(max_iters=self.max_iters, lik_tol=self.lik_tol, cutoff=self.cutoff,
                        audit_every=self.audit_every)


@dataclass
class RestartResult:
    restart: int
    seed: list
    policy: object
    run_log: object

    @property
    def value(self):
        return self.run_log.final_value

    @property
    def likelihood(self):
        return self.run_log.final_likelihood

    @property
    def iters(self):
        return len(self.run_log.records) - 1

    @property
    def ms(self):
        return self.run_log.records[-1].ms


def problem_name(model_path):
    return os.path.splitext(os.path.basename(model_path.split(":")[-1]))[0]


def require_valid(model):
    """Raise ValueError listing the violations if the model is not valid."""
    report = validate_model(model)
    if report:
        shown = "\n  ".join(report[:10])
        raise ValueError(f"Model is not valid ({len(report)} violations):\n  {shown}")


def run_restart(model, cfg, restart, idx=None, logger=None):
    """
    One EM run from the random policy seeded with (seed, restart).

    Args:
        model (DecPomdpModel): The model.
        cfg (SolveConfig): Run settings.
        restart (int): Restart index.
        idx (SuccessorIndex, optional): Shared successor index of the model.
        logger (logging.Logger, optional): Logger, None buffers the log lines in the run log.

    Returns:
        RestartResult: The best policy of the run and its trace.
    """
    seed = [cfg.seed, restart]
    p0 = init_random(model, cfg.nodes_1, cfg.nodes_2, seed)
    policy, run_log = em_solve(model, p0, cfg.em_config(), idx=idx, logger=logger)
    return RestartResult(restart=restart, seed=seed, policy=policy, run_log=run_log)


def run_restarts(model, cfg, logger=None):
    """
    Run all restarts of a configuration, sequentially or in `cfg.jobs` threads.

    Results are ordered by restart index regardless of completion order.

    Returns:
        list[RestartResult]: One result per restart.
    """
    idx = build_successor_index(model)
    if logger:
        logger.info(f"Successor index: {idx.num_entries} tuples, k={idx.k}.")

    if cfg.jobs == 1:
        results = []
        for restart in range(cfg.restarts):
            result = run_restart(model, cfg, restart, idx, logger)
            print(f"Restart {restart}: value {result.value:.6g} after {result.iters} iterations "
                  f"({result.run_log.reason}).")
            results.append(result)
        return results

    results = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.jobs) as executor:
        try:
            futures = {executor.submit(run_restart, model, cfg, restart, idx): restart
                       for restart in range(cfg.restarts)}
            for future in concurrent.futures.as_completed(futures):
                result = future.result()
                print(f"Restart {result.restart}: value {result.value:.6g} after {result.iters} "
                      f"iterations ({result.run_log.reason}).")
                results.append(result)

        # ensure workers quit on a failing restart
        except Exception as e:
            if logger:
                logger.critical(f"Shutting down restarts due to error: {e}")
            executor.shutdown(wait=False, cancel_futures=True)
            raise

    results.sort(key=lambda result: result.restart)
    if logger:
        for result in results:
            result.run_log.flush(logger, prefix=f"[restart {result.restart}] ")
    return results


def best_result(results):
    """Highest audited value, ties go to the lowest restart index."""
    return max(results, key=lambda result: (result.value, -result.restart))


def build_summary(model, cfg, results):
    """Run summary without wall-clock times, a deterministic function of the flags and the model."""
    best = best_result(results)
    return {
        "problem": problem_name(cfg.model_path),
        "model_hash": model.model_hash,
        "nodes": [cfg.nodes_1, cfg.nodes_2],
        "num_restarts": cfg.restarts,
        "seed": cfg.seed,
        "max_iters": cfg.max_iters,
        "lik_tol": cfg.lik_tol,
        "cutoff": str(parse_cutoff(cfg.cutoff)),
        "best_restart": best.restart,
        "best_value": best.value,
        "best_likelihood": best.likelihood,
        "mean_value": sum(result.value for result in results) / len(results),
        "policy_hash": best.policy.policy_hash,
        "runs": [{"restart": result.restart, "iters": result.iters, "likelihood": result.likelihood,
                  "value": result.value, "reason": result.run_log.reason} for result in results],
    }


def cmd_solve(cfg, logger=None):
    """
    Solve a model from `cfg.restarts` random restarts and write the artifacts:
    best policy, one run log per restart, the summary and the timings.
    """
    model = load_model(cfg.model_path, logger)
    require_valid(model)
    problem = problem_name(cfg.model_path)
    out_dir = cfg.output_path or os.path.join(RUNS_DIR, f"{problem}_{TIMESTAMP}")

    print(f"Solving {problem} with {cfg.nodes_1}x{cfg.nodes_2} node controllers, {cfg.restarts} restarts.")
    start_time = time.time()
    results = run_restarts(model, cfg, logger)

    for result in results:
        save_run_log(result.run_log, os.path.join(out_dir, f"runlog_restart{result.restart}.jsonl"), logger)
    best = best_result(results)
    provenance = {"seed": best.seed, "restart": best.restart, "iterations": best.run_log.iterations,
                  "model_hash": model.model_hash, "value": best.value}
    save_policy(best.policy, os.path.join(out_dir, "policy.json"), provenance, logger)
    save_summary(build_summary(model, cfg, results), os.path.join(out_dir, f"summary.{cfg.output_format}"),
                 cfg.output_format, logger)
    save_table([{"restart": result.restart, "iters": result.iters, "ms": result.ms} for result in results],
               os.path.join(out_dir, "timings.csv"), logger=logger)

    print(f"Best value {best.value:.6g} (restart {best.restart}) in {time.time() - start_time:.1f} seconds. "
          f"Artifacts in {out_dir}.")
    if logger:
        logger.info(f"Solved {problem}: best value {best.value:.10g} from restart {best.restart}.")
    return EXIT_OK


def cmd_evaluate(model_path, policy_path, method=EVAL_METHOD, tol=EVAL_TOL, out=None, logger=None):
    """Exact value of a stored policy: V(b0), Bellman residual and method."""
    model = load_model(model_path, logger)
    policy, _ = load_policy(policy_path, logger)
    check_compatible(policy, model)
    report = evaluate_exact(model, policy, tol=tol, method=method, logger=logger).to_report()
    print(json.dumps(report, sort_keys=True))
    if out:
        save_json(report, out, logger)
    return EXIT_OK


def cmd_simulate(model_path, policy_path, episodes=SIM_EPISODES, horizon=None, seed=SEED, out=None,
                 logger=None):
    """Monte-Carlo estimate of a stored policy's value."""
    model = load_model(model_path, logger)
    policy, _ = load_policy(policy_path, logger)
    check_compatible(policy, model)
    report = simulate(model, policy, episodes=episodes, horizon=horizon, seed=seed, logger=logger).to_report()
    print(json.dumps(report, sort_keys=True))
    if out:
        save_json(report, out, logger)
    return EXIT_OK


def cmd_bench(suite_path, out=None, ci=False, base_cfg=None, restarts=None, logger=None):
    """
    Run every entry of a bench suite and compare against the reference thresholds.

    Args:
        suite_path (str): Suite CSV.
        out (str, optional): Output directory. Defaults to a timestamped directory below RUNS_DIR.
        ci (bool): Return EXIT_BENCH_MISS if any entry misses its thresholds or any
            likelihood trace decreases.
        base_cfg (SolveConfig, optional): Seed, EM settings, jobs and format shared by all entries.
        restarts (int, optional): Overrides the suite's restart counts.
        logger (logging.Logger, optional): Logger instance.

    Returns:
        int: Exit status.
    """
    suite = load_suite(suite_path, logger)
    base_cfg = base_cfg or SolveConfig(model_path="")
    out_dir = out or os.path.join(RUNS_DIR, f"bench_{problem_name(suite_path)}_{TIMESTAMP}")

    rows, aggregate_rows, run_logs = [], [], {}
    for entry in suite.itertuples(index=False):
        model = load_model(entry.model, logger)
        require_valid(model)
        cfg = SolveConfig(model_path=entry.model, nodes_1=entry.n1, nodes_2=entry.n2,
                          restarts=restarts or entry.restarts, seed=base_cfg.seed,
                          max_iters=base_cfg.max_iters, lik_tol=base_cfg.lik_tol, cutoff=base_cfg.cutoff,
                          audit_every=base_cfg.audit_every, jobs=base_cfg.jobs)
        print(f"Bench entry {entry.problem} ({entry.n1}x{entry.n2}), {cfg.restarts} restarts.")
        results = run_restarts(model, cfg, logger)

        for result in results:
            label = f"{entry.problem}_{entry.n1}x{entry.n2}_restart{result.restart}"
            run_logs[label] = result.run_log
            save_run_log(result.run_log, os.path.join(out_dir, "runlogs", f"{label}.jsonl"), logger)
            rows.append({"problem": entry.problem, "n1": entry.n1, "n2": entry.n2, "restart": result.restart,
                         "iters": result.iters, "likelihood": result.likelihood, "value": result.value,
                         "ms": result.ms})
        aggregate_rows.append({
            "problem": entry.problem, "n1": entry.n1, "n2": entry.n2,
            "best_value": max(result.value for result in results),
            "mean_value": sum(result.value for result in results) / len(results),
            "best_likelihood": max(result.likelihood for result in results),
            "reference": entry.reference, "min_value": entry.min_value,
            "min_likelihood": entry.min_likelihood,
        })

    results_df = save_results(rows, os.path.join(out_dir, "results.csv"), logger)
    aggregate = pd.DataFrame(aggregate_rows)
    check = bench_check(results_df, aggregate, run_logs, logger=logger)
    aggregate["passed"] = check["passed"]

    if base_cfg.output_format == "csv":
        save_table(aggregate, os.path.join(out_dir, "aggregate.csv"), logger=logger)
    else:
        save_json(json.loads(aggregate.to_json(orient="records")), os.path.join(out_dir, "aggregate.json"), logger)

    print(f"Bench results in {out_dir}.")
    if ci and (not aggregate["passed"].all() or check["monotone_violations"]):
        return EXIT_BENCH_MISS
    return EXIT_OK


def cmd_export_model(model_path, out, logger=None):
    """Write a model (file or builtin) as `.dpomdp` text or JSON mirror."""
    model = load_model(model_path, logger)
    export_model(model, out, logger)
    print(f"Exported {model_path} to {out}.")
    return EXIT_OK


def cmd_validate(model_path, logger=None):
    """Print the validation report of a model, exit 1 if it has violations."""
    model = load_model(model_path, logger)
    report = validate_model(model)
    if not report:
        print(f"{model_path}: valid (|S|={model.num_states}, |A|={model.num_actions_1}, "
              f"|B|={model.num_actions_2}, |Y|={model.num_obs_1}, |Z|={model.num_obs_2}).")
        return EXIT_OK
    for line in report:
        print(line)
    if logger:
        logger.warning(f"{model_path}: {len(report)} violations.")
    return EXIT_INPUT_ERROR


def _add_em_arguments(parser):
    parser.add_argument("--seed", type=int, default=SEED, help="Base seed, restart r uses (seed, r).")
    parser.add_argument("--max-iters", type=int, default=MAX_ITERS, help="Maximum EM iterations per restart.")
    parser.add_argument("--lik-tol", type=float, default=LIK_TOL, help="Relative likelihood improvement to stop at.")
    parser.add_argument("--cutoff", type=str, default=CUTOFF, help="Message cutoff, 'fixed:K' or 'adaptive:EPS'.")
    parser.add_argument("--audit-every", type=int, default=AUDIT_EVERY,
                        help="Exact value audit every n iterations (0: final policy only).")
    parser.add_argument("--format", type=str, default=OUTPUT_FORMAT, choices=["json", "csv"],
                        help="Summary format.")
    parser.add_argument("--jobs", type=int, default=JOBS, help="Number of threads running restarts.")


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description="EM planning for two-agent DEC-POMDPs.")
    parser.add_argument("--log-dir", type=str, default=LOG_DIR, help="Directory of the run logs.")
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve", help="Optimize controllers with EM.")
    solve.add_argument("--model", type=str, required=True, help="Model file or builtin:<name>.")
    solve.add_argument("--nodes", type=int, nargs=2, default=list(NODES), metavar=("N1", "N2"),
                       help="Controller sizes of agent 1 and agent 2.")
    solve.add_argument("--restarts", type=int, default=RESTARTS, help="Number of random restarts.")
    solve.add_argument("--out", type=str, default=None, help=f"Output directory (default below {OUTPUT_DIR}).")
    _add_em_arguments(solve)

    evaluate = commands.add_parser("evaluate", help="Exact value of a policy.")
    evaluate.add_argument("--model", type=str, required=True)
    evaluate.add_argument("--policy", type=str, required=True)
    evaluate.add_argument("--method", type=str, default=EVAL_METHOD, choices=list(EVAL_METHODS))
    evaluate.add_argument("--tol", type=float, default=EVAL_TOL, help="Bellman residual bound.")
    evaluate.add_argument("--out", type=str, default=None, help="Write the report JSON here.")

    sim = commands.add_parser("simulate", help="Monte-Carlo estimate of a policy's value.")
    sim.add_argument("--model", type=str, required=True)
    sim.add_argument("--policy", type=str, required=True)
    sim.add_argument("--episodes", type=int, default=SIM_EPISODES)
    sim.add_argument("--horizon", type=int, default=None, help="Default: smallest h with gamma^h < 1e-6.")
    sim.add_argument("--seed", type=int, default=SEED)
    sim.add_argument("--out", type=str, default=None, help="Write the report JSON here.")

    bench = commands.add_parser("bench", help="Run a bench suite.")
    bench.add_argument("--suite", type=str, required=True, help="Suite CSV.")
    bench.add_argument("--out", type=str, default=None, help=f"Output directory (default below {OUTPUT_DIR}).")
    bench.add_argument("--ci", action="store_true", help="Exit 3 if any entry misses its thresholds.")
    bench.add_argument("--restarts", type=int, default=None, help="Override the suite's restart counts.")
    _add_em_arguments(bench)

    export = commands.add_parser("export-model", help="Write a model as .dpomdp or .json.")
    export.add_argument("--model", type=str, required=True)
    export.add_argument("--out", type=str, required=True)

    validate = commands.add_parser("validate", help="Check a model file.")
    validate.add_argument("--model", type=str, required=True)

    return parser.parse_args(argv)


def check_valid_inputs(arg_dict):
    """Reject invalid counts and tolerances before any work is done."""
    for key in ("nodes_1", "nodes_2", "restarts", "jobs", "episodes", "horizon"):
        if arg_dict.get(key) is not None and arg_dict[key] < 1:
            raise ValueError(f"`{key.replace('_', '-')}` must be at least 1, got {arg_dict[key]}.")
    for key in ("max_iters", "audit_every"):
        if arg_dict.get(key) is not None and arg_dict[key] < 0:
            raise ValueError(f"`{key.replace('_', '-')}` must not be negative, got {arg_dict[key]}.")
    for key in ("lik_tol", "tol"):
        if arg_dict.get(key) is not None and not arg_dict[key] > 0:
            raise ValueError(f"`{key.replace('_', '-')}` must be positive, got {arg_dict[key]}.")
    if arg_dict.get("cutoff") is not None:
        parse_cutoff(arg_dict["cutoff"])


def _solve_config(args, model_path):
    return SolveConfig(model_path=model_path, nodes_1=args.nodes[0], nodes_2=args.nodes[1],
                       restarts=args.restarts, seed=args.seed, max_iters=args.max_iters,
                       lik_tol=args.lik_tol, cutoff=args.cutoff, audit_every=args.audit_every,
                       output_path=args.out, output_format=args.format, jobs=args.jobs)


def _dispatch(args, logger):
    if args.command == "solve":
        cfg = _solve_config(args, args.model)
        check_valid_inputs(vars(cfg))
        return cmd_solve(cfg, logger)
    if args.command == "evaluate":
        check_valid_inputs({"tol": args.tol})
        return cmd_evaluate(args.model, args.policy, args.method, args.tol, args.out, logger)
    if args.command == "simulate":
        check_valid_inputs({"episodes": args.episodes, "horizon": args.horizon})
        return cmd_simulate(args.model, args.policy, args.episodes, args.horizon, args.seed, args.out, logger)
    if args.command == "bench":
        base_cfg = SolveConfig(model_path=args.suite, seed=args.seed, max_iters=args.max_iters,
                               lik_tol=args.lik_tol, cutoff=args.cutoff, audit_every=args.audit_every,
                               output_format=args.format, jobs=args.jobs)
        check_valid_inputs(dict(vars(base_cfg), restarts=args.restarts))
        return cmd_bench(args.suite, args.out, args.ci, base_cfg, args.restarts, logger)
    if args.command == "export-model":
        return cmd_export_model(args.model, args.out, logger)
    return cmd_validate(args.model, logger)


def main(argv=None):
    # CLI arguments
    args = parse_args(argv)

    debug_dir = os.path.join(args.log_dir, "debug_info")
    logger = get_logger(log_file=os.path.join(args.log_dir, f"planlog_{TIMESTAMP}.log"),
                        debug_log_file=os.path.join(debug_dir, f"planlog_{TIMESTAMP}_DEBUG.log"))
    logger.info(f"For a debug level log file, view the logfile within {debug_dir}.")
    logger.info(f"Command: {args.command} {vars(args)}")

    start_time = time.time()
    try:
        status = _dispatch(args, logger)
    except NumericalAbort as e:
        exit_msg = f"\033[91mNumerical abort: {e}\033[0m"
        logger.error(exit_msg)
        print(exit_msg)
        status = EXIT_NUMERICAL_ABORT
    except (ValueError, IndexError, KeyError, FileNotFoundError) as e:
        exit_msg = f"\033[91mInput error: {e}\033[0m"
        logger.error(exit_msg)
        print(exit_msg)
        status = EXIT_INPUT_ERROR

    logger.info(f"Finished '{args.command}' with exit code {status} in {time.time() - start_time:.1f} seconds.")

    # cleanup
    cleanup_old_files(args.log_dir, KEEP_LOGS, logger)
    cleanup_old_files(debug_dir, KEEP_LOGS, logger)

    return status


if __name__ == "__main__":
    raise SystemExit(main())
