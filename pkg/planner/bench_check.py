# This file is part of the decem project.
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
bench_check.py

This script performs post-run checks on the results of a bench run.
It verifies that no EM iteration decreased the likelihood, that the results table has
exactly one row per (problem, sizes, restart), and compares every suite entry against
its reference thresholds.

Checks report, they never raise. `main` returns the findings so the caller can decide
on the exit status.

Dependencies: pandas.
"""

import pandas as pd

from .em import MONOTONE_TOL


def check_monotone_likelihood(run_logs, tol=MONOTONE_TOL, logger=None):
    """
    Scan the likelihood trace of every run for decreases larger than `tol`.

    Args:
        run_logs (dict): Maps a run label to its EmRunLog (or a list of likelihoods).
        tol (float): Accepted decrease per iteration.
        logger (logging.Logger, optional): Logger instance for logging warnings.

    Returns:
        list[str]: One message per offending iteration.
    """
    violations = []
    for label, run_log in run_logs.items():
        likelihoods = run_log.likelihoods if hasattr(run_log, "likelihoods") else list(run_log)
        for iteration in range(1, len(likelihoods)):
            drop = likelihoods[iteration - 1] - likelihoods[iteration]
            if drop > tol:
                violations.append(f"{label}: likelihood decreased by {drop:.3g} at iteration {iteration}")
    if violations and logger:
        logger.warning(f"{len(violations)} likelihood decreases found, first: {violations[0]}")
    return violations


def check_duplicates(results, logger=None):
    """
    Check that the results table has one row per (problem, n1, n2, restart).

    Args:
        results (pd.DataFrame): Bench results.
        logger (logging.Logger, optional): Logger instance for logging warnings.

    Returns:
        pd.DataFrame: The duplicated rows (empty if none).
    """
    duplicate_rows = results[results.duplicated(subset=["problem", "n1", "n2", "restart"], keep=False)]
    if not duplicate_rows.empty and logger:
        logger.warning(f"Duplicate result rows found:\n{duplicate_rows}")
    return duplicate_rows


def check_references(aggregate, logger=None):
    """
    Compare the aggregated entries against their thresholds.

    An entry passes if its best value reaches `min_value` and its best likelihood
    reaches `min_likelihood`. Empty thresholds are not checked.

    Args:
        aggregate (pd.DataFrame): One row per suite entry with best_value, best_likelihood,
            min_value and min_likelihood.
        logger (logging.Logger, optional): Logger instance.

    Returns:
        pd.Series: Boolean pass flag per entry.
    """
    value_ok = aggregate["min_value"].isna() | (aggregate["best_value"] >= aggregate["min_value"])
    lik_ok = aggregate["min_likelihood"].isna() | (aggregate["best_likelihood"] >= aggregate["min_likelihood"])
    passed = value_ok & lik_ok

    for _, row in aggregate[~passed].iterrows():
        msg = (f"{row['problem']} ({row['n1']}x{row['n2']}): best value {row['best_value']:.6g} "
               f"(min {row['min_value']}), best likelihood {row['best_likelihood']:.6g} "
               f"(min {row['min_likelihood']}), reference {row['reference']}.")
        logger.warning("Reference missed: " + msg) if logger else print("Reference missed: " + msg)
    return passed


def main(results, aggregate, run_logs, logger=None):
    """
    Run all post-run checks.

    Args:
        results (pd.DataFrame): Per-restart results.
        aggregate (pd.DataFrame): Per-entry aggregates.
        run_logs (dict): Run label -> EmRunLog.
        logger (logging.Logger, optional): Logger instance.

    Returns:
        dict: {"monotone_violations": [...], "duplicates": int, "passed": pd.Series}
    """
    print("Performing bench check.")
    if logger:
        logger.info("Performing bench check.")

    violations = check_monotone_likelihood(run_logs, logger=logger)
    duplicates = check_duplicates(pd.DataFrame(results), logger=logger)
    passed = check_references(aggregate, logger=logger)

    print(f"bench check complete: {int(passed.sum())}/{len(passed)} entries passed, "
          f"{len(violations)} likelihood decreases.")
    if logger:
        logger.info("bench check complete.")
    return {"monotone_violations": violations, "duplicates": len(duplicates), "passed": passed}
