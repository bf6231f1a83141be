# This file is part of the decem project.
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
file_io.py

File Input/Output Utility Functions for the planner

This script contains functions for loading problem instances, policies and bench suites,
and for writing the artifacts of a run: policies, EM run logs, summaries, result tables
and reports. It also includes a utility for cleaning up old log files.

Key Features:
- Load models from `.dpomdp` files, their JSON mirror or `builtin:<name>`.
- Save and load policy JSON documents.
- Write EM run logs as JSON lines.
- Write summaries and result tables as JSON or CSV (pandas).
- Load and check bench suites (CSV).
- Clean up outdated files.

Dependencies: pandas.

Usage:
- Import functions as needed into other scripts.
- Ensure appropriate paths and global constants are configured in `global_defaults`.
"""

import json
import os

import pandas as pd

from .benchmarks import builtin_model
from .controller import policy_from_dict, policy_to_dict
from .dpomdp_parser import parse_model, serialize_model
from .global_defaults import BUILTIN_PREFIX, PROBLEMS_DIR, RESULT_COLUMNS
from .model import model_from_dict, model_to_dict

SUITE_COLUMNS = ["problem", "model", "n1", "n2", "restarts", "reference", "min_value", "min_likelihood"]


def ensure_dir(directory):
    if directory and not os.path.exists(directory):
        os.makedirs(directory)


def resolve_model_path(path, base_dir=None):
    """
    Locate a model file: as given, relative to `base_dir`, or in the bundled problems directory.
    `builtin:` names are returned unchanged.
    """
    if path.startswith(BUILTIN_PREFIX) or os.path.exists(path):
        return path
    for directory in (base_dir, PROBLEMS_DIR):
        if directory and os.path.exists(os.path.join(directory, path)):
            return os.path.join(directory, path)
    return path


def load_model(path, logger=None):
    """
    Load a problem instance.

    Args:
        path (str): A `.dpomdp` file, a `.json` model mirror or `builtin:<name>`.
        logger (logging.Logger, optional): Logger for logging progress. Defaults to None.

    Returns:
        DecPomdpModel: The model.

    Raises:
        FileNotFoundError: If the file does not exist.
        DpomdpParseError: If the file does not parse.
        KeyError: For unknown builtin names.
    """
    if path.startswith(BUILTIN_PREFIX):
        model = builtin_model(path[len(BUILTIN_PREFIX):])
        if logger:
            logger.info(f"Generated builtin model {path}.")
        return model

    path = resolve_model_path(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"Model file '{path}' not found.")
    with open(path, 'r') as f:
        text = f.read()
    if path.endswith(".json"):
        model = model_from_dict(json.loads(text))
    else:
        model = parse_model(text, logger=logger)
    if logger:
        logger.info(f"Loaded model from {path} (hash {model.model_hash[:12]}).")
    return model


def export_model(model, path, logger=None):
    """Write a model as `.dpomdp` text, or as its JSON mirror if `path` ends in `.json`."""
    ensure_dir(os.path.dirname(path))
    with open(path, 'w') as f:
        if path.endswith(".json"):
            json.dump(model_to_dict(model), f, indent=1)
            f.write("\n")
        else:
            f.write(serialize_model(model))
    if logger:
        logger.info(f"Exported model to {path}.")


def save_policy(policy, path, provenance=None, logger=None):
    """
    Save a policy as JSON.

    Args:
        policy (JointPolicy): The policy.
        path (str): Output file.
        provenance (dict, optional): Seed, restart, iterations, model hash, value.
        logger (logging.Logger, optional): Logger for logging progress. Defaults to None.
    """
    ensure_dir(os.path.dirname(path))
    with open(path, 'w') as f:
        json.dump(policy_to_dict(policy, provenance), f, indent=1)
        f.write("\n")
    if logger:
        logger.info(f"Saved policy to {path}.")


def load_policy(path, logger=None):
    """
    Load a policy JSON document.

    Returns:
        tuple: (JointPolicy, provenance dict)
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Policy file '{path}' not found.")
    with open(path, 'r') as f:
        policy, provenance = policy_from_dict(json.load(f))
    if logger:
        logger.info(f"Loaded policy with nodes {policy.nodes} from {path}.")
    return policy, provenance


def save_run_log(run_log, path, logger=None):
    """Write an EmRunLog as JSON lines, one record per iteration plus the final record."""
    ensure_dir(os.path.dirname(path))
    with open(path, 'w') as f:
        for record in run_log.to_lines():
            f.write(json.dumps(record, sort_keys=True) + "\n")
    if logger:
        logger.debug(f"Wrote {len(run_log.records)} iteration records to {path}.")


def load_run_log(path):
    """Read a run log back as a list of dicts."""
    with open(path, 'r') as f:
        return [json.loads(line) for line in f if line.strip()]


def save_json(data, path, logger=None):
    """Deterministic JSON (sorted keys, fixed indent)."""
    ensure_dir(os.path.dirname(path))
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    if logger:
        logger.info(f"Wrote {path}.")


def save_table(rows, path, columns=None, logger=None):
    """Write a list of dicts (or a DataFrame) as CSV."""
    ensure_dir(os.path.dirname(path))
    df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows, columns=columns)
    df.to_csv(path, index=False)
    if logger:
        logger.info(f"{len(df)} rows written to {path}.")
    return df


def save_summary(summary, path, output_format="json", logger=None):
    """
    Write a solve summary.

    JSON keeps the whole document, CSV writes one row per restart with the run-level
    fields repeated and a `best` flag.
    """
    if output_format == "json":
        save_json(summary, path, logger)
        return
    header = {key: value for key, value in summary.items() if key != "runs"}
    rows = []
    for entry in summary["runs"]:
        row = dict(header)
        row.update(entry)
        row["best"] = entry["restart"] == summary["best_restart"]
        rows.append(row)
    save_table(rows, path, logger=logger)


def save_results(rows, path, logger=None):
    """Bench results table with the fixed RESULT_COLUMNS schema."""
    return save_table(rows, path, columns=RESULT_COLUMNS, logger=logger)


def load_suite(path, logger=None):
    """
    Load a bench suite CSV.

    Columns: problem, model, n1, n2, restarts, reference, min_value, min_likelihood
    (reference and both thresholds may be empty). Model paths are resolved relative to the suite file
    and the bundled problems directory.

    Returns:
        pd.DataFrame: The entries.

    Raises:
        FileNotFoundError: If the suite or a referenced model file is missing.
        ValueError: On missing columns or invalid counts.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Suite file '{path}' not found.")
    suite = pd.read_csv(path, comment="#")
    missing = [column for column in SUITE_COLUMNS if column not in suite.columns]
    if missing:
        raise ValueError(f"Suite '{path}' is missing columns {missing}.")
    if suite.empty:
        raise ValueError(f"Suite '{path}' has no entries.")

    base_dir = os.path.dirname(os.path.abspath(path))
    suite["model"] = [resolve_model_path(str(model), base_dir) for model in suite["model"]]
    absent = [model for model in suite["model"]
              if not model.startswith(BUILTIN_PREFIX) and not os.path.exists(model)]
    if absent:
        raise FileNotFoundError(f"Suite '{path}' references missing model files: {absent}.")
    for column in ("n1", "n2", "restarts"):
        if (suite[column] < 1).any():
            raise ValueError(f"Suite '{path}': column '{column}' must be >= 1.")
    suite = suite.astype({"n1": int, "n2": int, "restarts": int})

    if logger:
        logger.info(f"Loaded suite {path} with {len(suite)} entries.")
    return suite


def cleanup_old_files(directory, keep_last=3, logger=None):
    """
    Cleans up old files in the specified directory, keeping only the last `keep_last` files.

    Args:
        directory (str): Path to the directory containing the files.
        keep_last (int): Number of most recent files to keep. Defaults to 3.
        logger (logging.Logger, optional): Logger for logging messages. Defaults to None.
    """
    try:
        if not os.path.isdir(directory):
            return
        files = [
            os.path.join(directory, file)
            for file in os.listdir(directory) if file.endswith(".log")
        ]
        if len(files) <= keep_last:
            if logger:
                logger.debug(f"No cleanup needed for {directory}. Found {len(files)} files.")
            return

        # newest first, by modification time
        files.sort(key=os.path.getmtime, reverse=True)
        for file in files[keep_last:]:
            os.remove(file)
            if logger:
                logger.info(f"Removed old file: {file}")

    except Exception as e:
        if logger:
            logger.error(f"Error during cleanup of {directory}: {e}")
