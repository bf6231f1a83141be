# This file is part of the decem project.
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
logger_setup.py

This script configures the logger of the planner. The logger supports two levels of output:
1. DEBUG logs (per-iteration EM traces, E-step cutoffs), saved to a dedicated debug file.
2. INFO and higher-level logs, saved to a general log file for operational insights.

Library functions never create the logger themselves, they accept an optional `logger`
argument. The command line front end calls `get_logger` once per run.
"""

import logging
import os

from .global_defaults import LOG_FILE, DEBUG_LOG_FILE

LOGGER_NAME = "decemLogger"


def get_logger(log_file=LOG_FILE, debug_log_file=DEBUG_LOG_FILE):
    """
    Set up and return the planner logger.

    The logger writes:
    - DEBUG-level and above logs to a debug log file (DEBUG_LOG_FILE).
    - INFO-level and above logs to a general log file (LOG_FILE).

    Args:
        log_file (str): Path of the INFO+ log file. Defaults to LOG_FILE.
        debug_log_file (str): Path of the DEBUG+ log file. Defaults to DEBUG_LOG_FILE.

    Returns:
        logging.Logger: Configured logger instance.
    """
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(logging.DEBUG)

    if logger.hasHandlers():
        for handler in list(logger.handlers):
            handler.close()
        logger.handlers.clear()

    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )

    for path in (log_file, debug_log_file):
        directory = os.path.dirname(path)
        if directory and not os.path.exists(directory):
            os.makedirs(directory)

    # handler 1: write all logs (DEBUG+) to the debug log
    debug_handler = logging.FileHandler(debug_log_file, mode='a')
    debug_handler.setLevel(logging.DEBUG)
    debug_handler.setFormatter(formatter)
    logger.addHandler(debug_handler)

    # handler 2: write only INFO+ logs to the run log
    info_handler = logging.FileHandler(log_file, mode='a')
    info_handler.setLevel(logging.INFO)
    info_handler.setFormatter(formatter)
    logger.addHandler(info_handler)

    logger.propagate = False

    return logger
