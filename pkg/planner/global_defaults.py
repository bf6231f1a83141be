# This file is part of the decem project.
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
global_defaults.py

Global variables used by the planner. Imported by multiple modules.
Adjust these in this file to complement your process.

The vars:
   NODES, RESTARTS, SEED, MAX_ITERS, LIK_TOL, CUTOFF, AUDIT_EVERY, OUTPUT_FORMAT, JOBS
are also settable as command line arguments of `run_planner.py solve` / `bench`.

Directories are only created by the code writing into them, importing this module
has no side effects on disk.
"""

import os
from datetime import datetime


####
# current time for naming log and output files
RUN_TIME = datetime.now()
TIMESTAMP = RUN_TIME.strftime("%d_%m_%Y_%H_%M_%S")
####
#################################################################################
####
# locations
#
# bundled benchmark instances (.dpomdp) and bench suites (.csv)
PACKAGE_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
PROBLEMS_DIR = os.path.join(PACKAGE_ROOT, "problems")
SUITES_DIR = os.path.join(PACKAGE_ROOT, "suites")
# everything a run writes goes below OUTPUT_DIR
OUTPUT_DIR = "data"
RUNS_DIR = os.path.join(OUTPUT_DIR, "runs")
####
#################################################################################
####
# model loading
#
# rows of T, O and b0 whose sum is within this distance of 1 are renormalized exactly,
# rows further away are rejected
STOCHASTIC_TOL = 1e-9
# s' belongs to succ(s,a,b,y,z) iff P(s'|s,a,b) * P(y,z|s',a,b) > SUCC_THRESHOLD
# keep at 0 for the exact reachability sets, raise slightly for numerically noisy models
SUCC_THRESHOLD = 0.0
# prefix for generated instances usable in place of a model path, e.g. `builtin:meeting_grid_2x2`
BUILTIN_PREFIX = "builtin:"
####
#################################################################################
####
# controllers
#
# random initialization: uniform(0,1) entries floored at INIT_FLOOR, then normalized per row
INIT_FLOOR = 1e-3
# after each M-step every non-structural-zero entry is kept at or above PROB_FLOOR
PROB_FLOOR = 1e-12
# node counts (agent 1, agent 2)
NODES = (2, 2)
####
#################################################################################
####
# evaluation
#
# max-norm Bellman residual accepted from exact evaluation
EVAL_TOL = 1e-9
# "iterative" (value iteration) or "direct" (linear solve); "direct" is refused above the limit
EVAL_METHOD = "iterative"
DIRECT_SOLVE_LIMIT = 5000
# default simulation horizon is the smallest h with gamma^h < SIM_BIAS
SIM_BIAS = 1e-6
SIM_EPISODES = 10000
# episodes are simulated in blocks, block i draws from the stream (seed, i)
SIM_BLOCK_SIZE = 1024
####
#################################################################################
####
# EM
#
MAX_ITERS = 1000
# stop when the relative likelihood improvement falls below LIK_TOL
LIK_TOL = 1e-8
# "fixed:K" or "adaptive:EPS"
# the ratio rule keeps the (1 - gamma) prior factor on both sides: an all-ones likelihood
# at gamma = 0.9, EPS = 1e-6 stops at K = 110 (k = 55); k ~ 66 would be gamma^(2k) <= EPS alone
CUTOFF = "adaptive:1e-8"
# the adaptive cutoff never exceeds ceil(log(CUTOFF_TARGET) / log(gamma))
CUTOFF_TARGET = 1e-9
# exact value audit every n iterations (0 disables the audit, the final policy is always audited)
AUDIT_EVERY = 10
# M-step rows with a normalizer below ZERO_NORMALIZER abort if the node carries
# more than REACHABLE_MASS of forward occupancy, otherwise they keep their old values
ZERO_NORMALIZER = 1e-300
REACHABLE_MASS = 1e-12
# the E/M-step sums run over successor tuples in chunks of at most this many
# tuple x node-combination products
ENTRY_CHUNK = 1 << 22
####
#################################################################################
####
# solve / bench driver
#
RESTARTS = 10
SEED = 0
# threads running restarts concurrently
JOBS = 1
# "json" or "csv"
OUTPUT_FORMAT = "json"
####
#################################################################################
####
# exit codes
EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_NUMERICAL_ABORT = 2
EXIT_BENCH_MISS = 3
####
#################################################################################
####
# logging setup
# produces logfiles of two different levels datestamped in the log dir
LOG_DIR = os.path.join(OUTPUT_DIR, "logs")
LOG_FILE = os.path.join(LOG_DIR, f"planlog_{TIMESTAMP}.log")
####
# debug directory
DEBUG_DIR = os.path.join(LOG_DIR, "debug_info")
DEBUG_LOG_FILE = os.path.join(DEBUG_DIR, f"planlog_{TIMESTAMP}_DEBUG.log")
# how many log files to keep in each of the log dirs
KEEP_LOGS = 5
####
#################################################################################
####
# bench results table
RESULT_COLUMNS = ["problem", "n1", "n2", "restart", "iters", "likelihood", "value", "ms"]
####
