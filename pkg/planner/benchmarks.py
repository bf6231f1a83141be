# This file is part of the decem project.
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
benchmarks.py

Benchmark instances that are generated rather than read from a `.dpomdp` file.
They are addressed as `builtin:<name>` wherever a model path is accepted, and
`run_planner.py export-model` writes them out as `.dpomdp` text.

Meeting on a grid:
    Two agents move on an n x n grid, starting in opposite corners. Actions are
    up, down, left, right and stay; a move succeeds with probability `success`,
    otherwise the agent stays where it is. Moving into a wall also leaves the agent
    in place. Each agent observes the column it is in (on the 2x2 grid: wall on the
    left or wall on the right). The team earns 1 whenever both agents share a cell.

Dependencies: numpy.
"""

import itertools

import numpy as np

from .model import DecPomdpModel

MOVES = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1), "stay": (0, 0)}


def _cell_moves(size, success):
    """P(cell'|cell, action) as [cell, action, cell']."""
    cells = size * size
    table = np.zeros((cells, len(MOVES), cells))
    for cell in range(cells):
        row, col = divmod(cell, size)
        for a, (d_row, d_col) in enumerate(MOVES.values()):
            target_row, target_col = row + d_row, col + d_col
            if 0 <= target_row < size and 0 <= target_col < size:
                target = target_row * size + target_col
            else:
                target = cell
            table[cell, a, target] += success
            table[cell, a, cell] += 1.0 - success
    return table


def meeting_grid(size=2, success=0.6, discount=0.9):
    """
    The meeting-on-a-grid problem.

    States are (cell of agent 1, cell of agent 2), cells numbered row-major, so the
    2x2 grid has 16 states, 5 actions and 2 observations per agent.

    Args:
        size (int): Grid side length. Defaults to 2.
        success (float): Probability that a move succeeds. Defaults to 0.6.
        discount (float): Discount factor. Defaults to 0.9.

    Returns:
        DecPomdpModel: The instance.
    """
    if size < 2:
        raise ValueError(f"The grid needs at least 2x2 cells, got {size}x{size}.")
    cells = size * size
    moves = _cell_moves(size, success)
    num_actions = len(MOVES)

    # the agents move independently: [c1, c2, a, b, c1', c2']
    transition = np.einsum("iak,jbl->ijabkl", moves, moves)
    transition = transition.reshape(cells * cells, num_actions, num_actions, cells * cells)

    column = np.arange(cells) % size
    # deterministic own-column observation: [c1', c2', y, z]
    seen = np.zeros((cells, cells, size, size))
    for c1, c2 in itertools.product(range(cells), repeat=2):
        seen[c1, c2, column[c1], column[c2]] = 1.0
    observation = np.broadcast_to(seen.reshape(cells * cells, 1, 1, size, size),
                                  (cells * cells, num_actions, num_actions, size, size))

    reward = np.zeros((cells * cells, num_actions, num_actions))
    for cell in range(cells):
        reward[cell * cells + cell] = 1.0

    initial_belief = np.zeros(cells * cells)
    initial_belief[0 * cells + (cells - 1)] = 1.0

    if size == 2:
        obs_names = ("wall-left", "wall-right")
    else:
        obs_names = tuple(f"col{c}" for c in range(size))
    return DecPomdpModel(
        transition=transition, observation=observation, reward=reward, discount=discount,
        initial_belief=initial_belief,
        state_names=tuple(f"{c1}-{c2}" for c1, c2 in itertools.product(range(cells), repeat=2)),
        action_names_1=tuple(MOVES), action_names_2=tuple(MOVES),
        obs_names_1=obs_names, obs_names_2=obs_names)


BUILTIN_MODELS = {
    "meeting_grid_2x2": lambda: meeting_grid(2),
    "meeting_grid_3x3": lambda: meeting_grid(3),
}


def builtin_model(name):
    """
    Generate a built-in instance by name.

    Raises:
        KeyError: For unknown names, listing the available ones.
    """
    if name not in BUILTIN_MODELS:
        raise KeyError(f"Unknown builtin model '{name}', available: {', '.join(sorted(BUILTIN_MODELS))}.")
    return BUILTIN_MODELS[name]()
