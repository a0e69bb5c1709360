"""Benchmark SSP constructors. Every model they build is proper under any
policy that gives all actions positive probability."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from .exceptions import ConfigurationError
from .mdp import MdpModel

__all__ = ["EnvSpec", "make_gridworld", "make_random_ssp", "make_chain", "make_env",
           "GRID_MOVES"]

# (drow, dcol) for N, S, E, W
GRID_MOVES = ((-1, 0), (1, 0), (0, 1), (0, -1))


def make_gridworld(width=5, height=5, goal_cell=None, step_cost=1.0, slip_prob=0.0):
    """Gridworld whose nonterminal states are the non-goal cells.

    Actions are N, S, E, W.  The intended move happens with probability
    ``1 - slip_prob``; otherwise one of the other three directions is taken
    uniformly.  Moving into a wall leaves the agent in place.  Every step
    costs ``step_cost``, and a move that enters ``goal_cell`` ends the
    episode.  States are the non-goal cells in row-major order and the
    initial distribution is uniform over them.

    ``goal_cell`` is ``(row, col)`` and defaults to the bottom-right corner.
    """
    width, height = int(width), int(height)
    if width < 1 or height < 1:
        raise ConfigurationError("grid dimensions must be positive")
    if width * height < 2:
        raise ConfigurationError("a 1x1 grid has no non-goal cell")
    if goal_cell is None:
        goal_cell = (height - 1, width - 1)
    goal = (int(goal_cell[0]), int(goal_cell[1]))
    if not (0 <= goal[0] < height and 0 <= goal[1] < width):
        raise ConfigurationError(f"goal {goal_cell} lies outside the {height}x{width} grid")
    if not 0.0 <= slip_prob <= 0.5:
        raise ConfigurationError("slip_prob must lie in [0, 0.5]")
    if not np.isfinite(step_cost):
        raise ConfigurationError("step_cost must be finite")

    cells = [(r, c) for r in range(height) for c in range(width) if (r, c) != goal]
    index = {cell: i for i, cell in enumerate(cells)}
    p = len(cells)
    P = np.zeros((p, 4, p + 1))
    for i, (r, c) in enumerate(cells):
        for a in range(4):
            for b, (dr, dc) in enumerate(GRID_MOVES):
                prob = 1.0 - slip_prob if a == b else slip_prob / 3.0
                if prob == 0.0:
                    continue
                nr, nc = r + dr, c + dc
                if not (0 <= nr < height and 0 <= nc < width):
                    nr, nc = r, c
                j = p if (nr, nc) == goal else index[(nr, nc)]
                P[i, a, j] += prob
    g = np.full((p, 4, p + 1), float(step_cost))
    return MdpModel(P, g, np.full(p, 1.0 / p))


def make_random_ssp(p=10, actions=3, eps_terminal=0.1, cost_range=(0.0, 1.0), seed=0):
    """Random SSP where every (s, a) terminates with probability at least ``eps_terminal``.

    The remaining ``1 - eps_terminal`` mass is spread over nonterminal states
    by a flat Dirichlet draw; costs are uniform on ``cost_range`` per
    ``(s, a, s')``; the initial distribution is uniform.
    """
    p, actions = int(p), int(actions)
    if p < 1 or actions < 1:
        raise ConfigurationError("need p >= 1 and actions >= 1")
    if not 0.0 < eps_terminal <= 1.0:
        raise ConfigurationError("eps_terminal must lie in (0, 1]")
    lo, hi = float(cost_range[0]), float(cost_range[1])
    if not lo <= hi:
        raise ConfigurationError("cost_range must be (low, high) with low <= high")
    rng = np.random.default_rng(seed)
    P = np.zeros((p, actions, p + 1))
    P[:, :, :p] = (1.0 - eps_terminal) * rng.dirichlet(np.ones(p), size=(p, actions))
    P[:, :, p] = eps_terminal
    # fold rounding error into the terminal column
    P[:, :, p] += 1.0 - P.sum(axis=2)
    g = rng.uniform(lo, hi, size=(p, actions, p + 1))
    return MdpModel(P, g, np.full(p, 1.0 / p))


def make_chain(length=3, forward_cost=1.0, stay_cost=1.0, advance_prob=0.5):
    """Chain of ``length`` states; the episode ends when advancing past the last.

    Action 0 advances deterministically at ``forward_cost``.  Action 1 costs
    ``stay_cost`` and advances only with probability ``advance_prob``,
    staying put otherwise.  With deterministic advancing the value of state
    ``s`` is ``forward_cost * (length - s)``.
    """
    length = int(length)
    if length < 1:
        raise ConfigurationError("chain length must be >= 1")
    if not 0.0 < advance_prob <= 1.0:
        raise ConfigurationError("advance_prob must lie in (0, 1]")
    p = length
    P = np.zeros((p, 2, p + 1))
    g = np.zeros((p, 2, p + 1))
    for s in range(p):
        P[s, 0, s + 1] = 1.0
        P[s, 1, s + 1] = advance_prob
        P[s, 1, s] += 1.0 - advance_prob
        g[s, 0, :] = forward_cost
        g[s, 1, :] = stay_cost
    return MdpModel(P, g, np.full(p, 1.0 / p))


_BUILDERS = {
    "gridworld": make_gridworld,
    "random_ssp": make_random_ssp,
    "chain": make_chain,
}


@dataclass
class EnvSpec:
    """Named environment plus constructor keyword arguments.

    ``kind`` is one of ``gridworld``, ``random_ssp``, ``chain`` or ``file``;
    for ``file`` the single parameter ``path`` points at a model JSON document.
    """

    kind: str
    params: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict) or "kind" not in data:
            raise ConfigurationError("env spec must be an object with a 'kind' field")
        data = dict(data)
        kind = str(data.pop("kind")).lower().replace("-", "_")
        aliases = {"randomssp": "random_ssp", "grid": "gridworld"}
        kind = aliases.get(kind, kind)
        if kind not in _BUILDERS and kind != "file":
            raise ConfigurationError(f"unknown env kind {kind!r}")
        params = data.pop("params", None)
        if params is None:
            params = data
        return cls(kind, dict(params))

    def to_dict(self):
        return {"kind": self.kind, **self.params}

    def build(self):
        if self.kind == "file":
            from .mdp import load_model
            return load_model(self.params["path"])
        params = dict(self.params)
        for key in ("goal_cell", "cost_range"):
            if key in params and params[key] is not None:
                params[key] = tuple(params[key])
        try:
            return _BUILDERS[self.kind](**params)
        except TypeError as exc:
            raise ConfigurationError(f"bad parameters for {self.kind}: {exc}") from exc


def make_env(spec):
    """Build a model from an ``EnvSpec`` or its dict form."""
    if isinstance(spec, dict):
        spec = EnvSpec.from_dict(spec)
    return spec.build()
