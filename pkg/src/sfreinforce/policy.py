"""Box-constrained tabular softmax policies.

Parameter layout is state-major, action-minor: coordinate ``k`` of ``theta``
is the logit of ``index_map[k] = (s, a)``, listing the feasible actions of
state 0 first, then state 1, and so on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, NumericAbort
from .mdp import MdpModel, StationaryRandPolicy
from .validation import check_vector

DEFAULT_BOUND = 10.0

__all__ = ["BoxConstraint", "ParamPolicy", "project", "softmax_rows"]


@dataclass(frozen=True, eq=False)
class BoxConstraint:
    """The rectangle ``prod_i [lower_i, upper_i]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float, ndmin=1)
        hi = np.array(self.upper, dtype=float, ndmin=1)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ConfigurationError("box bounds must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ConfigurationError("box bounds must be finite")
        if np.any(lo >= hi):
            raise ConfigurationError("box needs lower < upper in every coordinate")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def uniform(cls, d, low=-DEFAULT_BOUND, high=DEFAULT_BOUND):
        return cls(np.full(d, float(low)), np.full(d, float(high)))

    @property
    def dim(self):
        return self.lower.shape[0]

    def project(self, x):
        return project(self, x)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def active(self, x):
        """Boolean mask of coordinates sitting on a bound."""
        x = np.asarray(x, dtype=float)
        return (x <= self.lower) | (x >= self.upper)


def project(box, x):
    """Componentwise clamp of ``x`` into ``box``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != box.dim:
        raise ConfigurationError(f"expected {box.dim} coordinates, got {x.shape[-1]}")
    return np.minimum(box.upper, np.maximum(box.lower, x))


def softmax_rows(logits):
    """Row softmax over the last axis; ``-inf`` entries get probability 0."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class ParamPolicy:
    """Tabular softmax policy with one logit per feasible state-action pair.

    Parameters
    ----------
    actions_per_state : sequence of int or MdpModel
    theta : array-like, optional
        Initial parameter; defaults to zeros (the uniform policy).  It is
        projected onto ``box``.
    box : BoxConstraint, optional
        Defaults to ``[-10, 10]`` in every coordinate.
    """

    def __init__(self, actions_per_state, theta=None, box=None):
        if isinstance(actions_per_state, MdpModel):
            actions_per_state = actions_per_state.actions_per_state
        counts = tuple(int(c) for c in actions_per_state)
        if not counts or min(counts) < 1:
            raise ConfigurationError("every state needs at least one action")
        self.actions_per_state = counts
        self.num_states = len(counts)
        self.max_actions = max(counts)
        d = sum(counts)
        self.index_map = tuple((s, a) for s, n in enumerate(counts) for a in range(n))
        states = np.array([s for s, _ in self.index_map], dtype=np.intp)
        actions = np.array([a for _, a in self.index_map], dtype=np.intp)
        self._flat = states * self.max_actions + actions
        self._offsets = np.concatenate([[0], np.cumsum(counts)])
        self.box = BoxConstraint.uniform(d) if box is None else box
        if self.box.dim != d:
            raise ConfigurationError(f"box has dimension {self.box.dim}, policy needs {d}")
        self._theta = None
        self.theta = np.zeros(d) if theta is None else theta

    @property
    def dim(self):
        return len(self.index_map)

    @property
    def theta(self):
        return self._theta

    @theta.setter
    def theta(self, value):
        value = check_vector(value, self.dim, "theta")
        th = project(self.box, value)
        th.setflags(write=False)
        self._theta = th

    def copy(self, theta=None):
        return ParamPolicy(self.actions_per_state,
                           self._theta if theta is None else theta, self.box)

    def coord(self, s, a):
        """Coordinate index of the logit of ``(s, a)``."""
        if not (0 <= s < self.num_states and 0 <= a < self.actions_per_state[s]):
            raise ConfigurationError(f"action {a} is not feasible in state {s}")
        return int(self._offsets[s] + a)

    def block(self, s):
        return slice(int(self._offsets[s]), int(self._offsets[s + 1]))

    def _params(self, at):
        if at is None:
            return self._theta
        at = np.asarray(at, dtype=float)
        if at.shape[-1] != self.dim:
            raise ConfigurationError(f"expected {self.dim} parameters, got {at.shape[-1]}")
        if not np.all(np.isfinite(at)):
            raise NumericAbort("non-finite policy logits")
        return at

    def logits(self, at=None):
        """Logit table of shape (..., p, A) with ``-inf`` on padded actions."""
        x = self._params(at)
        lead = x.shape[:-1]
        table = np.full(lead + (self.num_states * self.max_actions,), -np.inf)
        table[..., self._flat] = x
        return table.reshape(lead + (self.num_states, self.max_actions))

    def dists(self, at=None):
        """Action distributions for every state, shape (..., p, A).

        ``at`` may be any finite parameter array (or a stack of them); it is
        used as given, without projection onto the box.
        """
        return softmax_rows(self.logits(at))

    def action_dist(self, s, at=None):
        x = self._params(at)
        return softmax_rows(x[self.block(s)])

    def score(self, s, a, at=None):
        """Gradient of ``log phi(s, a)`` with respect to the parameter vector."""
        j = self.coord(s, a)
        out = np.zeros(self.dim)
        blk = self.block(s)
        out[blk] = -self.action_dist(s, at)
        out[j] += 1.0
        return out

    def materialize(self, at=None):
        return StationaryRandPolicy(self.dists(at))

    def flatten(self, table):
        """Pick the feasible entries of a (..., p, A) table in coordinate order."""
        table = np.asarray(table)
        lead = table.shape[:-2]
        return table.reshape(lead + (-1,))[..., self._flat]

    def to_dict(self):
        return {
            "theta": self._theta.tolist(),
            "index_map": [list(pair) for pair in self.index_map],
            "lower": self.box.lower.tolist(),
            "upper": self.box.upper.tolist(),
        }

    def __repr__(self):
        return f"ParamPolicy(actions_per_state={self.actions_per_state}, dim={self.dim})"
