"""Finite stochastic shortest path MDPs: model, simulation and exact solvers.

States are 0-based. A model with ``p`` nonterminal states stores the terminal
state implicitly as index ``p``: every transition row has ``p + 1`` entries and
the last one is the probability of terminating.  Actions are padded to the
largest action count; padded (infeasible) actions carry all-zero rows and are
masked out everywhere.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .exceptions import ConfigurationError, NonConvergenceError, ProperPolicyError
from .validation import check_rng

PROB_ATOL = 1e-12
RCOND_MIN = 1e-12
DEFAULT_STEP_CAP = 10**6

__all__ = [
    "MdpModel",
    "StationaryRandPolicy",
    "Episode",
    "BatchResult",
    "simulate_episode",
    "simulate_batch",
    "policy_matrices",
    "policy_value",
    "q_values",
    "optimal_value",
    "check_proper",
    "visitation_counts",
    "load_model",
    "save_model",
]


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _cumulative(rows):
    """Cumulative sums along the last axis, with the tail after the last
    positive entry pinned to exactly 1 so a uniform draw in [0, 1) can never
    land on a zero-probability outcome."""
    cum = np.cumsum(rows, axis=-1)
    positive = rows > 0
    n = rows.shape[-1]
    last = n - 1 - np.argmax(positive[..., ::-1], axis=-1)
    idx = np.arange(n)
    cum = np.where(idx >= last[..., None], 1.0, cum)
    return cum


@dataclass(frozen=True, eq=False)
class MdpModel:
    """A finite SSP with ``p`` nonterminal states and an absorbing terminal state.

    Parameters
    ----------
    transition : array, shape (p, A, p + 1)
        ``transition[s, a, j]`` is ``p(j | s, a)``; column ``p`` is the terminal.
    cost : array, shape (p, A, p + 1)
        Single-stage cost ``g(s, a, j)``.
    initial_dist : array, shape (p,)
        Initial state distribution over nonterminal states.
    actions_per_state : sequence of int
        ``|A(s)|``; actions ``>= actions_per_state[s]`` are padding.
    """

    transition: np.ndarray
    cost: np.ndarray
    initial_dist: np.ndarray
    actions_per_state: tuple = field(default=None)

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        if P.ndim != 3 or P.shape[2] != P.shape[0] + 1:
            raise ConfigurationError(
                f"transition must have shape (p, A, p + 1), got {P.shape}")
        p, A, _ = P.shape
        if p < 1 or A < 1:
            raise ConfigurationError("need at least one state and one action")
        g = np.asarray(self.cost, dtype=float)
        if g.shape != P.shape:
            raise ConfigurationError(
                f"cost shape {g.shape} does not match transition shape {P.shape}")
        nu = np.asarray(self.initial_dist, dtype=float)
        if nu.shape != (p,):
            raise ConfigurationError(f"initial_dist must have shape ({p},), got {nu.shape}")
        counts = self.actions_per_state
        if counts is None:
            counts = [A] * p
        counts = tuple(int(c) for c in counts)
        if len(counts) != p or min(counts) < 1 or max(counts) > A:
            raise ConfigurationError(f"invalid actions_per_state {counts}")

        mask = np.arange(A)[None, :] < np.array(counts)[:, None]
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            raise ConfigurationError("transition probabilities must be finite and non-negative")
        sums = P.sum(axis=2)
        bad = np.abs(sums[mask] - 1.0) > PROB_ATOL
        if np.any(bad):
            raise ConfigurationError(
                f"transition rows must sum to 1 within {PROB_ATOL}; "
                f"worst deviation {np.max(np.abs(sums[mask] - 1.0)):.3e}")
        if np.any(P[~mask] != 0):
            raise ConfigurationError("padded actions must have all-zero transition rows")
        if not np.all(np.isfinite(g[mask])):
            raise ConfigurationError("costs must be finite")
        g = np.where(mask[:, :, None], g, 0.0)
        if not np.all(np.isfinite(nu)) or np.any(nu < 0) or abs(nu.sum() - 1.0) > PROB_ATOL:
            raise ConfigurationError("initial_dist must be a probability vector")

        object.__setattr__(self, "transition", _readonly(P))
        object.__setattr__(self, "cost", _readonly(g))
        object.__setattr__(self, "initial_dist", _readonly(nu))
        object.__setattr__(self, "actions_per_state", counts)

    @classmethod
    def from_lists(cls, transitions, costs, nu):
        """Build a model from ragged nested lists.

        ``transitions[s][a]`` is a length ``p + 1`` probability list (terminal
        last).  ``costs[s][a]`` is either a matching list or a scalar applied
        to every successor.
        """
        p = len(transitions)
        counts = [len(row) for row in transitions]
        A = max(counts)
        P = np.zeros((p, A, p + 1))
        g = np.zeros((p, A, p + 1))
        for s in range(p):
            if len(costs[s]) != counts[s]:
                raise ConfigurationError(f"state {s}: cost/transition action counts differ")
            for a in range(counts[s]):
                row = np.asarray(transitions[s][a], dtype=float)
                if row.shape != (p + 1,):
                    raise ConfigurationError(
                        f"transition row ({s}, {a}) must have length {p + 1}")
                P[s, a] = row
                g[s, a] = np.broadcast_to(np.asarray(costs[s][a], dtype=float), (p + 1,))
        return cls(P, g, np.asarray(nu, dtype=float), counts)

    @property
    def num_nonterminal(self):
        return self.transition.shape[0]

    @property
    def terminal(self):
        return self.transition.shape[0]

    @property
    def max_actions(self):
        return self.transition.shape[1]

    @property
    def num_params(self):
        return int(sum(self.actions_per_state))

    @cached_property
    def action_mask(self):
        counts = np.array(self.actions_per_state)
        m = np.arange(self.max_actions)[None, :] < counts[:, None]
        m.setflags(write=False)
        return m

    @cached_property
    def expected_cost(self):
        """``gbar(s, a) = sum_j p(j|s,a) g(s,a,j)``, zero on padded actions."""
        gbar = np.einsum("saj,saj->sa", self.transition, self.cost)
        gbar.setflags(write=False)
        return gbar

    @cached_property
    def _cum_transition(self):
        return _cumulative(self.transition)

    @cached_property
    def _sampling_tables(self):
        # nested python lists for the scalar simulator (bisect is far cheaper
        # than numpy calls at one draw per step)
        cum = self._cum_transition
        rows = [[cum[s, a].tolist() for a in range(n)]
                for s, n in enumerate(self.actions_per_state)]
        costs = [[self.cost[s, a].tolist() for a in range(n)]
                 for s, n in enumerate(self.actions_per_state)]
        nu_cum = _cumulative(self.initial_dist).tolist()
        return rows, costs, nu_cum

    @cached_property
    def _flat_transition_keys(self):
        p, A, _ = self.transition.shape
        cum = self._cum_transition.reshape(p * A, p + 1)
        return (np.arange(p * A)[:, None] + cum).ravel()

    def to_dict(self):
        p = self.num_nonterminal
        counts = self.actions_per_state
        return {
            "p": p,
            "actions": list(counts),
            "transitions": [[self.transition[s, a].tolist() for a in range(counts[s])]
                            for s in range(p)],
            "costs": [[self.cost[s, a].tolist() for a in range(counts[s])]
                      for s in range(p)],
            "nu": self.initial_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            p = int(data["p"])
            counts = [int(c) for c in data["actions"]]
            transitions, costs, nu = data["transitions"], data["costs"], data["nu"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed model document: {exc}") from exc
        if len(transitions) != p or len(counts) != p:
            raise ConfigurationError("model document: 'p' disagrees with list lengths")
        if [len(r) for r in transitions] != counts:
            raise ConfigurationError("model document: 'actions' disagrees with transitions")
        return cls.from_lists(transitions, costs, nu)


def load_model(source):
    """Load a model from a JSON path or an already-parsed dict."""
    if isinstance(source, dict):
        return MdpModel.from_dict(source)
    with open(source) as fh:
        return MdpModel.from_dict(json.load(fh))


def save_model(model, path):
    Path(path).write_text(json.dumps(model.to_dict(), indent=1))


@dataclass(frozen=True, eq=False)
class StationaryRandPolicy:
    """Per-state action distributions, shape (p, A) with zeros on padded actions."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2:
            raise ConfigurationError("probs must be a 2-D array")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ConfigurationError("policy probabilities must be finite and non-negative")
        if np.any(np.abs(probs.sum(axis=1) - 1.0) > PROB_ATOL):
            raise ConfigurationError("policy rows must sum to 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, model):
        mask = model.action_mask
        return cls(mask / mask.sum(axis=1, keepdims=True))

    @classmethod
    def deterministic(cls, model, actions):
        probs = np.zeros((model.num_nonterminal, model.max_actions))
        probs[np.arange(model.num_nonterminal), np.asarray(actions, dtype=int)] = 1.0
        return cls(probs)


def _as_probs(model, policy):
    probs = policy.probs if isinstance(policy, StationaryRandPolicy) else np.asarray(policy, float)
    expected = (model.num_nonterminal, model.max_actions)
    if probs.shape != expected:
        raise ConfigurationError(f"policy shape {probs.shape} does not match model {expected}")
    if np.any(probs[~model.action_mask] > 0):
        raise ConfigurationError("policy puts mass on infeasible actions")
    return probs


@dataclass
class Episode:
    """One trajectory. ``steps`` holds ``(state, action, cost, next_state)``."""

    steps: list
    total_return: float
    terminated: bool
    truncated: bool

    @property
    def length(self):
        return len(self.steps)

    def tail_returns(self):
        """``G_k = sum_{j >= k} g_j`` for every step, by reverse accumulation."""
        out = np.empty(len(self.steps))
        acc = 0.0
        for k in range(len(self.steps) - 1, -1, -1):
            acc += self.steps[k][2]
            out[k] = acc
        return out


def simulate_episode(model, policy, rng=None, step_cap=DEFAULT_STEP_CAP):
    """Roll one episode from a state drawn from the initial distribution.

    The episode stops on reaching the terminal state or after ``step_cap``
    steps, in which case it is flagged ``truncated``.
    """
    if step_cap < 1:
        raise ConfigurationError("step_cap must be >= 1")
    probs = _as_probs(model, policy)
    rng = check_rng(rng)
    trans_cum, costs, nu_cum = model._sampling_tables
    pol_cum = [row[:n] for row, n in zip(_cumulative(probs).tolist(), model.actions_per_state)]
    terminal = model.terminal
    # uniforms are pulled in geometrically growing chunks; unused ones are dropped
    chunk = 64
    buf = rng.random(chunk).tolist()
    pos = 1

    s = bisect_right(nu_cum, buf[0])
    steps = []
    append = steps.append
    total = 0.0
    for _ in range(step_cap):
        if pos + 2 > len(buf):
            chunk = min(chunk * 2, 1 << 16)
            buf = rng.random(chunk).tolist()
            pos = 0
        row = pol_cum[s]
        a = bisect_right(row, buf[pos])
        if a >= len(row):
            a = len(row) - 1
        nxt = bisect_right(trans_cum[s][a], buf[pos + 1])
        pos += 2
        if nxt > terminal:
            nxt = terminal
        c = costs[s][a][nxt]
        append((s, a, c, nxt))
        total += c
        if nxt == terminal:
            return Episode(steps, total, True, False)
        s = nxt
    return Episode(steps, total, False, True)


@dataclass
class BatchResult:
    returns: np.ndarray
    lengths: np.ndarray
    truncated: np.ndarray
    initial_states: np.ndarray


StepCallback = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray], None]


def simulate_batch(model, policy, n, rng=None, step_cap=DEFAULT_STEP_CAP,
                   aligned=False, on_step: Optional[StepCallback] = None):
    """Simulate ``n`` independent episodes at once.

    Parameters
    ----------
    policy : StationaryRandPolicy or array
        Either one shared table of shape (p, A) or one table per episode,
        shape (n, p, A).
    aligned : bool
        If True, two full length-``n`` uniform vectors are drawn at every time
        step, so episode ``i`` at step ``k`` always consumes the same draws.
        Reusing the seed then gives common random numbers across policies.
    on_step : callable, optional
        Called as ``on_step(idx, state, action, cost, cost_before)`` once per
        time step for the episodes still running (``idx`` are unique).
    """
    rng = check_rng(rng)
    p, A = model.num_nonterminal, model.max_actions
    if isinstance(policy, StationaryRandPolicy):
        policy = policy.probs
    probs = np.asarray(policy, dtype=float)
    per_episode = probs.ndim == 3
    if per_episode:
        if probs.shape != (n, p, A):
            raise ConfigurationError(f"per-episode policy must have shape {(n, p, A)}")
        if np.any(probs[:, ~model.action_mask] > 0):
            raise ConfigurationError("policy puts mass on infeasible actions")
    else:
        probs = _as_probs(model, probs)
    cost = model.cost
    K = p + 1

    s = np.searchsorted(_cumulative(model.initial_dist), rng.random(n), side="right")
    s = np.minimum(s, p - 1)
    start = s.copy()
    G = np.zeros(n)
    T = np.zeros(n, dtype=np.int64)
    truncated = np.zeros(n, dtype=bool)
    # state of the running episodes only, compacted whenever some terminate
    idx = np.arange(n)
    g = np.zeros(n)
    joint = not (per_episode or aligned)
    if joint:
        # one draw per step from the joint (action, next state) law of each state
        table = _cumulative((probs[:, :, None] * model.transition).reshape(p, A * K))
        keys = (np.arange(p)[:, None] + table).ravel()
        width = A * K
    else:
        pol_cum = _cumulative(probs)[..., :-1]
        keys = model._flat_transition_keys
    steps = 0
    while idx.size and steps < step_cap:
        if joint:
            u = rng.random(idx.size)
            k = np.searchsorted(keys, s + u, side="right") - s * width
            a, nxt = np.divmod(np.minimum(k, width - 1), K)
        else:
            if aligned:
                ua = rng.random(n)[idx]
                us = rng.random(n)[idx]
            else:
                ua = rng.random(idx.size)
                us = rng.random(idx.size)
            rows = pol_cum[idx, s] if per_episode else pol_cum[s]
            a = (rows <= ua[:, None]).sum(axis=1)
            row_id = s * A + a
            nxt = np.minimum(np.searchsorted(keys, row_id + us, side="right") - row_id * K, p)
        c = cost[s, a, nxt]
        if on_step is not None:
            on_step(idx, s, a, c, g)
        g = g + c
        steps += 1
        done = nxt == p
        if done.any():
            G[idx[done]] = g[done]
            T[idx[done]] = steps
            keep = ~done
            idx, s, g = idx[keep], nxt[keep], g[keep]
        else:
            s = nxt
    G[idx] = g
    T[idx] = steps
    truncated[idx] = True
    return BatchResult(G, T, truncated, start)


def policy_matrices(model, policy):
    """Return ``(P_phi, gbar_phi)`` restricted to nonterminal states."""
    probs = _as_probs(model, policy)
    P = np.einsum("sa,saj->sj", probs, model.transition[:, :, :-1])
    g = np.einsum("sa,sa->s", probs, model.expected_cost)
    return P, g


def _solve_proper(M, rhs, what):
    try:
        cond = np.linalg.cond(M, 1)
    except np.linalg.LinAlgError:
        cond = np.inf
    rcond = 1.0 / cond if np.isfinite(cond) and cond > 0 else 0.0
    if rcond < RCOND_MIN:
        raise ProperPolicyError(
            f"{what}: system is singular or nearly so (rcond={rcond:.3e}); "
            "the policy is not proper", rcond=rcond)
    return np.linalg.solve(M, rhs)


def policy_value(model, policy):
    """Exact value of a proper stationary randomized policy.

    Solves ``(I - P_phi) V = gbar_phi`` over nonterminal states.

    Raises
    ------
    ProperPolicyError
        If the reciprocal condition number of ``I - P_phi`` is below 1e-12.
    """
    P, g = policy_matrices(model, policy)
    return _solve_proper(np.eye(len(g)) - P, g, "policy_value")


def q_values(model, policy, V=None):
    """``Q(s, a) = gbar(s, a) + sum_j p(j|s,a) V(j)``; NaN on padded actions."""
    if V is None:
        V = policy_value(model, policy)
    Q = model.expected_cost + model.transition[:, :, :-1] @ V
    return np.where(model.action_mask, Q, np.nan)


def _bellman(model, V):
    Q = model.expected_cost + model.transition[:, :, :-1] @ V
    return np.where(model.action_mask, Q, np.inf)


def optimal_value(model, tol=1e-10, max_iters=100_000):
    """Value iteration from ``V = 0`` until the sup-norm update drops below ``tol``.

    Returns
    -------
    V : ndarray, shape (p,)
    greedy : ndarray of int, shape (p,)
        Minimizing action per state; ties go to the lowest action index.
    """
    V = np.zeros(model.num_nonterminal)
    residual = np.inf
    for _ in range(max_iters):
        V_new = _bellman(model, V).min(axis=1)
        residual = np.max(np.abs(V_new - V))
        V = V_new
        if residual < tol:
            break
    else:
        raise NonConvergenceError(
            f"value iteration did not converge in {max_iters} iterations "
            f"(last residual {residual:.3e})", residual=residual)
    greedy = np.argmin(_bellman(model, V), axis=1)
    return V, greedy


def check_proper(model, policy):
    """Return ``(is_proper, p_hat)`` with ``p_hat = max_s P(X_p != t | X_0 = s)``."""
    P, _ = policy_matrices(model, policy)
    Pp = np.linalg.matrix_power(P, model.num_nonterminal)
    p_hat = float(Pp.sum(axis=1).max())
    return p_hat < 1.0, p_hat


def visitation_counts(model, policy, start=None):
    """Expected number of visits to each nonterminal state before termination.

    ``start`` is a state index, a distribution over nonterminal states, or
    None for the model's initial distribution.
    """
    p = model.num_nonterminal
    if start is None:
        e = np.asarray(model.initial_dist, dtype=float)
    elif np.isscalar(start):
        if not 0 <= int(start) < p:
            raise ConfigurationError(f"start state {start} out of range")
        e = np.zeros(p)
        e[int(start)] = 1.0
    else:
        e = np.asarray(start, dtype=float)
        if e.shape != (p,):
            raise ConfigurationError("start distribution has the wrong length")
    P, _ = policy_matrices(model, policy)
    return _solve_proper(np.eye(p) - P.T, e, "visitation_counts")
