"""Gradient estimators for ``F(theta) = sum_s nu(s) V_theta(s)``.

``sf_estimate``
    One-measurement Gaussian smoothed functional: run a single episode at
    ``theta + delta * Delta`` and return ``Delta * G / delta``.
``lr_estimate``
    Likelihood-ratio (Reinforce) estimate ``sum_k score(s_k, a_k) G_k``.
``kw_estimate``
    Kiefer-Wolfowitz central differences, ``2 d m`` episodes per call.
``exact_gradient``
    Policy-gradient-theorem oracle from linear solves.

The ``*_monte_carlo`` helpers average many estimates with vectorized batch
simulation, in fixed-size chunks with per-chunk seed streams so the result
depends only on ``(seed, n, chunk)``.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigurationError
from .mdp import DEFAULT_STEP_CAP, policy_value, q_values, simulate_batch, visitation_counts
from . import mdp as _mdp
from .policy import ParamPolicy, project
from .validation import check_count, check_positive, check_rng, seed_of

__all__ = [
    "EstimatorKind",
    "GradEstimate",
    "Perturbation",
    "MonteCarloSummary",
    "sample_perturbation",
    "sf_estimate",
    "lr_estimate",
    "kw_estimate",
    "exact_gradient",
    "sf_monte_carlo",
    "lr_monte_carlo",
    "bias_sweep",
    "write_bias_csv",
    "BIAS_CSV_COLUMNS",
]

BIAS_CSV_COLUMNS = ("delta", "coord", "mc_mean", "exact", "std_err", "n_samples")


class EstimatorKind(str, enum.Enum):
    SF1 = "SF1"
    LR = "LR"
    KW = "KW"
    EXACT = "Exact"


@dataclass
class GradEstimate:
    grad: np.ndarray
    kind: EstimatorKind
    delta: float = 0.0
    episodes_used: int = 0
    seed: Optional[int] = None
    truncated: int = 0

    def __post_init__(self):
        self.grad = np.asarray(self.grad, dtype=float)
        if not np.all(np.isfinite(self.grad)):
            raise FloatingPointError(f"{self.kind.value} estimate has non-finite entries")


@dataclass(frozen=True)
class Perturbation:
    delta_vec: np.ndarray


def sample_perturbation(rng, d):
    """``d`` independent standard normal draws."""
    d = check_count(d, "d")
    return Perturbation(check_rng(rng).standard_normal(d))


def _perturbed_params(policy, delta, vec, project_perturbation):
    at = policy.theta + delta * vec
    return project(policy.box, at) if project_perturbation else at


def sf_estimate(model, policy, delta, rng=None, step_cap=DEFAULT_STEP_CAP,
                project_perturbation=False):
    """One-measurement SF gradient estimate from a single episode.

    The episode runs under ``theta + delta * Delta``; by default that point is
    not projected back onto the box (set ``project_perturbation`` to clamp it).

    Returns
    -------
    (GradEstimate, Episode)
    """
    delta = check_positive(delta, "delta")
    seed = seed_of(rng)
    rng = check_rng(rng)
    vec = sample_perturbation(rng, policy.dim).delta_vec
    at = _perturbed_params(policy, delta, vec, project_perturbation)
    ep = _mdp.simulate_episode(model, policy.dists(at), rng, step_cap)
    est = GradEstimate(vec * (ep.total_return / delta), EstimatorKind.SF1, delta, 1, seed,
                       int(ep.truncated))
    return est, ep


def _score_weighted_sum(policy, probs, states, actions, weights):
    """``sum_k w_k * score(s_k, a_k)`` for tabular softmax."""
    acc = np.zeros(probs.shape)
    np.add.at(acc, (states, actions), weights)
    per_state = np.zeros(probs.shape[0])
    np.add.at(per_state, states, weights)
    acc -= probs * per_state[:, None]
    return policy.flatten(acc)


def lr_estimate(model, policy, rng=None, step_cap=DEFAULT_STEP_CAP):
    """Likelihood-ratio estimate from one episode under the unperturbed policy."""
    seed = seed_of(rng)
    rng = check_rng(rng)
    probs = policy.dists()
    ep = _mdp.simulate_episode(model, probs, rng, step_cap)
    grad = lr_from_episode(policy, probs, ep)
    return GradEstimate(grad, EstimatorKind.LR, 0.0, 1, seed, int(ep.truncated))


def lr_from_episode(policy, probs, ep):
    """``sum_k score(s_k, a_k) G_k`` for an episode generated under ``probs``."""
    if not ep.steps:
        return np.zeros(policy.dim)
    states = np.fromiter((st[0] for st in ep.steps), dtype=np.intp, count=ep.length)
    actions = np.fromiter((st[1] for st in ep.steps), dtype=np.intp, count=ep.length)
    return _score_weighted_sum(policy, probs, states, actions, ep.tail_returns())


def kw_estimate(model, policy, delta, episodes_per_side=1, rng=None,
                step_cap=DEFAULT_STEP_CAP):
    """Central finite differences of mean returns at ``theta +/- delta e_i``."""
    delta = check_positive(delta, "delta")
    m = check_count(episodes_per_side, "episodes_per_side")
    seed = seed_of(rng)
    rng = check_rng(rng)
    d = policy.dim
    grad = np.empty(d)
    truncated = 0
    for i in range(d):
        means = []
        for sign in (1.0, -1.0):
            at = policy.theta.copy()
            at[i] += sign * delta
            probs = policy.dists(at)
            total = 0.0
            for _ in range(m):
                ep = _mdp.simulate_episode(model, probs, rng, step_cap)
                total += ep.total_return
                truncated += ep.truncated
            means.append(total / m)
        grad[i] = (means[0] - means[1]) / (2.0 * delta)
    return GradEstimate(grad, EstimatorKind.KW, delta, 2 * d * m, seed, truncated)


def exact_gradient(model, policy, start=None, normalize=False):
    """Gradient of the start-weighted value via the policy gradient theorem.

    Computes ``sum_s eta(s) sum_a grad phi(s, a) Q(s, a)`` with ``eta`` the
    expected visit counts from ``start`` (the initial distribution when
    None).  For tabular softmax the ``(s, b)`` coordinate reduces to
    ``eta(s) phi(s, b) (Q(s, b) - V(s))``.

    ``normalize=True`` divides by ``sum_s eta(s)``, i.e. weights states by
    the normalized visitation distribution instead of raw counts.  That
    variant is proportional to the true gradient, not equal to it.
    """
    probs = policy.dists()
    V = policy_value(model, probs)
    Q = q_values(model, probs, V)
    eta = visitation_counts(model, probs, start)
    Q = np.where(model.action_mask, Q, 0.0)
    # baseline sum_a phi Q equals V; using it makes single-action blocks exactly 0
    adv = np.where(model.action_mask, Q - (probs * Q).sum(axis=1, keepdims=True), 0.0)
    grad = policy.flatten(eta[:, None] * probs * adv)
    if normalize:
        grad = grad / eta.sum()
    return GradEstimate(grad, EstimatorKind.EXACT, 0.0, 0)


@dataclass
class MonteCarloSummary:
    """Per-coordinate sample moments of ``n`` i.i.d. estimates."""

    mean: np.ndarray
    var: np.ndarray
    n: int
    truncated: int = 0
    kind: EstimatorKind = EstimatorKind.SF1
    delta: float = 0.0

    @property
    def std_err(self):
        return np.sqrt(self.var / self.n)


class _Moments:
    """Chan-style merge of chunk means and sums of squared deviations."""

    def __init__(self, d):
        self.n = 0
        self.mean = np.zeros(d)
        self.m2 = np.zeros(d)

    def add(self, x):
        k = x.shape[0]
        mu = x.mean(axis=0)
        m2 = ((x - mu) ** 2).sum(axis=0)
        tot = self.n + k
        diff = mu - self.mean
        self.mean = self.mean + diff * (k / tot)
        self.m2 = self.m2 + m2 + diff**2 * (self.n * k / tot)
        self.n = tot

    def var(self):
        return self.m2 / (self.n - 1) if self.n > 1 else np.full_like(self.m2, np.nan)


def _chunk_streams(seed, n, chunk):
    """Yield ``(size, perturbation_rng, episode_rng)`` per chunk."""
    root = np.random.SeedSequence(seed)
    n_chunks = -(-n // chunk)
    for i, child in enumerate(root.spawn(n_chunks)):
        size = min(chunk, n - i * chunk)
        pert_ss, ep_ss = child.spawn(2)
        yield size, np.random.default_rng(pert_ss), np.random.default_rng(ep_ss)


def sf_monte_carlo(model, policy, delta, n, seed=0, step_cap=DEFAULT_STEP_CAP,
                   project_perturbation=False, chunk=100_000, aligned=True):
    """Moments of ``n`` independent one-measurement SF estimates.

    Calls with the same ``seed`` (and ``n``, ``chunk``) but different
    ``delta`` share the perturbation draws and, with ``aligned=True``, the
    per-step uniforms of every episode, i.e. they use common random numbers.
    """
    delta = check_positive(delta, "delta")
    n = check_count(n, "n", 2)
    acc = _Moments(policy.dim)
    truncated = 0
    for size, pert_rng, ep_rng in _chunk_streams(seed, n, chunk):
        vec = pert_rng.standard_normal((size, policy.dim))
        at = _perturbed_params(policy, delta, vec, project_perturbation)
        res = simulate_batch(model, policy.dists(at), size, ep_rng, step_cap, aligned=aligned)
        truncated += int(res.truncated.sum())
        acc.add(vec * (res.returns / delta)[:, None])
    return MonteCarloSummary(acc.mean, acc.var(), n, truncated, EstimatorKind.SF1, delta)


def lr_monte_carlo(model, policy, n, seed=0, step_cap=DEFAULT_STEP_CAP, chunk=100_000):
    """Moments of ``n`` independent likelihood-ratio estimates."""
    n = check_count(n, "n", 2)
    probs = policy.dists()
    acc = _Moments(policy.dim)
    truncated = 0
    for size, _, ep_rng in _chunk_streams(seed, n, chunk):
        # score sums S and prefix-cost-weighted score sums W; the estimate is
        # G * S - W since the tail return is G minus the cost accrued so far
        S = np.zeros((size,) + probs.shape)
        W = np.zeros((size,) + probs.shape)

        def on_step(idx, s, a, c, before):
            S[idx, s, a] += 1.0
            S[idx, s, :] -= probs[s]
            W[idx, s, a] += before
            W[idx, s, :] -= probs[s] * before[:, None]

        res = simulate_batch(model, probs, size, ep_rng, step_cap, on_step=on_step)
        truncated += int(res.truncated.sum())
        table = res.returns[:, None, None] * S - W
        acc.add(policy.flatten(table))
    return MonteCarloSummary(acc.mean, acc.var(), n, truncated, EstimatorKind.LR, 0.0)


def bias_sweep(model, policy, deltas, n_samples, seed=0, step_cap=DEFAULT_STEP_CAP,
               project_perturbation=False, chunk=100_000):
    """SF Monte Carlo means against the exact gradient for several deltas.

    All deltas reuse the same seed, hence common random numbers.  Returns
    ``(rows, summaries)`` where each row carries the bias CSV columns.
    """
    n_samples = check_count(n_samples, "n_samples", 2)
    exact = exact_gradient(model, policy).grad
    rows, summaries = [], []
    for delta in deltas:
        summ = sf_monte_carlo(model, policy, float(delta), n_samples, seed, step_cap,
                              project_perturbation, chunk)
        summaries.append(summ)
        for i in range(policy.dim):
            rows.append({
                "delta": float(delta),
                "coord": i,
                "mc_mean": float(summ.mean[i]),
                "exact": float(exact[i]),
                "std_err": float(summ.std_err[i]),
                "n_samples": n_samples,
            })
    return rows, summaries


def write_bias_csv(rows, path_or_file):
    def _write(fh):
        w = csv.DictWriter(fh, fieldnames=BIAS_CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)
