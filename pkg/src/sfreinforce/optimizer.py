"""Projected stochastic-approximation training loops and stationarity diagnostics.

``sf_reinforce`` is the one-episode-per-update smoothed-functional scheme::

    theta(n+1) = clip(theta(n) - a(n) * Delta(n) * G(n) / delta(n))

with ``G(n)`` the return of one episode run at ``theta(n) + delta(n) Delta(n)``.
``baseline_reinforce`` and ``kw_descent`` are the likelihood-ratio and
finite-difference comparators sharing the same record format.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import mdp as _mdp
from .estimators import EstimatorKind, exact_gradient, kw_estimate, lr_from_episode
from .exceptions import ConfigurationError, NumericAbort
from .mdp import DEFAULT_STEP_CAP, StationaryRandPolicy, policy_value
from .policy import ParamPolicy, project
from .validation import check_count, check_rng, seed_of

__all__ = [
    "StepSchedule",
    "ScheduleDiagnosis",
    "RunRecord",
    "validate_schedule",
    "objective",
    "projected_grad_norm",
    "sf_reinforce",
    "baseline_reinforce",
    "kw_descent",
    "RECORD_COLUMNS",
]


@dataclass(frozen=True)
class StepSchedule:
    """``a(n) = a0 (n+1)^-alpha`` and ``delta(n) = delta0 (n+1)^-gamma``."""

    a0: float = 0.05
    alpha: float = 1.0
    delta0: float = 1.0
    gamma: float = 0.3

    def step_size(self, n):
        return self.a0 * (n + 1.0) ** -self.alpha

    def delta(self, n):
        return self.delta0 * (n + 1.0) ** -self.gamma


@dataclass(frozen=True)
class ScheduleDiagnosis:
    ok: bool
    failures: tuple = ()

    def __bool__(self):
        return self.ok

    def describe(self):
        return "schedule ok" if self.ok else "; ".join(self.failures)


def validate_schedule(schedule, perturbation=True):
    """Check the exponent conditions that make the step sizes admissible.

    Needs ``a(n) > 0``, ``sum a(n) = inf`` and ``a(n) -> 0`` (so
    ``0 < alpha <= 1``) and, when ``perturbation`` is set, ``delta(n) -> 0``
    with ``sum (a(n) / delta(n))^2 < inf`` (so ``gamma > 0`` and
    ``2 (alpha - gamma) > 1``).
    """
    s = schedule
    failures = []
    if not s.a0 > 0:
        failures.append(f"a0 must be > 0 (got {s.a0})")
    if not s.alpha > 0:
        failures.append(f"alpha must be > 0 so that a(n) -> 0 (got {s.alpha})")
    if s.alpha > 1:
        failures.append(f"alpha > 1 makes sum a(n) finite (got {s.alpha})")
    if perturbation:
        if not s.delta0 > 0:
            failures.append(f"delta0 must be > 0 (got {s.delta0})")
        if not s.gamma > 0:
            failures.append(f"gamma must be > 0 so that delta(n) -> 0 (got {s.gamma})")
        if not 2 * (s.alpha - s.gamma) > 1:
            failures.append(
                f"2 (alpha - gamma) = {2 * (s.alpha - s.gamma):g} <= 1 makes "
                "sum (a(n)/delta(n))^2 diverge")
    return ScheduleDiagnosis(not failures, tuple(failures))


def _probs(policy):
    if isinstance(policy, ParamPolicy):
        return policy.dists()
    if isinstance(policy, StationaryRandPolicy):
        return policy.probs
    return np.asarray(policy, dtype=float)


def objective(model, policy):
    """``F = sum_s nu(s) V(s)`` for a parameterized or tabular policy."""
    return float(model.initial_dist @ policy_value(model, _probs(policy)))


def projected_grad_norm(model, policy, eps=1e-6, grad=None):
    """Norm of ``(clip(theta - eps g) - theta) / eps`` with ``g`` the exact gradient.

    Equals ``|g|`` in the interior of the box and drops the components that
    push outward on active bounds.
    """
    if grad is None:
        grad = exact_gradient(model, policy).grad
    theta = policy.theta
    step = (project(policy.box, theta - eps * grad) - theta) / eps
    return float(np.linalg.norm(step))


RECORD_COLUMNS = ("n", "a_n", "delta_n", "G_n", "T_n", "truncated", "episodes",
                  "theta_hash", "objective", "proj_grad_norm")


def _theta_hash(theta):
    return hashlib.blake2b(np.ascontiguousarray(theta).tobytes(), digest_size=8).hexdigest()


@dataclass
class RunRecord:
    """Per-iteration log of a training run.

    Row ``n`` describes the update from ``theta(n)`` to ``theta(n+1)``; the
    hash, objective and projected-gradient norm refer to ``theta(n+1)``.  The
    two diagnostics are NaN except every ``diag_every`` rows and on the last.
    """

    algorithm: str
    config: dict
    seed: Optional[int]
    diag_every: int
    rows: list = field(default_factory=list)
    initial: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)
    failed: Optional[str] = None

    def column(self, name):
        idx = RECORD_COLUMNS.index(name)
        return np.array([r[idx] for r in self.rows])

    @property
    def iterations(self):
        return len(self.rows)

    @property
    def episodes(self):
        return self.rows[-1][RECORD_COLUMNS.index("episodes")] if self.rows else 0

    @property
    def truncations(self):
        return int(sum(r[RECORD_COLUMNS.index("truncated")] for r in self.rows))

    def diagnostics(self):
        """``(n, objective, proj_grad_norm)`` arrays at the diagnostic rows, with
        the initial point as ``n = -1``."""
        n = self.column("n")
        f = self.column("objective")
        g = self.column("proj_grad_norm")
        keep = ~np.isnan(f)
        return (np.concatenate([[-1], n[keep]]),
                np.concatenate([[self.initial["objective"]], f[keep]]),
                np.concatenate([[self.initial["proj_grad_norm"]], g[keep]]))

    def write_csv(self, path_or_file):
        def _fmt(v):
            if isinstance(v, (bool, np.bool_)):
                return int(v)
            if isinstance(v, float):
                return "" if np.isnan(v) else repr(v)
            return v

        def _write(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RECORD_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(v) for v in r])

        if hasattr(path_or_file, "write"):
            _write(path_or_file)
        else:
            with open(path_or_file, "w", newline="") as fh:
                _write(fh)

    def sidecar(self):
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "config": self.config,
            "iterations": self.iterations,
            "episodes": self.episodes,
            "truncations": self.truncations,
            "diag_every": self.diag_every,
            "initial": self.initial,
            "final": self.final,
            "failed": self.failed,
        }

    def write_sidecar(self, path):
        with open(path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _diagnose(model, policy):
    grad = exact_gradient(model, policy).grad
    active = policy.box.active(policy.theta)
    return {
        "objective": objective(model, policy),
        "proj_grad_norm": projected_grad_norm(model, policy, grad=grad),
        "grad_norm": float(np.linalg.norm(grad)),
        "boundary_fraction": float(active.mean()),
        "theta": policy.theta.tolist(),
    }


def _run(model, policy0, iters, rng, diag_every, algorithm, config, step, seed):
    """Shared driver: ``step(n, policy, rng) -> (new_theta_raw, a_n, delta_n, G, T, trunc, eps)``."""
    iters = check_count(iters, "iters")
    diag_every = check_count(diag_every, "diag_every")
    policy = policy0.copy()
    record = RunRecord(algorithm, config, seed, diag_every)
    record.initial = _diagnose(model, policy)
    episodes = 0
    rows = record.rows
    nan = float("nan")
    for n in range(iters):
        raw, a_n, d_n, G, T, trunc, used = step(n, policy, rng)
        if not np.all(np.isfinite(raw)):
            record.failed = f"non-finite update at iteration {n}"
            exc = NumericAbort(record.failed, iteration=n)
            exc.record = record
            raise exc
        policy.theta = raw
        episodes += used
        if (n + 1) % diag_every == 0 or n == iters - 1:
            diag = _diagnose(model, policy)
            f, pgn = diag["objective"], diag["proj_grad_norm"]
            record.snapshots.append((n, policy.theta.copy()))
        else:
            f = pgn = nan
        rows.append((n, a_n, d_n, float(G), int(T), bool(trunc), episodes,
                     _theta_hash(policy.theta), f, pgn))
    record.final = _diagnose(model, policy)
    return policy, record


def sf_reinforce(model, policy0, schedule=StepSchedule(), iters=10_000, rng=None,
                 diag_every=1000, project_perturbation=False, allow_bad_schedule=False,
                 step_cap=DEFAULT_STEP_CAP):
    """Run the one-measurement SF Reinforce recursion for ``iters`` episodes.

    Each iteration draws ``Delta ~ N(0, I)``, runs exactly one episode under
    ``theta + delta_n Delta`` (clamped to the box only if
    ``project_perturbation``) and takes the projected step.

    Returns
    -------
    (ParamPolicy, RunRecord)

    Raises
    ------
    ConfigurationError
        If the schedule fails ``validate_schedule`` and ``allow_bad_schedule``
        is not set.
    NumericAbort
        On a non-finite update; ``iteration`` names the offending step.
    """
    diag = validate_schedule(schedule)
    if not diag and not allow_bad_schedule:
        raise ConfigurationError(f"step schedule rejected: {diag.describe()}")
    seed = seed_of(rng)
    rng = check_rng(rng)
    box = policy0.box
    d = policy0.dim
    simulate = _mdp.simulate_episode

    def step(n, policy, rng):
        a_n = schedule.step_size(n)
        d_n = schedule.delta(n)
        vec = rng.standard_normal(d)
        at = policy.theta + d_n * vec
        if project_perturbation:
            at = project(box, at)
        ep = simulate(model, policy.dists(at), rng, step_cap)
        raw = policy.theta - a_n * vec * (ep.total_return / d_n)
        return raw, a_n, d_n, ep.total_return, ep.length, ep.truncated, 1

    config = {"schedule": asdict(schedule), "iters": iters, "diag_every": diag_every,
              "project_perturbation": project_perturbation,
              "allow_bad_schedule": allow_bad_schedule, "step_cap": step_cap,
              "schedule_ok": diag.ok}
    return _run(model, policy0, iters, rng, diag_every, EstimatorKind.SF1.value, config,
                step, seed)


def baseline_reinforce(model, policy0, schedule=StepSchedule(), iters=10_000, rng=None,
                       diag_every=1000, step_cap=DEFAULT_STEP_CAP):
    """Classical Reinforce: ``theta <- clip(theta - a(n) * lr_estimate)``.

    Only ``a0`` and ``alpha`` of the schedule are used.
    """
    seed = seed_of(rng)
    rng = check_rng(rng)

    def step_with_episode(n, policy, rng):
        a_n = schedule.step_size(n)
        probs = policy.dists()
        ep = _mdp.simulate_episode(model, probs, rng, step_cap)
        grad = lr_from_episode(policy, probs, ep)
        return policy.theta - a_n * grad, a_n, 0.0, ep.total_return, ep.length, \
            ep.truncated, 1

    config = {"schedule": {"a0": schedule.a0, "alpha": schedule.alpha}, "iters": iters,
              "diag_every": diag_every, "step_cap": step_cap}
    return _run(model, policy0, iters, rng, diag_every, EstimatorKind.LR.value, config,
                step_with_episode, seed)


def kw_descent(model, policy0, schedule=StepSchedule(), iters=100, rng=None,
               diag_every=10, episodes_per_side=1, step_cap=DEFAULT_STEP_CAP):
    """Projected descent along Kiefer-Wolfowitz estimates with width ``delta(n)``.

    Every update consumes ``2 d episodes_per_side`` episodes.
    """
    seed = seed_of(rng)
    rng = check_rng(rng)

    def step(n, policy, rng):
        a_n = schedule.step_size(n)
        d_n = schedule.delta(n)
        est = kw_estimate(model, policy, d_n, episodes_per_side, rng, step_cap)
        return policy.theta - a_n * est.grad, a_n, d_n, float("nan"), 0, \
            est.truncated > 0, est.episodes_used

    config = {"schedule": asdict(schedule), "iters": iters, "diag_every": diag_every,
              "episodes_per_side": episodes_per_side, "step_cap": step_cap}
    return _run(model, policy0, iters, rng, diag_every, EstimatorKind.KW.value, config,
                step, seed)
