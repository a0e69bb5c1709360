"""scikit-learn style front-ends for the training loops.

The "data" passed to ``fit`` is the environment: an ``MdpModel``, an
``EnvSpec``, an env dict or a path to a model JSON document.  After fitting,
``theta_`` holds the learned logits, ``policy_`` the ``ParamPolicy`` and
``record_`` the ``RunRecord``.  ``predict`` maps state indices to the most
likely action and ``score`` is the negated objective, so larger is better
as scikit-learn expects.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .envs import EnvSpec, make_env
from .exceptions import ConfigurationError
from .mdp import DEFAULT_STEP_CAP, MdpModel, load_model
from .optimizer import (StepSchedule, baseline_reinforce, kw_descent, objective,
                        projected_grad_norm, sf_reinforce)
from .policy import BoxConstraint, ParamPolicy

__all__ = ["SFReinforce", "LRReinforce", "KWReinforce", "check_model"]


def check_model(X):
    """Coerce the accepted environment inputs to an ``MdpModel``."""
    if isinstance(X, MdpModel):
        return X
    if isinstance(X, EnvSpec):
        return X.build()
    if isinstance(X, dict):
        return make_env(X) if "kind" in X else load_model(X)
    if isinstance(X, (str, Path)):
        return load_model(X)
    raise ConfigurationError(f"cannot interpret {type(X).__name__} as an MDP model")


class _ReinforceBase(BaseEstimator):
    def _initial_policy(self, model):
        box = BoxConstraint.uniform(model.num_params, -self.bound, self.bound)
        return ParamPolicy(model, self.theta0, box)

    def _check_states(self, X):
        p = self.policy_.num_states
        if X is None:
            return np.arange(p)
        states = np.asarray(X)
        if states.ndim == 2 and states.shape[1] == 1:
            states = states[:, 0]
        if states.ndim != 1 or not np.issubdtype(states.dtype, np.integer):
            raise ConfigurationError("states must be a 1-D array of integer indices")
        if states.size and (states.min() < 0 or states.max() >= p):
            raise ConfigurationError(f"state indices must lie in [0, {p})")
        return states

    def _finish(self, model, policy, record):
        self.policy_ = policy
        self.theta_ = policy.theta.copy()
        self.record_ = record
        self.n_episodes_ = record.episodes
        self.n_features_in_ = model.num_params
        self.objective_ = record.final["objective"]
        return self

    def predict_proba(self, X=None):
        """Action distributions for the given states, shape (n, A)."""
        check_is_fitted(self, "theta_")
        return self.policy_.dists()[self._check_states(X)]

    def predict(self, X=None):
        """Most likely action per state (lowest index on ties)."""
        return np.argmax(self.predict_proba(X), axis=1)

    def score(self, X, y=None):
        check_is_fitted(self, "theta_")
        return -objective(check_model(X), self.policy_)

    def stationarity(self, X):
        check_is_fitted(self, "theta_")
        return projected_grad_norm(check_model(X), self.policy_)


class SFReinforce(_ReinforceBase):
    """One-measurement smoothed-functional Reinforce.

    Parameters
    ----------
    a0, alpha : float
        Step sizes ``a(n) = a0 (n+1)^-alpha``.
    delta0, gamma : float
        Perturbation widths ``delta(n) = delta0 (n+1)^-gamma``.
    n_iter : int
        Number of updates, which is also the number of episodes.
    bound : float
        Half-width of the box ``[-bound, bound]^d`` the logits live in.
    theta0 : array-like, optional
        Starting logits; zeros (the uniform policy) by default.
    diag_every : int
        Cadence of the exact objective and stationarity diagnostics.
    project_perturbation : bool
        Clamp the perturbed parameter to the box before running the episode.
    allow_bad_schedule : bool
        Run even if the schedule fails ``validate_schedule``.
    step_cap : int
        Episode length cap; capped episodes are flagged in the record.
    random_state : int, Generator or None
    """

    def __init__(self, a0=0.05, alpha=1.0, delta0=1.0, gamma=0.3, n_iter=10_000,
                 bound=10.0, theta0=None, diag_every=1000, project_perturbation=False,
                 allow_bad_schedule=False, step_cap=DEFAULT_STEP_CAP, random_state=None):
        self.a0 = a0
        self.alpha = alpha
        self.delta0 = delta0
        self.gamma = gamma
        self.n_iter = n_iter
        self.bound = bound
        self.theta0 = theta0
        self.diag_every = diag_every
        self.project_perturbation = project_perturbation
        self.allow_bad_schedule = allow_bad_schedule
        self.step_cap = step_cap
        self.random_state = random_state

    def fit(self, X, y=None):
        model = check_model(X)
        schedule = StepSchedule(self.a0, self.alpha, self.delta0, self.gamma)
        policy, record = sf_reinforce(
            model, self._initial_policy(model), schedule, self.n_iter, self.random_state,
            self.diag_every, self.project_perturbation, self.allow_bad_schedule,
            self.step_cap)
        return self._finish(model, policy, record)


class LRReinforce(_ReinforceBase):
    """Likelihood-ratio Reinforce with step sizes ``a0 (n+1)^-alpha``."""

    def __init__(self, a0=0.05, alpha=1.0, n_iter=10_000, bound=10.0, theta0=None,
                 diag_every=1000, step_cap=DEFAULT_STEP_CAP, random_state=None):
        self.a0 = a0
        self.alpha = alpha
        self.n_iter = n_iter
        self.bound = bound
        self.theta0 = theta0
        self.diag_every = diag_every
        self.step_cap = step_cap
        self.random_state = random_state

    def fit(self, X, y=None):
        model = check_model(X)
        schedule = StepSchedule(self.a0, self.alpha, 1.0, 0.0)
        policy, record = baseline_reinforce(
            model, self._initial_policy(model), schedule, self.n_iter, self.random_state,
            self.diag_every, self.step_cap)
        return self._finish(model, policy, record)


class KWReinforce(_ReinforceBase):
    """Projected descent on Kiefer-Wolfowitz estimates (``2 d m`` episodes per update)."""

    def __init__(self, a0=0.05, alpha=1.0, delta0=1.0, gamma=0.3, n_iter=100,
                 episodes_per_side=1, bound=10.0, theta0=None, diag_every=10,
                 step_cap=DEFAULT_STEP_CAP, random_state=None):
        self.a0 = a0
        self.alpha = alpha
        self.delta0 = delta0
        self.gamma = gamma
        self.n_iter = n_iter
        self.episodes_per_side = episodes_per_side
        self.bound = bound
        self.theta0 = theta0
        self.diag_every = diag_every
        self.step_cap = step_cap
        self.random_state = random_state

    def fit(self, X, y=None):
        model = check_model(X)
        schedule = StepSchedule(self.a0, self.alpha, self.delta0, self.gamma)
        policy, record = kw_descent(
            model, self._initial_policy(model), schedule, self.n_iter, self.random_state,
            self.diag_every, self.episodes_per_side, self.step_cap)
        return self._finish(model, policy, record)
