"""One-measurement smoothed-functional Reinforce for stochastic shortest path MDPs."""

from .envs import EnvSpec, make_chain, make_env, make_gridworld, make_random_ssp
from .estimator import KWReinforce, LRReinforce, SFReinforce
from .estimators import (EstimatorKind, GradEstimate, Perturbation, bias_sweep,
                         exact_gradient, kw_estimate, lr_estimate, lr_monte_carlo,
                         sample_perturbation, sf_estimate, sf_monte_carlo)
from .exceptions import (ConfigurationError, NonConvergenceError, NumericAbort,
                         ProperPolicyError, SFReinforceError)
from .mdp import (Episode, MdpModel, StationaryRandPolicy, check_proper, load_model,
                  optimal_value, policy_value, q_values, save_model, simulate_batch,
                  simulate_episode, visitation_counts)
from .optimizer import (RunRecord, StepSchedule, baseline_reinforce, kw_descent, objective,
                        projected_grad_norm, sf_reinforce, validate_schedule)
from .policy import BoxConstraint, ParamPolicy, project

__version__ = "0.1.0"
