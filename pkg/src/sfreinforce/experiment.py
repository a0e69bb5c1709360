"""Experiment configuration and multi-seed drivers behind the CLI.

Config files are JSON objects; ``ExperimentConfig.from_dict`` documents the
accepted keys and their defaults.  Every artifact embeds the resolved config.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .envs import EnvSpec
from .estimators import EstimatorKind, bias_sweep, exact_gradient, write_bias_csv
from .exceptions import ConfigurationError, NumericAbort
from .mdp import DEFAULT_STEP_CAP, MdpModel
from .optimizer import (StepSchedule, baseline_reinforce, kw_descent, objective,
                        sf_reinforce, validate_schedule)
from .policy import BoxConstraint, ParamPolicy

__all__ = ["ExperimentConfig", "train", "run_seed", "compare", "grad_check",
           "run_bias_sweep", "resolve_theta", "finite_difference_gradient"]

_ALGORITHMS = {"SF1": "SF1", "SF": "SF1", "LR": "LR", "REINFORCE": "LR",
               "KW": "KW", "KW-DESCENT": "KW", "KW_DESCENT": "KW"}


def _schedule(doc):
    if isinstance(doc, StepSchedule):
        return doc
    try:
        return StepSchedule(**{k: float(v) for k, v in dict(doc).items()})
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad schedule: {exc}") from exc


def _algorithm(name):
    key = str(name).upper()
    if key not in _ALGORITHMS:
        raise ConfigurationError(f"unknown algorithm {name!r}; use SF1, LR or KW-descent")
    return _ALGORITHMS[key]


@dataclass
class ExperimentConfig:
    env: EnvSpec
    algorithm: str = "SF1"
    algorithms: List[str] = field(default_factory=lambda: ["SF1", "LR", "KW"])
    schedule: StepSchedule = field(default_factory=StepSchedule)
    schedules: Dict[str, StepSchedule] = field(default_factory=dict)
    iters: int = 10_000
    budget_episodes: Optional[int] = None
    seeds: List[int] = field(default_factory=lambda: [0])
    diag_every: int = 1000
    output_dir: str = "runs"
    project_perturbation: bool = False
    allow_bad_schedule: bool = False
    box_bound: float = 10.0
    step_cap: int = DEFAULT_STEP_CAP
    episodes_per_side: int = 1
    workers: int = 1
    theta: object = None
    deltas: List[float] = field(default_factory=lambda: [0.5, 0.25, 0.125])
    n_samples: int = 100_000
    h: float = 1e-5

    @classmethod
    def from_dict(cls, data):
        """Build and validate a config.

        Keys: ``env`` (required; ``{"kind": ..., **params}``), ``algorithm``,
        ``algorithms``, ``schedule`` (``a0``, ``alpha``, ``delta0``,
        ``gamma``), ``schedules`` (per-algorithm overrides of ``schedule``,
        e.g. ``{"LR": {"a0": 0.1}}``), ``iters``, ``budget_episodes``, ``seeds``, ``diag_every``,
        ``output_dir``, ``project_perturbation``, ``allow_bad_schedule``,
        ``box_bound``, ``step_cap``, ``episodes_per_side``, ``workers``,
        ``theta``, ``deltas``, ``n_samples``, ``h``.
        """
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a JSON object")
        data = dict(data)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        if "env" not in data:
            raise ConfigurationError("config needs an 'env' section")
        data["env"] = EnvSpec.from_dict(data["env"])
        if "schedule" in data:
            data["schedule"] = _schedule(data["schedule"])
        if "schedules" in data:
            base = asdict(data.get("schedule", StepSchedule()))
            if not isinstance(data["schedules"], dict):
                raise ConfigurationError("schedules must map algorithm names to schedules")
            data["schedules"] = {_algorithm(k): _schedule({**base, **v})
                                 for k, v in data["schedules"].items()}
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, **overrides):
        """Read a JSON config; ``overrides`` replace top-level keys before validation."""
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        env = data.get("env") if isinstance(data, dict) else None
        # model files named in a config are relative to the config's directory
        if isinstance(env, dict) and "path" in env and not Path(env["path"]).is_absolute():
            data["env"] = {**env, "path": str(Path(path).parent / env["path"])}
        if isinstance(data, dict):
            data.update(overrides)
        return cls.from_dict(data)

    def validate(self):
        self.algorithm = _algorithm(self.algorithm)
        self.algorithms = [_algorithm(a) for a in self.algorithms]
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds must be a non-empty list of distinct integers")
        for name in ("iters", "diag_every", "step_cap", "episodes_per_side", "workers",
                     "n_samples"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.budget_episodes is not None and int(self.budget_episodes) < 1:
            raise ConfigurationError("budget_episodes must be positive")
        if not self.box_bound > 0:
            raise ConfigurationError("box_bound must be positive")
        if not self.h > 0 or not all(d > 0 for d in self.deltas):
            raise ConfigurationError("h and every delta must be positive")
        for alg in dict.fromkeys([self.algorithm, *self.algorithms]):
            diag = validate_schedule(self.schedule_for(alg), perturbation=alg != "LR")
            if not diag and not self.allow_bad_schedule:
                raise ConfigurationError(
                    f"{alg} schedule fails validation ({diag.describe()}); "
                    "pass --allow-bad-schedule to run it anyway")
        return self

    def schedule_for(self, algorithm):
        return self.schedules.get(algorithm, self.schedule)

    def to_dict(self):
        out = asdict(self)
        out["env"] = self.env.to_dict()
        out["schedule"] = asdict(self.schedule)
        out["schedules"] = {k: asdict(v) for k, v in self.schedules.items()}
        return out


def resolve_theta(spec, model, bound=10.0):
    """Starting logits from a config value.

    Accepts None or ``"zeros"``, ``"random:<seed>"`` (standard normal), a
    list of numbers, or a path to a JSON file holding a list or an object
    with a ``theta`` field.
    """
    d = model.num_params
    if spec is None or spec == "zeros":
        return np.zeros(d)
    if isinstance(spec, str) and spec.startswith("random:"):
        return np.random.default_rng(int(spec.split(":", 1)[1])).standard_normal(d)
    if isinstance(spec, str):
        try:
            with open(spec) as fh:
                spec = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read theta from {spec}: {exc}") from exc
        if isinstance(spec, dict):
            spec = spec.get("theta")
    theta = np.asarray(spec, dtype=float)
    if theta.shape != (d,):
        raise ConfigurationError(f"theta must have {d} entries, got shape {theta.shape}")
    return theta


def _policy(cfg, model):
    box = BoxConstraint.uniform(model.num_params, -cfg.box_bound, cfg.box_bound)
    return ParamPolicy(model, resolve_theta(cfg.theta, model, cfg.box_bound), box)


def _episodes_per_update(cfg, algorithm, model):
    return 2 * model.num_params * cfg.episodes_per_side if algorithm == "KW" else 1


def _train_one(cfg, model, algorithm, seed, iters):
    policy0 = _policy(cfg, model)
    schedule = cfg.schedule_for(algorithm)
    if algorithm == "SF1":
        return sf_reinforce(model, policy0, schedule, iters, seed, cfg.diag_every,
                            cfg.project_perturbation, cfg.allow_bad_schedule, cfg.step_cap)
    if algorithm == "LR":
        return baseline_reinforce(model, policy0, schedule, iters, seed, cfg.diag_every,
                                  cfg.step_cap)
    return kw_descent(model, policy0, schedule, iters, seed, cfg.diag_every,
                      cfg.episodes_per_side, cfg.step_cap)


def run_seed(cfg, seed, algorithm=None, iters=None, write=True):
    """Train one seed; write ``<alg>_seed<k>.csv`` and ``.json`` when ``write``.

    Returns the per-seed summary entry.  A numeric abort keeps the partial
    record and is reported with ``status = "failed"``.
    """
    algorithm = algorithm or cfg.algorithm
    model = cfg.env.build()
    iters = iters or cfg.iters
    try:
        _, record = _train_one(cfg, model, algorithm, seed, iters)
        status = "ok"
    except NumericAbort as exc:
        record = exc.record
        status = "failed"
    record.config = {"experiment": cfg.to_dict(), "run": record.config,
                     "algorithm": algorithm, "iters": iters}
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = out / f"{algorithm}_seed{seed}"
        record.write_csv(f"{stem}.csv")
        record.write_sidecar(f"{stem}.json")
    final = record.final or {}
    init = record.initial
    ratio = (final.get("proj_grad_norm", np.nan) / init["proj_grad_norm"]
             if init.get("proj_grad_norm") else np.nan)
    _, f_series, _ = record.diagnostics() if record.rows else (None, np.array([]), None)
    return {
        "seed": seed,
        "algorithm": algorithm,
        "status": status,
        "failed": record.failed,
        "iterations": record.iterations,
        "episodes": record.episodes,
        "truncations": record.truncations,
        "initial_objective": init["objective"],
        "initial_proj_grad_norm": init["proj_grad_norm"],
        "final_objective": final.get("objective"),
        "final_proj_grad_norm": final.get("proj_grad_norm"),
        "proj_grad_norm_ratio": ratio,
        "boundary_fraction": final.get("boundary_fraction"),
        "objective_series": [float(v) for v in f_series],
    }


def _map_seeds(fn, args, workers):
    if workers <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=min(workers, len(args))) as pool:
        futures = [pool.submit(fn, *a) for a in args]
        return [f.result() for f in futures]


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def train(cfg, workers=None):
    """Run every seed; write per-seed artifacts and ``summary.json``."""
    workers = cfg.workers if workers is None else workers
    entries = _map_seeds(run_seed, [(cfg, s) for s in cfg.seeds], workers)
    entries.sort(key=lambda e: cfg.seeds.index(e["seed"]))
    summary = {"config": cfg.to_dict(), "seeds": entries,
               "failed_seeds": [e["seed"] for e in entries if e["status"] != "ok"]}
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    _write_json(Path(cfg.output_dir) / "summary.json", summary)
    return summary


def _mean_se(values):
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def compare(cfg, workers=None):
    """Train every algorithm under one episode budget and tabulate the results.

    The budget defaults to ``iters`` episodes.  KW spends ``2 d m`` episodes
    per update, so it gets ``budget // (2 d m)`` updates.
    """
    workers = cfg.workers if workers is None else workers
    model = cfg.env.build()
    budget = int(cfg.budget_episodes or cfg.iters)
    rows = []
    details = {}
    for alg in cfg.algorithms:
        per = _episodes_per_update(cfg, alg, model)
        iters = budget // per
        if iters < 1:
            raise ConfigurationError(
                f"budget of {budget} episodes is below one {alg} update ({per} episodes)")
        sub = replace(cfg, output_dir=str(Path(cfg.output_dir) / alg),
                      diag_every=max(1, min(cfg.diag_every, iters)))
        entries = _map_seeds(run_seed, [(sub, s, alg, iters) for s in cfg.seeds], workers)
        entries.sort(key=lambda e: cfg.seeds.index(e["seed"]))
        f_mean, f_se = _mean_se([e["final_objective"] for e in entries])
        g_mean, g_se = _mean_se([e["final_proj_grad_norm"] for e in entries])
        rows.append({
            "algorithm": alg,
            "updates": iters,
            "episodes_per_update": per,
            "episodes": int(max(e["episodes"] for e in entries)),
            "budget": budget,
            "final_objective_mean": f_mean,
            "final_objective_se": f_se,
            "final_proj_grad_norm_mean": g_mean,
            "final_proj_grad_norm_se": g_se,
            "seeds": len(entries),
        })
        details[alg] = entries
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    _write_json(out / "compare.json", {"config": cfg.to_dict(), "table": rows,
                                       "runs": details})
    return rows


def finite_difference_gradient(model, policy, h=1e-5):
    """Central differences of the exact objective along every coordinate."""
    theta = policy.theta
    grad = np.empty(policy.dim)
    for i in range(policy.dim):
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (objective(model, policy.dists(up)) - objective(model, policy.dists(dn))) / (2 * h)
    return grad


def grad_check(model, theta, h=1e-5):
    """Compare the exact gradient with central differences of the objective.

    The error is ``max_i |g_i - fd_i| / max(|g|_inf, |fd|_inf)`` and is 0
    when both vectors vanish.
    """
    theta = np.asarray(theta, dtype=float)
    bound = max(10.0, float(np.max(np.abs(theta), initial=0.0)) + 1.0)
    policy = ParamPolicy(model, theta, BoxConstraint.uniform(model.num_params, -bound, bound))
    exact = exact_gradient(model, policy).grad
    fd = finite_difference_gradient(model, policy, h)
    scale = max(np.max(np.abs(exact)), np.max(np.abs(fd)))
    err = 0.0 if scale == 0 else float(np.max(np.abs(exact - fd)) / scale)
    return {"h": h, "max_rel_error": err, "exact": exact.tolist(), "finite_difference": fd.tolist()}


def run_bias_sweep(cfg, seed=None, out=None):
    model = cfg.env.build()
    policy = _policy(cfg, model)
    seed = cfg.seeds[0] if seed is None else seed
    rows, summaries = bias_sweep(model, policy, cfg.deltas, cfg.n_samples, seed,
                                 cfg.step_cap, cfg.project_perturbation)
    if out is not None:
        write_bias_csv(rows, out)
    return rows, summaries
