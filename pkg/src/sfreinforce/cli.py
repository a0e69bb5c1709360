"""Command-line driver: ``sfreinforce {train,grad-check,bias-sweep,compare,solve}``.

Exit codes: 0 success, 2 configuration error, 3 numeric abort, 4 check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .exceptions import ConfigurationError, NumericAbort, ProperPolicyError
from .experiment import (ExperimentConfig, compare, grad_check, resolve_theta,
                         run_bias_sweep, train)
from .mdp import check_proper, load_model, optimal_value, policy_value
from .policy import ParamPolicy

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4
GRAD_CHECK_TOL = 1e-3

log = logging.getLogger("sfreinforce")


def _load_config(args):
    if args.config is None:
        raise ConfigurationError("--config is required for this command")
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = [args.seed]
    if getattr(args, "out", None) is not None:
        overrides["output_dir"] = args.out
    if getattr(args, "allow_bad_schedule", False):
        overrides["allow_bad_schedule"] = True
    if getattr(args, "project_perturbation", False):
        overrides["project_perturbation"] = True
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    return ExperimentConfig.load(args.config, **overrides)


def _model_from_args(args):
    if getattr(args, "model", None):
        return load_model(args.model), None
    cfg = _load_config(args)
    return cfg.env.build(), cfg


def cmd_train(args):
    cfg = _load_config(args)
    summary = train(cfg)
    for e in summary["seeds"]:
        print(f"seed {e['seed']}: {e['status']} F={e['final_objective']!r} "
              f"pgn_ratio={e['proj_grad_norm_ratio']!r} truncations={e['truncations']}")
    return EXIT_NUMERIC if summary["failed_seeds"] else EXIT_OK


def cmd_grad_check(args):
    model, cfg = _model_from_args(args)
    theta_spec = args.theta if args.theta is not None else (cfg.theta if cfg else None)
    theta = resolve_theta(theta_spec, model)
    hs = args.h if args.h else [cfg.h if cfg else 1e-5]
    reports = [grad_check(model, theta, h) for h in hs]
    for r in reports:
        print(f"h={r['h']:g} max_rel_error={r['max_rel_error']:.3e}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(reports, fh, indent=2)
    return EXIT_CHECK if min(r["max_rel_error"] for r in reports) > GRAD_CHECK_TOL else EXIT_OK


def cmd_bias_sweep(args):
    cfg = _load_config(args)
    if args.n_samples is not None:
        cfg = replace(cfg, n_samples=args.n_samples)
    if args.deltas:
        cfg = replace(cfg, deltas=args.deltas)
    if cfg.n_samples < 10_000:
        raise ConfigurationError("bias-sweep needs n_samples >= 10000")
    if args.out_csv:
        out = Path(args.out_csv)
    else:
        out = Path(cfg.output_dir) / "bias_sweep.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
    rows, _ = run_bias_sweep(cfg, out=out)
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def cmd_compare(args):
    cfg = _load_config(args)
    rows = compare(cfg)
    for r in rows:
        print(f"{r['algorithm']:>4}: episodes={r['episodes']} "
              f"F={r['final_objective_mean']:.4f}+-{r['final_objective_se']:.4f} "
              f"pgn={r['final_proj_grad_norm_mean']:.4g}+-{r['final_proj_grad_norm_se']:.2g}")
    return EXIT_OK


def cmd_solve(args):
    model, cfg = _model_from_args(args)
    theta_spec = args.theta if args.theta is not None else (cfg.theta if cfg else None)
    policy = ParamPolicy(model, resolve_theta(theta_spec, model))
    probs = policy.dists()
    v_star, greedy = optimal_value(model)
    proper, p_hat = check_proper(model, probs)
    report = {
        "V_star": v_star.tolist(),
        "greedy_actions": greedy.tolist(),
        "optimal_objective": float(model.initial_dist @ v_star),
        "is_proper": proper,
        "p_hat": p_hat,
    }
    v_pol = policy_value(model, probs)
    report["V_policy"] = v_pol.tolist()
    report["objective"] = float(model.initial_dist @ v_pol)
    print(json.dumps(report, indent=2))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="sfreinforce", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="experiment config JSON")
        if seed:
            p.add_argument("--seed", type=int, help="run this single seed instead of the list")
        p.add_argument("--out", help="output directory (or file for grad-check)")

    p = sub.add_parser("train", help="train one algorithm over the configured seeds")
    common(p)
    p.add_argument("--allow-bad-schedule", action="store_true")
    p.add_argument("--project-perturbation", action="store_true")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grad-check", help="exact gradient vs finite differences")
    common(p, seed=False)
    p.add_argument("--model", help="model JSON instead of a config env")
    p.add_argument("--theta", help="'zeros', 'random:<seed>' or a JSON file")
    p.add_argument("--h", type=float, action="append", help="difference step (repeatable)")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("bias-sweep", help="SF Monte Carlo bias over a delta sweep")
    common(p)
    p.add_argument("--deltas", type=float, nargs="+")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--out-csv", help="CSV path (default <output_dir>/bias_sweep.csv)")
    p.add_argument("--project-perturbation", action="store_true")
    p.set_defaults(func=cmd_bias_sweep)

    p = sub.add_parser("compare", help="SF1 vs LR vs KW under one episode budget")
    common(p)
    p.add_argument("--allow-bad-schedule", action="store_true")
    p.add_argument("--project-perturbation", action="store_true")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("solve", help="print V*, the greedy policy and V of a given policy")
    common(p, seed=False)
    p.add_argument("--model", help="model JSON instead of a config env")
    p.add_argument("--theta", help="'zeros', 'random:<seed>' or a JSON file")
    p.set_defaults(func=cmd_solve)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericAbort, FloatingPointError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ProperPolicyError as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
