"""Command-line entry point ``fdpo-lab``.

Exit codes: 0 success, 2 configuration or usage error, 3 verification or run
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import __version__
from .acceptance import SCOPES
from .divergence import exact_divergence, mc_estimate, parse_divergence
from .fdpo import train
from .harness import (
    ConfigError,
    RunError,
    build_task,
    default_jobs,
    emit_csv,
    load_config,
    run_sweep,
    verify_suite,
)
from .kkt import solve_optimal_policy
from .metrics import ece_bound_rhs, ece_exact
from .oracles import OracleFunctions, simplex_maximize
from .policy import TaskSpace, load_policy, make_policy, save_policy
from .preference import RewardTable, generate_dataset, load_dataset
from .rl_baselines import Variant, train_ppo

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 2, 3


class _Out:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def info(self, msg: str = ""):
        if not self.quiet:
            print(msg)

    def result(self, msg: str):
        print(msg)


def _floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")])


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_verify(args, out: _Out) -> int:
    report = verify_suite(args.scope)
    for line in report.lines():
        out.result(line)
    out.info(f"{sum(r.passed for r in report.results)}/{len(report.results)} checks passed")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_verify_kkt(args, out: _Out) -> int:
    spec = parse_divergence(args.divergence)
    if not spec.solver_admissible:
        raise ValueError(f"{spec.label} is not solver-admissible")
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    space = TaskSpace(args.contexts, args.outcomes)
    fn = OracleFunctions(spec.name.value, spec.alpha)
    worst_tv = worst_stat = 0.0
    for _ in range(args.instances):
        reward = RewardTable(space, rng.uniform(-2.0, 2.0, size=space.shape))
        ref = make_policy(space, rng.normal(size=space.shape))
        sol = solve_optimal_policy(reward, ref, args.beta, spec)
        oracle = simplex_maximize(fn, reward.rewards, ref.prob_table(), args.beta)
        worst_tv = max(worst_tv, float(np.max(0.5 * np.abs(sol.optimal_policy - oracle).sum(axis=1))))
        worst_stat = max(worst_stat, sol.stationarity_residual(reward, ref))
    ok = worst_tv <= 1e-4 and worst_stat <= 1e-8
    out.result(f"{'PASS' if worst_tv <= 1e-4 else 'FAIL'} max TV vs oracle: {worst_tv:.3e} (threshold 1e-4)")
    out.result(f"{'PASS' if worst_stat <= 1e-8 else 'FAIL'} max stationarity residual: "
               f"{worst_stat:.3e} (threshold 1e-8)")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_make_dataset(args, out: _Out) -> int:
    cfg = _config(args)
    reward, reference = build_task(cfg)
    n = args.pairs or cfg.fdpo_pairs
    data = generate_dataset(reward, reference, n, cfg.seed)
    data.save(args.out)
    out.info(f"wrote {len(data)} pairs to {args.out}")
    return EXIT_OK


def _finish_training(policy, trace, args, out: _Out) -> int:
    save_policy(policy, args.out_policy)
    if args.trace:
        trace.write_csv(args.trace)
    if len(trace):
        out.info(f"final loss={trace.loss[-1]:.6g} divergence={trace.divergence[-1]:.6g} "
                 f"entropy={trace.entropy[-1]:.6g}")
    out.info(f"wrote policy to {args.out_policy}")
    return EXIT_OK


def cmd_train_dpo(args, out: _Out) -> int:
    cfg = _config(args)
    reward, reference = build_task(cfg)
    data = load_dataset(args.dataset, cfg.space)
    tcfg = cfg.fdpo_config(cfg.beta, cfg.divergence, cfg.seed)
    policy, trace = train(data, reference, tcfg)
    return _finish_training(policy, trace, args, out)


def cmd_train_ppo(args, out: _Out) -> int:
    cfg = _config(args)
    if args.clip_epsilon is not None:
        cfg = dataclasses.replace(cfg, ppo_clip_epsilon=args.clip_epsilon)
    reward, reference = build_task(cfg)
    pcfg = cfg.ppo_config(Variant.parse(args.variant), cfg.beta, cfg.divergence, cfg.seed)
    policy, trace = train_ppo(reward, reference, pcfg)
    return _finish_training(policy, trace, args, out)


def cmd_sweep(args, out: _Out) -> int:
    cfg = _config(args)
    out.info(cfg.echo())
    records = run_sweep(cfg, jobs=args.jobs)
    path = args.out or cfg.output
    emit_csv(records, path)
    out.info(f"wrote {len(records)} records to {path}")
    return EXIT_OK


def cmd_estimate(args, out: _Out) -> int:
    spec = parse_divergence(args.divergence)
    p, q = _floats(args.p), _floats(args.q)
    if p.shape != q.shape:
        raise ValueError("p and q must have the same length")
    for name, v in (("p", p), ("q", q)):
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} must be a probability vector")
    exact = exact_divergence(spec, p, q)
    out.result(f"exact {spec.label} = {exact:.12g}")
    if args.samples:
        rng = np.random.default_rng(0 if args.seed is None else args.seed)
        xs = rng.choice(len(q), size=args.samples, p=q)
        est, se = mc_estimate(spec, p[xs] / q[xs])
        out.result(f"estimate = {est:.12g} +/- {se:.3g} (n={args.samples})")
    return EXIT_OK


def cmd_ece(args, out: _Out) -> int:
    p1 = load_policy(args.policy1)
    p2 = load_policy(args.policy2, p1.space)
    truth = load_policy(args.truth, p1.space)
    space = p1.space
    e1 = ece_exact(p1, truth, space).ece
    e2 = ece_exact(p2, truth, space).ece
    kl = ece_bound_rhs(p1, p2, space, "kl")
    js = ece_bound_rhs(p1, p2, space, "js")
    out.result(f"ece(policy1) = {e1:.12g}")
    out.result(f"ece(policy2) = {e2:.12g}")
    out.result(f"kl bound rhs = {kl:.12g}")
    out.result(f"js bound rhs = {js:.12g}")
    ok_kl, ok_js = e1 - e2 <= kl, e1 - e2 <= js
    out.result(f"{'PASS' if ok_kl else 'FAIL'} ece1 - ece2 <= kl bound")
    out.result(f"{'PASS' if ok_js else 'FAIL'} ece1 - ece2 <= js bound")
    return EXIT_OK if ok_kl and ok_js else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps a subcommand's unset flag from clobbering the global one
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed override")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS,
                        help="parallel sweep runs (default: $FDPO_LAB_JOBS or 1)")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="print results only")

    parser = argparse.ArgumentParser(prog="fdpo-lab", parents=[common],
                                     description="Tabular f-DPO verification lab")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", parents=[common], help="run acceptance checks")
    p.add_argument("--scope", choices=sorted(SCOPES), default="all")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("verify-kkt", parents=[common], help="closed-form optimum vs brute force")
    p.add_argument("--divergence", default="rkl")
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--contexts", type=int, default=2)
    p.add_argument("--outcomes", type=int, default=4)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_verify_kkt)

    p = sub.add_parser("make-dataset", parents=[common], help="sample BT preference pairs")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=None)
    p.set_defaults(func=cmd_make_dataset)

    for name, func in (("train-dpo", cmd_train_dpo), ("train-ppo", cmd_train_ppo)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--config", required=True)
        p.add_argument("--out-policy", required=True)
        p.add_argument("--trace", default=None)
        if name == "train-dpo":
            p.add_argument("--dataset", required=True)
        else:
            p.add_argument("--variant", choices=("reward", "loss"), default="reward")
            p.add_argument("--clip-epsilon", type=float, default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("sweep", parents=[common], help="run a config sweep and write CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("estimate", parents=[common], help="exact and sampled divergence")
    p.add_argument("--divergence", required=True)
    p.add_argument("--p", required=True, help="comma-separated probabilities")
    p.add_argument("--q", required=True, help="comma-separated probabilities")
    p.add_argument("--samples", type=int, default=0)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("ece", parents=[common], help="ECE values and calibration bounds")
    p.add_argument("--policy1", required=True)
    p.add_argument("--policy2", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(func=cmd_ece)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, value in (("seed", None), ("jobs", default_jobs()), ("quiet", False)):
        if not hasattr(args, name):
            setattr(args, name, value)
    out = _Out(args.quiet)
    try:
        return args.func(args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
