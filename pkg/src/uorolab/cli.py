"""Command-line front end.

Subcommands: train, variance-report, moment-check, estimator-compare,
alpha-solve.  Each takes --config (flat key=value file), --seed, --out, plus
--estimator / --task overrides, writes CSV + JSON into the output directory
and prints a one-line summary.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import training
from .exact import bptt_gradient
from .reports import write_json_summary, write_metrics_csv
from .variance import (
    compute_C,
    covariance_closed_trace,
    quartic_moment_closed,
    solve_alpha_newton,
)


def _load_config(args) -> config_mod.ExperimentConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.ExperimentConfig()
    if args.seed is not None:
        cfg.base_seed = args.seed
    if args.estimator:
        cfg.estimator = args.estimator
    if args.task:
        cfg.task = args.task
    return cfg


def _add_common(parser):
    parser.add_argument("--config", type=str, default=None,
                        help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="base seed override")
    parser.add_argument("--out", type=str, default="runs/out",
                        help="output directory for CSV/JSON")
    parser.add_argument("--estimator", type=str, default=None)
    parser.add_argument("--task", type=str, default=None)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    summary = training.run_training(cfg, out_dir=args.out)
    print(f"train: final loss {summary['final_loss']:.6f} "
          f"after {summary['updates']} updates -> {args.out}")
    return 0


def cmd_variance_report(args) -> int:
    cfg = _load_config(args)
    summary = training.run_variance_report(cfg, out_dir=args.out)
    best = min(summary["grid"], key=lambda c: c["measured_vq"])
    print(f"variance-report: best cell q0={best['q0']} alpha={best['alpha']} "
          f"measured {best['measured_vq']:.4g} -> {args.out}")
    return 0


def cmd_estimator_compare(args) -> int:
    cfg = _load_config(args)
    summary = training.estimator_compare(cfg, out_dir=args.out)
    line = ", ".join(
        f"{r['estimator']}={r['measured_actual']:.3g}" for r in summary["estimators"]
    )
    print(f"estimator-compare: measured error second moments: {line} -> {args.out}")
    return 0


def cmd_moment_check(args) -> int:
    cfg = _load_config(args)
    rng = np.random.default_rng(cfg.base_seed)
    n = args.samples
    rows = []
    worst = 0.0
    for dim in (2, 4, 8):
        for kappa, draw in ((0.0, "gaussian"), (-2.0, "sign")):
            a, b, c, d = (rng.standard_normal((dim, dim)) for _ in range(4))
            closed = quartic_moment_closed(a, b, c, d, kappa)
            if draw == "gaussian":
                u = rng.standard_normal((n, dim))
            else:
                u = rng.integers(0, 2, size=(n, dim)) * 2.0 - 1.0
            s = np.einsum("ni,ij,nj->n", u, b @ c, u)
            inner = np.einsum("n,ni,nj->ij", s, u, u) / n
            second = np.einsum("n,ni,nj->ij", s * s, u * u, u * u) / n
            inner_se = np.sqrt(np.maximum(second - inner**2, 0) / n)
            se = np.abs(a) @ inner_se @ np.abs(d) + 1e-12
            z = float((np.abs(closed - a @ inner @ d) / se).max())
            worst = max(worst, z)
            rows.append((dim, cfg.base_seed, f"kappa={kappa}/max_z", z))
            x, y = rng.standard_normal(dim), rng.standard_normal(dim)
            v, w = rng.standard_normal((dim, dim)), rng.standard_normal((dim, dim))
            tr_closed = covariance_closed_trace(x, y, v, w, kappa)
            left = (u @ x)[:, None] * (u @ v)
            right = (u @ y)[:, None] * (u @ w)
            samples = np.sum(left * right, axis=1)
            tr_mc = samples.mean() - float((x @ v) @ (y @ w))
            tr_se = samples.std(ddof=1) / np.sqrt(n) + 1e-12
            z_tr = abs(tr_closed - tr_mc) / tr_se
            worst = max(worst, z_tr)
            rows.append((dim, cfg.base_seed, f"kappa={kappa}/trace_z", float(z_tr)))
    write_metrics_csv(Path(args.out) / "moment_check.csv", rows)
    write_json_summary(Path(args.out) / "moment_check.json",
                       {"samples": n, "worst_z": worst, "pass": worst < 4.0})
    print(f"moment-check: worst |z| = {worst:.3f} over {n} samples "
          f"({'PASS' if worst < 4.0 else 'FAIL'}) -> {args.out}")
    return 0 if worst < 4.0 else 1


def cmd_alpha_solve(args) -> int:
    cfg = _load_config(args)
    params, head, inputs, targets, tape, tensors = \
        training.build_report_instance(cfg)
    solution = solve_alpha_newton(compute_C(tensors, None))
    rows = [(s, cfg.base_seed, "alpha", float(a))
            for s, a in enumerate(solution.alpha)]
    rows.append((0, cfg.base_seed, "residual", solution.residual))
    rows.append((0, cfg.base_seed, "objective", solution.objective))
    write_metrics_csv(Path(args.out) / "alpha_solve.csv", rows)
    write_json_summary(Path(args.out) / "alpha_solve.json", {
        "alpha": [float(a) for a in solution.alpha],
        "residual": solution.residual,
        "objective": solution.objective,
        "iterations": solution.iterations,
        "converged": solution.converged,
        "exact_gradient_norm": float(np.linalg.norm(bptt_gradient(tape).g)),
    })
    print(f"alpha-solve: T={tensors.length} residual {solution.residual:.2e} "
          f"in {solution.iterations} iterations -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uorolab",
        description="Online credit assignment lab: training, variance "
                    "reports and solver checks for recurrent gradient "
                    "estimators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "train": cmd_train,
        "variance-report": cmd_variance_report,
        "estimator-compare": cmd_estimator_compare,
        "alpha-solve": cmd_alpha_solve,
    }
    for name, handler in handlers.items():
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(handler=handler)
    p = sub.add_parser("moment-check")
    _add_common(p)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.set_defaults(handler=cmd_moment_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
