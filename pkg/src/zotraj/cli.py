"""Command-line entry points: run, compare, render, diag.

Exit codes: 0 success, 1 configuration error (bad flags, bad config file,
violated preconditions), 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import bench, diagnostics
from .bench import ConfigError
from .rng import RngStream


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad usage; the harness reserves 2 for
    # runtime failures, so turn usage problems into config errors instead.
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="zotraj", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--problem", choices=bench.PROBLEMS, default=None)
        p.add_argument("--pop", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--iters", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out-dir", type=str, default=None)
        p.add_argument("--render", action="store_true", default=None)

    run = sub.add_parser("run", help="one seeded optimizer run")
    add_common(run)
    run.add_argument("--method", choices=bench.METHODS, default=None)
    run.add_argument("--env-seed", type=int, default=None)

    comp = sub.add_parser("compare", help="methods on shared environments and inits")
    add_common(comp)
    comp.add_argument("--methods", type=str, default=None, help="comma-separated")
    comp.add_argument("--env-seeds", type=str, default=None, help="comma-separated")

    rend = sub.add_parser("render", help="rebuild SVG scenes from run artifacts")
    rend.add_argument("--run", required=True, help="artifact path prefix (no extension)")
    rend.add_argument("--out", type=str, default=None)

    diag = sub.add_parser("diag", help="theory-facing diagnostic reports")
    diag.add_argument("--out-dir", type=str, default=None)
    dsub = diag.add_subparsers(dest="check", required=True)

    lam = dsub.add_parser("lambda", help="drift-rate threshold n_a*T*sigma^2/2")
    lam.add_argument("--sigma", type=float, required=True)
    lam.add_argument("--na", type=int, required=True)
    lam.add_argument("--T", type=int, required=True, dest="horizon")

    rstar = dsub.add_parser("rstar", help="minimum-iteration estimate")
    rstar.add_argument("--theta", type=float, required=True)
    rstar.add_argument("--v0", type=float, required=True)
    rstar.add_argument("--vfloor", type=float, required=True)
    rstar.add_argument("--denom", type=float, required=True,
                       help="decay denominator 2*lambda - n_a*T*sigma^2")

    fisher = dsub.add_parser("fisher", help="Monte-Carlo Fisher residual on identity covariance")
    fisher.add_argument("--dim", type=int, required=True)
    fisher.add_argument("--samples", type=int, required=True)
    fisher.add_argument("--seed", type=int, default=0)

    kl = dsub.add_parser("kl", help="closed-form vs Monte-Carlo Gaussian KL")
    kl.add_argument("--dim", type=int, required=True)
    kl.add_argument("--samples", type=int, required=True)
    kl.add_argument("--seed", type=int, default=0)

    return parser


def _overrides_from_args(args) -> dict:
    over: dict = {"problem": {}, "method": {}, "run": {}, "compare": {}}
    if args.problem is not None:
        over["problem"]["name"] = args.problem
    if getattr(args, "env_seed", None) is not None:
        over["problem"]["env_seed"] = args.env_seed
    if getattr(args, "method", None) is not None:
        over["method"]["name"] = args.method
    for key in ("pop", "seed", "iters", "threads"):
        value = getattr(args, key, None)
        if value is not None:
            over["run"][key] = value
    if args.out_dir is not None:
        over["run"]["out_dir"] = args.out_dir
    if args.render is not None:
        over["run"]["render"] = args.render
    if getattr(args, "methods", None) is not None:
        over["compare"]["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if getattr(args, "env_seeds", None) is not None:
        try:
            over["compare"]["env_seeds"] = [
                int(s) for s in args.env_seeds.split(",") if s.strip()
            ]
        except ValueError as exc:
            raise ConfigError(f"--env-seeds must be comma-separated integers: {exc}")
    return {k: v for k, v in over.items() if v}


def _cmd_run(args) -> int:
    cfg = bench.load_config(args.config, _overrides_from_args(args))
    artifacts = bench.execute_run(cfg)
    print(f"run {artifacts.prefix}: {len(artifacts.record.rows)} iterations, "
          f"final best {artifacts.record.final_best_cost()!r}")
    for path in (artifacts.csv_path, artifacts.summary_path, artifacts.env_path,
                 artifacts.svg_path):
        if path is not None:
            print(f"wrote {path}")
    return 0


def _cmd_compare(args) -> int:
    cfg = bench.load_config(args.config, _overrides_from_args(args))
    summary, path = bench.execute_compare(cfg)
    for method, median in summary.medians.items():
        print(f"{method}: median final best cost {median!r}")
    print(f"wrote {path}")
    return 0


def _cmd_render(args) -> int:
    out = Path(args.out) if args.out else None
    path = bench.render_artifacts(Path(args.run), out)
    print(f"wrote {path}")
    return 0


def _diag_rows(args) -> list[dict]:
    if args.check == "lambda":
        value = diagnostics.check_lambda(args.sigma, args.na, args.horizon)
        print(f"lambda threshold (n_a*T*sigma^2/2): {value!r}")
        return [{"check": "lambda_threshold", "value": repr(value)}]
    if args.check == "rstar":
        params = diagnostics.DecayParams(
            lambda_=args.denom / 2.0,
            sigma=0.0,
            n_a=1,
            horizon=1,
            theta=args.theta,
            v0=args.v0,
            v_floor=args.vfloor,
        )
        value = diagnostics.min_iterations_estimate(params)
        print(f"minimum iterations estimate: {value!r}")
        return [{"check": "min_iterations", "value": repr(value)}]
    rng = RngStream(args.seed)
    if args.check == "fisher":
        cov = np.eye(args.dim)
        estimate = diagnostics.empirical_fisher_gaussian_mean(cov, args.samples, rng)
        residual = float(
            np.linalg.norm(estimate - np.linalg.inv(cov))
            / np.linalg.norm(np.linalg.inv(cov))
        )
        print(f"fisher residual (Frobenius, relative): {residual!r}")
        return [{"check": "fisher_residual", "value": repr(residual)}]
    # kl
    gen = rng.generator(draw=0)
    mu0 = gen.normal(size=args.dim)
    mu1 = mu0 + gen.normal(size=args.dim)
    cov = np.eye(args.dim)
    closed = diagnostics.gaussian_kl_same_cov(mu0, mu1, cov)
    mc = diagnostics.gaussian_kl_same_cov_mc(mu0, mu1, cov, args.samples, rng)
    residual = abs(closed - mc.value) / closed if closed else 0.0
    print(f"kl closed form: {closed!r}")
    print(f"kl monte carlo: {mc.value!r} (se {mc.standard_error!r})")
    print(f"kl relative residual: {residual!r}")
    return [
        {"check": "kl_closed", "value": repr(closed)},
        {"check": "kl_monte_carlo", "value": repr(mc.value)},
        {"check": "kl_residual", "value": repr(residual)},
    ]


def _cmd_diag(args) -> int:
    rows = _diag_rows(args)
    cfg = bench.load_config(None, {"run": {"out_dir": args.out_dir}} if args.out_dir else None)
    out = bench.resolve_out_dir(cfg)
    report = out / f"diag_{args.check}.csv"
    with open(report, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["check", "value"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {report}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "compare": _cmd_compare,
    "render": _cmd_render,
    "diag": _cmd_diag,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
