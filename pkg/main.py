# main.py
from __future__ import annotations

import argparse
import logging
import os
from pathlib import Path

from src.bench import (
    EXIT_INPUT,
    cmd_compare_policies,
    cmd_generate,
    cmd_kelley,
    cmd_scaling,
    cmd_solve,
    cmd_verify,
)
from src.errors import PreconditionError
from src.model import PolicyKind, SolverConfig


ROOT = Path(__file__).resolve().parent

LOG_FORMAT = "%(levelname)s :: %(asctime)s :: %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def add_common_flags(p: argparse.ArgumentParser, *, epsilon: float = 2e-3) -> None:
    p.add_argument("--epsilon", type=float, default=epsilon, help=f"Target accuracy (default: {epsilon})")
    p.add_argument("--delta", type=float, default=None, help="Null-step accuracy (default: epsilon / 2)")
    p.add_argument("--rho", type=float, default=1.0, help="Proximal parameter (default: 1.0)")
    p.add_argument(
        "--policy",
        choices=[k.value for k in PolicyKind],
        default=PolicyKind.ACTIVE_CUT.value,
        help="Bundle management policy (default: active_cut)",
    )
    p.add_argument("--max-iter", type=int, default=10_000, help="Iteration cap (default: 10000)")
    p.add_argument("--radius", type=float, default=None, help="R in the stopping certificate (default: 2||x0|| + 10)")
    p.add_argument("--seed", type=int, default=0, help="Instance seed (default: 0)")
    p.add_argument(
        "--jobs",
        type=int,
        default=int(os.getenv("BUNDLEKIT_JOBS", "1")),
        help="Parallel workers for batch commands (env BUNDLEKIT_JOBS, default: 1)",
    )
    p.add_argument(
        "--out-dir",
        default=os.getenv("BUNDLEKIT_OUT_DIR", str(ROOT / "out")),
        help="Output directory (env BUNDLEKIT_OUT_DIR, default: ./out)",
    )
    p.add_argument("--diagnostics", action="store_true", help="Check the primal-dual identities every iteration")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="main.py",
        description="Proximal bundle / Frank-Wolfe toolkit: solve, benchmark and verify.",
    )
    p.add_argument(
        "--log-level",
        default=os.getenv("BUNDLEKIT_LOG_LEVEL", "WARNING"),
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (env BUNDLEKIT_LOG_LEVEL, default: WARNING)",
    )
    sub = p.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="Run MPB-FA on an instance file")
    p_solve.add_argument("instance", help="Path to an instance JSON file")
    add_common_flags(p_solve)

    p_kelley = sub.add_parser("kelley", help="Run Kelley's cutting-plane method (strongly convex g)")
    p_kelley.add_argument("instance", help="Path to an instance JSON file")
    add_common_flags(p_kelley, epsilon=1e-6)

    p_gen = sub.add_parser("generate", help="Write a random polytope instance")
    p_gen.add_argument("--n", type=int, default=200, help="Dimension (default: 200)")
    p_gen.add_argument("--m", type=int, default=None, help="Polytope rows (default: n // 5)")
    p_gen.add_argument("--output", default=None, help="Target file (default: <out-dir>/instances/...)")
    add_common_flags(p_gen)

    p_cmp = sub.add_parser("compare-policies", help="One instance under all three bundle policies")
    p_cmp.add_argument("--n", type=int, default=200, help="Dimension (default: 200)")
    p_cmp.add_argument("--m", type=int, default=40, help="Polytope rows (default: 40)")
    add_common_flags(p_cmp)

    p_scale = sub.add_parser("scaling", help="Runtime over dimensions and seeds")
    p_scale.add_argument("--n-list", type=_int_list, default=[25, 50, 100, 200], help="Comma-separated dimensions")
    p_scale.add_argument("--seeds", type=int, default=20, help="Instances per dimension (default: 20)")
    p_scale.add_argument("--m", type=int, default=None, help="Polytope rows (default: n // 5)")
    add_common_flags(p_scale)

    p_verify = sub.add_parser("verify", help="Primal-dual identity suite")
    p_verify.add_argument("--seeds", type=int, default=20, help="Explicit instances (default: 20)")
    p_verify.add_argument("--sizes", type=_int_list, default=[2, 5, 10], help="Comma-separated dimensions")
    p_verify.add_argument("--inject-fault", action="store_true", help="Perturb beta by 1e-3 (negative control)")
    add_common_flags(p_verify)
    p_verify.set_defaults(out_dir=os.getenv("BUNDLEKIT_OUT_DIR", str(ROOT / "results")))

    return p


def config_from_args(args: argparse.Namespace) -> SolverConfig:
    return SolverConfig(
        epsilon=args.epsilon,
        delta=args.delta,
        rho=args.rho,
        max_iter=args.max_iter,
        policy=PolicyKind(args.policy),
        diagnostics=args.diagnostics,
        radius_bound=args.radius,
    )


def main() -> int:
    parser = build_parser()
    args = parser.parse_args()

    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT, datefmt=LOG_DATEFMT)

    if args.command == "generate":
        return cmd_generate(args.n, args.seed, args.out_dir, m=args.m, output=args.output)

    if args.command == "kelley":
        return cmd_kelley(args.instance, args.epsilon, args.max_iter, args.out_dir)

    if args.command == "verify":
        return cmd_verify(args.seeds, args.sizes, args.out_dir, inject_fault=args.inject_fault, jobs=args.jobs)

    try:
        config = config_from_args(args)
    except PreconditionError as exc:
        print(f"❌ {exc}")
        return EXIT_INPUT

    if args.command == "solve":
        return cmd_solve(args.instance, config, args.out_dir)

    if args.command == "compare-policies":
        return cmd_compare_policies(args.n, args.m, args.seed, config, args.out_dir, jobs=args.jobs)

    if args.command == "scaling":
        return cmd_scaling(args.n_list, args.seeds, config, args.out_dir, m=args.m, jobs=args.jobs)

    parser.print_help()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
