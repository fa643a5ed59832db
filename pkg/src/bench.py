# src/bench.py
from __future__ import annotations

import functools
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.analytics import (
    aggregate_runs,
    bundle_size_series,
    gap_series,
    policy_checks,
    runs_frame,
    runtime_ordering,
    trace_frame,
)
from src.data import load_instance, reference_cache_path, save_instance
from src.duality import (
    alpha_constant,
    alpha_eigen_residual,
    constants_report,
    identity_limit,
    iteration_residuals,
    moreau_phi,
)
from src.errors import BundleKitError, IdentityViolationError, InstanceError
from src.kelley_fcfw import GAP_CRITERION, initial_bundle, run_kelley, verify_kelley_fcfw_equivalence
from src.model import Bundle, PolicyKind, ProblemInstance, SolverConfig, model_value
from src.mpbfa import MpbfaResult, compute_reference_opt, run_mpbfa
from src.subqp import BundleSubproblem
from src.synth import SynthSpec, generate, random_explicit_instance, rng_for


LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
EXIT_SOLVER = 3
EXIT_IDENTITY = 4

POLICIES: Tuple[PolicyKind, ...] = (PolicyKind.ALL_CUT, PolicyKind.SINGLE_CUT, PolicyKind.ACTIVE_CUT)

FAULT_BETA_SHIFT = 1e-3
ALPHA_PAIRS = 20
ALPHA_LIMIT = 1e-9
VERIFY_RHO = 1.0
VERIFY_EPSILON = 1e-4
VERIFY_MAX_ITER = 2000
VERIFY_EQUIVALENCE_ITERS = 15
VERIFY_MAX_CUTS = 30
POLYTOPE_MIN_N = 5
POLYTOPE_SEEDS = 2

# Identities checked only by the verify suite, on top of the per-iteration ones.
SUITE_LIMITS: Dict[str, float] = {
    "kelley_fcfw_correspondence": 1e-8,
    "kelley_fcfw_cut_mismatch": 0.0,
    "alpha_eigen": ALPHA_LIMIT,
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (InstanceError, FileNotFoundError)):
        return EXIT_INPUT
    if isinstance(exc, IdentityViolationError):
        return EXIT_IDENTITY
    return EXIT_SOLVER


def guarded(fn: Callable[..., int]) -> Callable[..., int]:
    """Turn toolkit errors and missing files into exit codes with a one-line message."""

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> int:
        try:
            return fn(*args, **kwargs)
        except (BundleKitError, FileNotFoundError) as exc:
            code = exit_code_for(exc)
            LOGGER.debug("%s failed", fn.__name__, exc_info=True)
            print(f"❌ {exc}", file=sys.stderr)
            return code

    return wrapper


def _write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, default=_json_default), encoding="utf-8")
    return path


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _write_csv(path: Path, df: pd.DataFrame) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    return path


def _parallel(jobs: int, fn: Callable[[Any], Any], items: Sequence[Any]) -> List[Any]:
    """Map in input order; each worker builds its own solver state."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ============================================================
# Benchmark rows
# ============================================================

@dataclass
class BenchReport:
    """Per-run rows and their (n, policy) aggregates."""
    runs: pd.DataFrame
    aggregates: pd.DataFrame
    checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def non_converged(self) -> int:
        if self.runs.empty:
            return 0
        return int((~self.runs["converged"].astype(bool)).sum())

    def ordering(self) -> List[Dict[str, object]]:
        return runtime_ordering(self.aggregates)


def single_cut_budget(all_cut_iterations: int) -> int:
    """single_cut may need more iterations; it gets 50 * (all_cut iterations + 100)."""
    return 50 * (all_cut_iterations + 100)


def failed_row(n: int, m: int, seed: int, policy: PolicyKind) -> Dict[str, Any]:
    return {
        "n": n,
        "m": m,
        "seed": seed,
        "policy": policy.value,
        "iterations": 0,
        "serious": 0,
        "null": 0,
        "max_bundle": 0,
        "final_gap": float("nan"),
        "wall_time_ns": 0,
        "converged": False,
        "terminated_by": "failed",
    }


def run_row(
    instance: ProblemInstance,
    result: Optional[MpbfaResult],
    policy: PolicyKind,
    seed: int,
    h_star: float,
    epsilon: float,
) -> Dict[str, Any]:
    row = failed_row(instance.n, int(instance.metadata.get("m", 0)), seed, policy)
    if result is None:
        return row
    final_gap = result.best_serious_value - h_star
    row.update(
        iterations=result.iterations,
        serious=result.serious_count,
        null=result.null_count,
        max_bundle=max((rec.bundle_size_post for rec in result.trace), default=0),
        final_gap=final_gap,
        wall_time_ns=sum(rec.wall_time_ns for rec in result.trace),
        converged=bool(final_gap <= epsilon),
        terminated_by=result.terminated_by,
    )
    return row


def run_policies(
    instance: ProblemInstance,
    config: SolverConfig,
    policies: Sequence[PolicyKind] = POLICIES,
) -> Dict[PolicyKind, Optional[MpbfaResult]]:
    """
    Same instance and V0 for every policy. With a reference optimum each run
    stops once it is epsilon-optimal. A policy whose run raises a solver error
    is recorded as None so the batch goes on.
    """
    V0 = initial_bundle(instance.lmo, instance.x0)
    out: Dict[PolicyKind, Optional[MpbfaResult]] = {}
    for policy in policies:
        cfg = _with_budget(replace(config, policy=policy), policy, out.get(PolicyKind.ALL_CUT))
        try:
            result = run_mpbfa(instance, cfg, V0, stop_at_reference=True)
        except BundleKitError as exc:
            LOGGER.warning("%s run failed on %s: %s", policy.value, dict(instance.metadata), exc)
            result = None
        out[policy] = result
    return out


def _synth_instance(n: int, m: Optional[int], seed: int, refs_dir: Path) -> ProblemInstance:
    instance = generate(SynthSpec(n, seed, m=m))
    tag = f"synth_n{n}_m{instance.metadata['m']}_s{seed}"
    ref = compute_reference_opt(instance, reference_cache_path(None, refs_dir, tag))
    return instance.with_reference(ref)


# ============================================================
# solve / kelley / generate
# ============================================================

@guarded
def cmd_solve(instance_path: str | Path, config: SolverConfig, out_dir: str | Path) -> int:
    """
    MPB-FA on one instance file. Writes trace.csv and result.json under
    <out_dir>/solve/<stem>/; exit 0 on a certificate stop or, when the file
    carries a reference optimum, once epsilon is reached; 2 otherwise.
    """
    instance_path = Path(instance_path)
    instance = load_instance(instance_path)
    result = run_mpbfa(instance, config)

    target = Path(out_dir) / "solve" / instance_path.stem
    _write_csv(target / "trace.csv", trace_frame(result.trace, config.policy.value))
    payload = result.summary()
    payload["config"] = {
        k: (v.value if isinstance(v, PolicyKind) else v)
        for k, v in asdict(config.resolved(instance.x0)).items()
    }
    if instance.reference_opt is not None:
        payload["h_star"] = instance.reference_opt.h_star
        payload["final_gap"] = result.best_serious_value - instance.reference_opt.h_star
    _write_json(target / "result.json", payload)

    print("\n--- MPB-FA ---")
    print(f"instance: {instance_path}")
    print(f"policy: {config.policy.value}")
    print(f"best serious value: {result.best_serious_value:.10g}")
    print(f"serious / null: {result.serious_count} / {result.null_count}")
    print(f"stopped by: {result.terminated_by} after {result.iterations} iterations")
    print(f"results: {target}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


@guarded
def cmd_kelley(instance_path: str | Path, epsilon: float, max_iter: int, out_dir: str | Path) -> int:
    instance_path = Path(instance_path)
    instance = load_instance(instance_path)
    result = run_kelley(instance, epsilon, max_iter=max_iter)

    target = Path(out_dir) / "kelley" / instance_path.stem
    _write_csv(target / "trace.csv", trace_frame(result.trace))
    _write_json(
        target / "result.json",
        {
            "x": result.x.tolist(),
            "iterations": result.iterations,
            "terminated_by": result.terminated_by,
            "final_gap": result.final_gap,
            "bundle_size": len(result.bundle),
        },
    )
    print("\n--- Kelley ---")
    print(f"x: {result.x.tolist()}")
    print(f"model gap: {result.final_gap:.3e} after {result.iterations} iterations")
    return EXIT_OK if result.terminated_by == GAP_CRITERION else EXIT_NOT_CONVERGED


@guarded
def cmd_generate(
    n: int,
    seed: int,
    out_dir: str | Path,
    m: Optional[int] = None,
    output: Optional[str | Path] = None,
) -> int:
    instance = generate(SynthSpec(n, seed, m=m))
    if output is None:
        output = Path(out_dir) / "instances" / f"synth_n{n}_m{instance.metadata['m']}_s{seed}.json"
    path = save_instance(output, instance)
    print(f"instance written to {path} (after {instance.metadata['attempts']} draws of b)")
    return EXIT_OK


# ============================================================
# Policy comparison and scaling
# ============================================================

@guarded
def cmd_compare_policies(
    n: int,
    m: Optional[int],
    seed: int,
    config: SolverConfig,
    out_dir: str | Path,
    jobs: int = 1,
) -> int:
    """
    One instance under all three policies with the same V0. Writes the
    bundle-size and gap series and the per-run rows.
    """
    out_dir = Path(out_dir)
    instance = _synth_instance(n, m, seed, out_dir / "refs")
    h_star = instance.reference_opt.h_star

    # all_cut sets the single_cut budget, so it goes first when run in parallel too.
    first = run_policies(instance, config, (PolicyKind.ALL_CUT,))
    rest = _parallel(
        jobs,
        lambda p: run_policies(instance, _with_budget(config, p, first[PolicyKind.ALL_CUT]), (p,)),
        [PolicyKind.SINGLE_CUT, PolicyKind.ACTIVE_CUT],
    )
    results = dict(first)
    for part in rest:
        results.update(part)

    frames = {p.value: trace_frame(r.trace, p.value) for p, r in results.items() if r is not None}
    rows = [run_row(instance, results[p], p, seed, h_star, config.epsilon) for p in POLICIES]
    report = BenchReport(runs_frame(rows), aggregate_runs(runs_frame(rows)), policy_checks(frames, n))

    target = out_dir / "compare" / f"n{n}_m{instance.metadata['m']}_s{seed}"
    _write_csv(target / "bundle_size_series.csv", bundle_size_series(frames))
    _write_csv(target / "gap_series.csv", gap_series(frames, h_star))
    _write_csv(target / "runs.csv", report.runs)
    _write_json(target / "checks.json", {"h_star": h_star, "checks": report.checks})

    print("\n--- Policy comparison ---")
    print(report.runs[["policy", "iterations", "serious", "null", "max_bundle", "final_gap", "converged"]].to_string(index=False))
    for name, ok in report.checks.items():
        print(f"{name}: {'ok' if ok else 'FAILED'}")
    print(f"results: {target}")
    return EXIT_OK if report.non_converged == 0 else EXIT_NOT_CONVERGED


def _with_budget(config: SolverConfig, policy: PolicyKind, all_cut: Optional[MpbfaResult]) -> SolverConfig:
    if policy is PolicyKind.SINGLE_CUT and all_cut is not None:
        return replace(config, max_iter=max(config.max_iter, single_cut_budget(all_cut.iterations)))
    return config


@guarded
def cmd_scaling(
    n_list: Sequence[int],
    seeds: int,
    config: SolverConfig,
    out_dir: str | Path,
    m: Optional[int] = None,
    jobs: int = 1,
) -> int:
    """
    seeds instances per n, every instance under all three policies. Failed or
    non-converged runs are kept as rows and excluded from the aggregates.
    """
    if not n_list:
        raise InstanceError("n_list must not be empty")
    if seeds < 1:
        raise InstanceError(f"seeds must be >= 1, got {seeds}")
    out_dir = Path(out_dir)
    refs_dir = out_dir / "refs"

    def one(key: Tuple[int, int]) -> List[Dict[str, Any]]:
        n, seed = key
        try:
            instance = _synth_instance(n, m, seed, refs_dir)
        except BundleKitError as exc:
            LOGGER.warning("n=%d seed=%d: instance setup failed: %s", n, seed, exc)
            return [failed_row(n, m or max(1, n // 5), seed, p) for p in POLICIES]
        h_star = instance.reference_opt.h_star
        results = run_policies(instance, config)
        return [run_row(instance, results[p], p, seed, h_star, config.epsilon) for p in POLICIES]

    keys = [(n, s) for n in n_list for s in range(seeds)]
    rows = [row for part in _parallel(jobs, one, keys) for row in part]
    runs = runs_frame(rows)
    report = BenchReport(runs, aggregate_runs(runs))

    target = out_dir / "scaling"
    _write_csv(target / "runs.csv", report.runs)
    _write_csv(target / "aggregates.csv", report.aggregates)

    print("\n--- Scaling ---")
    print(report.aggregates.to_string(index=False))
    for entry in report.ordering():
        print(f"n={entry['n']}: {' < '.join(entry['fastest_to_slowest'])}")
    if report.non_converged:
        print(f"non-converged runs: {report.non_converged}")
    print(f"results: {target}")
    return EXIT_OK if report.non_converged == 0 else EXIT_NOT_CONVERGED


# ============================================================
# Identity suite
# ============================================================

@dataclass
class ResidualTable:
    """Worst residual per identity, with the ratio to its (possibly relative) limit."""
    rows: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def record(self, name: str, value: float, limit: float) -> None:
        row = self.rows.setdefault(name, {"max_residual": 0.0, "limit": limit, "worst_ratio": 0.0, "checks": 0})
        row["checks"] += 1
        row["max_residual"] = max(row["max_residual"], float(value))
        ratio = 0.0 if value == 0 else (np.inf if limit == 0 else float(value) / limit)
        if ratio >= row["worst_ratio"]:
            row["worst_ratio"] = ratio
            row["limit"] = limit

    def merge(self, other: "ResidualTable") -> None:
        for name, row in other.rows.items():
            mine = self.rows.setdefault(name, {"max_residual": 0.0, "limit": row["limit"], "worst_ratio": 0.0, "checks": 0})
            mine["checks"] += row["checks"]
            mine["max_residual"] = max(mine["max_residual"], row["max_residual"])
            if row["worst_ratio"] >= mine["worst_ratio"]:
                mine["worst_ratio"] = row["worst_ratio"]
                mine["limit"] = row["limit"]

    def violated(self) -> List[str]:
        return sorted(name for name, row in self.rows.items() if row["worst_ratio"] > 1.0)


@dataclass
class SuiteCase:
    label: str
    instance: ProblemInstance
    seed: int
    explicit: bool


def verify_cases(seeds: int, sizes: Sequence[int]) -> List[SuiteCase]:
    """
    Explicit instances round-robin over sizes, then polytope instances for the
    sizes >= POLYTOPE_MIN_N (at most POLYTOPE_SEEDS each).
    """
    cases: List[SuiteCase] = []
    for i in range(seeds):
        n = sizes[i % len(sizes)]
        n_cuts = min(VERIFY_MAX_CUTS, 3 * n + 3)
        inst = random_explicit_instance(n, n_cuts, seed=i, mu=1.0)
        cases.append(SuiteCase(f"explicit n={n} seed={i}", inst, i, True))
    variants = [(n, s) for n in sizes if n >= POLYTOPE_MIN_N for s in range(min(POLYTOPE_SEEDS, seeds))]
    for n, seed in variants:
        inst = generate(SynthSpec(n, seed))
        cases.append(SuiteCase(f"polytope n={n} seed={seed}", inst, seed, False))
    return cases


def _sample_bundle(instance: ProblemInstance, seed: int, points: int = 5) -> Bundle:
    bundle = initial_bundle(instance.lmo, instance.x0)
    for z in rng_for(seed, 99).uniform(-1.0, 1.0, size=(points, instance.n)):
        bundle, _, _ = bundle.add(instance.lmo.lmo_max(z))
    return bundle


def run_case(case: SuiteCase, inject_fault: bool = False) -> Tuple[ResidualTable, List[str]]:
    """Residuals of every identity on one instance; errors are returned, never raised."""
    table = ResidualTable()
    errors: List[str] = []
    inst = case.instance

    # A single subproblem at x0, checked outside the driver (the fault goes in here).
    try:
        bundle = _sample_bundle(inst, case.seed)
        sol = BundleSubproblem(inst.objective, VERIFY_RHO).solve(bundle, inst.x0)
        if inject_fault:
            sol = replace(sol, beta=sol.beta + FAULT_BETA_SHIFT)
        y = sol.x_next
        f_y = inst.lmo.f_of(y)
        gap = f_y - model_value(bundle, y).value
        f_dual = inst.lmo.f_of(-moreau_phi(inst.objective, VERIFY_RHO, inst.x0, sol.w).grad)
        res = iteration_residuals(inst.objective, bundle, sol, inst.x0, VERIFY_RHO, f_y, gap, f_at_dual=f_dual)
        for name, value in res.as_dict().items():
            if value is not None:
                table.record(name, value, identity_limit(name, sol.primal_value))
    except BundleKitError as exc:
        errors.append(f"{case.label}: subproblem check: {exc}")

    config = SolverConfig(
        epsilon=VERIFY_EPSILON,
        rho=VERIFY_RHO,
        max_iter=VERIFY_MAX_ITER,
        policy=PolicyKind.ACTIVE_CUT,
        diagnostics=True,
    )
    try:
        result = run_mpbfa(inst, config)
        for rec in result.trace:
            if rec.duality_residuals is None:
                continue
            # The driver already enforced the limits; this records how close it came.
            primal = rec.subproblem_value or 0.0
            for name, value in rec.duality_residuals.as_dict().items():
                if value is not None:
                    table.record(name, value, identity_limit(name, primal))
    except IdentityViolationError as exc:
        table.record(exc.identity, exc.residual, exc.limit)
    except BundleKitError as exc:
        errors.append(f"{case.label}: mpbfa: {exc}")

    if case.explicit:
        try:
            eq = verify_kelley_fcfw_equivalence(inst, iters=VERIFY_EQUIVALENCE_ITERS)
            table.record("kelley_fcfw_correspondence", eq.max_x_residual, SUITE_LIMITS["kelley_fcfw_correspondence"])
            table.record("kelley_fcfw_cut_mismatch", eq.max_cut_id_mismatch, SUITE_LIMITS["kelley_fcfw_cut_mismatch"])
        except BundleKitError as exc:
            errors.append(f"{case.label}: kelley/fcfw: {exc}")
    return table, errors


def alpha_checks(seed: int = 0, pairs: int = ALPHA_PAIRS) -> ResidualTable:
    """Closed-form alpha against the smallest eigenvalue of the two-projection Hessian."""
    table = ResidualTable()
    table.record("alpha_eigen", abs(alpha_constant(1.0, 2.0) - (1.0 - np.sqrt(2.0) / 2.0)), ALPHA_LIMIT)
    for L_g, rho in 10.0 ** rng_for(seed, 7).uniform(-1.0, 1.0, size=(pairs, 2)):
        table.record("alpha_eigen", alpha_eigen_residual(float(L_g), float(rho)), ALPHA_LIMIT)
    return table


@guarded
def cmd_verify(
    seeds: int,
    sizes: Sequence[int],
    out_dir: str | Path,
    inject_fault: bool = False,
    jobs: int = 1,
) -> int:
    """
    Identity suite on seeded explicit and polytope instances. Writes
    verify_report.txt and verify_report.json; exit 4 naming every violated
    identity.
    """
    if seeds < 1 or not sizes:
        raise InstanceError("verify needs at least one seed and one size")
    cases = verify_cases(seeds, sizes)
    outcomes = _parallel(jobs, lambda c: run_case(c, inject_fault), cases)

    table = alpha_checks()
    errors: List[str] = []
    for part, errs in outcomes:
        table.merge(part)
        errors.extend(errs)
    violated = table.violated()

    first = cases[0].instance
    x_star = compute_reference_opt(first).x_star if cases[0].explicit else None
    constants = constants_report(first.lmo, first.objective, VERIFY_RHO, VERIFY_EPSILON, first.x0, x_star)

    report = {
        "instances": [c.label for c in cases],
        "inject_fault": inject_fault,
        "identities": {name: table.rows[name] for name in sorted(table.rows)},
        "violated": violated,
        "errors": errors,
        "constants": constants.as_dict(),
    }
    out_dir = Path(out_dir)
    _write_json(out_dir / "verify_report.json", report)
    lines = [f"{'identity':<28} {'max residual':>14} {'limit':>10} {'checks':>7}"]
    lines += [
        f"{name:<28} {row['max_residual']:>14.3e} {row['limit']:>10.1e} {int(row['checks']):>7}"
        for name, row in sorted(table.rows.items())
    ]
    (out_dir / "verify_report.txt").write_text("\n".join(lines + [""] + [f"error: {e}" for e in errors]) + "\n", encoding="utf-8")

    print("\n" + "=" * 10 + " IDENTITY SUITE " + "=" * 10 + "\n")
    print("\n".join(lines))
    print("-" * 50)
    for e in errors:
        print(f"error: {e}")
    if violated:
        print(f"❌ violated identities: {', '.join(violated)}")
        return EXIT_IDENTITY
    if errors:
        return EXIT_SOLVER
    print(f"all identities within contract ({len(cases)} instances)")
    return EXIT_OK
