# src/analytics.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import pandas as pd

from src.model import TRACE_COLUMNS, IterationRecord, StepType


RUN_COLUMNS = [
    "n",
    "m",
    "seed",
    "policy",
    "iterations",
    "serious",
    "null",
    "max_bundle",
    "final_gap",
    "wall_time_ns",
    "converged",
    "terminated_by",
]

AGGREGATE_COLUMNS = [
    "n",
    "policy",
    "median_time_ns",
    "q1_time_ns",
    "q3_time_ns",
    "median_iterations",
    "runs",
    "non_converged",
]


# Filters used by the report functions to narrow the benchmark rows before aggregating.
@dataclass(frozen=True)
class RunFilters:
    """
    Structured filtering object for benchmark rows.

    Attributes:
        n               -> keep a single dimension
        policy          -> keep a single bundle policy
        converged_only  -> drop runs that hit max_iter or failed
    """
    n: Optional[int] = None
    policy: Optional[str] = None
    converged_only: bool = False


def filter_runs(runs: pd.DataFrame, f: RunFilters) -> pd.DataFrame:
    df = runs
    if f.n is not None:
        df = df[df["n"] == f.n]
    if f.policy:
        df = df[df["policy"] == f.policy]
    if f.converged_only:
        df = df[df["converged"].astype(bool)]
    return df


# ============================================================
# Traces
# ============================================================

def trace_frame(trace: Sequence[IterationRecord], policy: Optional[str] = None) -> pd.DataFrame:
    """
    One row per iteration with the stable trace columns first.

    The MPB-FA columns (policy, serious_count_so_far, certificate_bound) are
    appended when a policy is given.
    """
    rows = [rec.as_row() for rec in trace]
    columns = list(TRACE_COLUMNS)
    if policy is not None:
        columns += ["policy", "serious_count_so_far", "certificate_bound"]
        for row in rows:
            row["policy"] = policy
    if not rows:
        return pd.DataFrame(columns=columns)
    return pd.DataFrame(rows)[columns]


def bundle_size_series(frames: Mapping[str, pd.DataFrame]) -> pd.DataFrame:
    """Long table (policy, iter, bundle_size) of post-policy bundle sizes."""
    parts = [
        df[["iter", "bundle_size_post"]].assign(policy=policy).rename(columns={"bundle_size_post": "bundle_size"})
        for policy, df in frames.items()
    ]
    if not parts:
        return pd.DataFrame(columns=["policy", "iter", "bundle_size"])
    return pd.concat(parts, ignore_index=True)[["policy", "iter", "bundle_size"]]


def gap_series(frames: Mapping[str, pd.DataFrame], h_star: float) -> pd.DataFrame:
    """
    Optimality gap per iteration: h(y) - h* and the running best over serious
    steps (the quantity the method certifies).
    """
    parts = []
    for policy, df in frames.items():
        serious_h = df["obj_value"].where(df["step_type"] == StepType.SERIOUS.value)
        best = serious_h.cummin().ffill()
        parts.append(
            pd.DataFrame(
                {
                    "policy": policy,
                    "iter": df["iter"],
                    "gap": df["obj_value"] - h_star,
                    "best_serious_gap": best - h_star,
                }
            )
        )
    if not parts:
        return pd.DataFrame(columns=["policy", "iter", "gap", "best_serious_gap"])
    return pd.concat(parts, ignore_index=True)


def is_nondecreasing(values: Iterable[float]) -> bool:
    s = pd.Series(list(values), dtype=float)
    return bool(s.is_monotonic_increasing)


def policy_checks(frames: Mapping[str, pd.DataFrame], n: int) -> Dict[str, bool]:
    """
    Qualitative bundle-size properties per policy:
      - all_cut sizes never decrease
      - single_cut keeps exactly one cut right after each serious step
      - active_cut stays at or below n + 3 cuts
    """
    out: Dict[str, bool] = {}
    if "all_cut" in frames:
        out["all_cut_nondecreasing"] = is_nondecreasing(frames["all_cut"]["bundle_size_post"])
    if "single_cut" in frames:
        df = frames["single_cut"]
        after_serious = df.loc[df["step_type"] == StepType.SERIOUS.value, "bundle_size_post"]
        out["single_cut_one_after_serious"] = bool((after_serious == 1).all())
    if "active_cut" in frames:
        out["active_cut_bounded"] = bool((frames["active_cut"]["bundle_size_post"] <= n + 3).all())
    return out


# ============================================================
# Benchmark rows
# ============================================================

def runs_frame(rows: Iterable[Mapping[str, object]]) -> pd.DataFrame:
    """Per-run rows in a deterministic order (n, seed, policy)."""
    df = pd.DataFrame(list(rows), columns=RUN_COLUMNS)
    if df.empty:
        return df
    return df.sort_values(["n", "seed", "policy"], kind="mergesort").reset_index(drop=True)


def aggregate_runs(runs: pd.DataFrame) -> pd.DataFrame:
    """
    Median and interquartile range of wall time per (n, policy), computed over
    converged runs only; non-converged runs are counted separately.
    """
    if runs.empty:
        return pd.DataFrame(columns=AGGREGATE_COLUMNS)

    failed = (
        runs.assign(failed=~runs["converged"].astype(bool))
        .groupby(["n", "policy"])["failed"]
        .sum()
        .rename("non_converged")
    )
    ok = filter_runs(runs, RunFilters(converged_only=True))
    grouped = ok.groupby(["n", "policy"])
    stats = pd.DataFrame(
        {
            "median_time_ns": grouped["wall_time_ns"].median(),
            "q1_time_ns": grouped["wall_time_ns"].quantile(0.25),
            "q3_time_ns": grouped["wall_time_ns"].quantile(0.75),
            "median_iterations": grouped["iterations"].median(),
            "runs": grouped.size(),
        }
    )
    out = stats.join(failed, how="outer").reset_index()
    out["runs"] = out["runs"].fillna(0).astype(int)
    out["non_converged"] = out["non_converged"].fillna(0).astype(int)
    return out.sort_values(["n", "policy"]).reset_index(drop=True)[AGGREGATE_COLUMNS]


def runtime_ordering(aggregates: pd.DataFrame) -> List[Dict[str, object]]:
    """Policies ranked by median time per n (reported, never asserted)."""
    out: List[Dict[str, object]] = []
    for n, df in aggregates.dropna(subset=["median_time_ns"]).groupby("n"):
        ranked = df.sort_values(["median_time_ns", "policy"])["policy"].tolist()
        out.append({"n": int(n), "fastest_to_slowest": ranked})
    return out
