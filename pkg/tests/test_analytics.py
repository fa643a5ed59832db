import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import math  # noqa: E402

import pandas as pd  # noqa: E402
import pytest  # noqa: E402

from src.analytics import (  # noqa: E402
    AGGREGATE_COLUMNS,
    RunFilters,
    aggregate_runs,
    bundle_size_series,
    filter_runs,
    gap_series,
    policy_checks,
    runs_frame,
    runtime_ordering,
    trace_frame,
)
from src.model import TRACE_COLUMNS, IterationRecord, StepType  # noqa: E402


def record(k: int, step: StepType, h: float, size: int) -> IterationRecord:
    return IterationRecord(
        iter=k,
        step_type=step,
        model_gap=0.0,
        obj_value=h,
        bundle_size_pre=size,
        bundle_size_post=size,
        prox_move=0.1,
        wall_time_ns=10,
    )


def frame(steps, sizes, policy="active_cut") -> pd.DataFrame:
    trace = [record(k + 1, s, 5.0 - k, n) for k, (s, n) in enumerate(zip(steps, sizes))]
    return trace_frame(trace, policy)


def run(n, seed, policy, t, converged=True):
    return {
        "n": n, "m": 1, "seed": seed, "policy": policy, "iterations": 10, "serious": 5, "null": 5,
        "max_bundle": 3, "final_gap": 1e-4, "wall_time_ns": t, "converged": converged,
    }


def test_trace_frame_columns():
    df = frame([StepType.SERIOUS], [2])
    assert list(df.columns) == TRACE_COLUMNS + ["policy", "serious_count_so_far", "certificate_bound"]
    assert df.loc[0, "step_type"] == "serious"
    assert list(trace_frame([]).columns) == TRACE_COLUMNS


def test_gap_series_tracks_the_best_serious_value():
    S, N = StepType.SERIOUS, StepType.NULL
    frames = {"all_cut": frame([S, N, S], [1, 2, 3], "all_cut")}
    gaps = gap_series(frames, h_star=1.0)
    assert gaps["gap"].tolist() == [4.0, 3.0, 2.0]
    assert gaps["best_serious_gap"].tolist() == [4.0, 4.0, 2.0]


def test_bundle_size_series_is_long():
    S = StepType.SERIOUS
    frames = {"all_cut": frame([S, S], [1, 2], "all_cut"), "single_cut": frame([S, S], [1, 1], "single_cut")}
    out = bundle_size_series(frames)
    assert list(out.columns) == ["policy", "iter", "bundle_size"]
    assert len(out) == 4


def test_policy_checks():
    S, N = StepType.SERIOUS, StepType.NULL
    good = {
        "all_cut": frame([S, N, N], [1, 2, 3], "all_cut"),
        "single_cut": frame([N, S, N], [2, 1, 2], "single_cut"),
        "active_cut": frame([N, N, S], [2, 3, 2], "active_cut"),
    }
    assert all(policy_checks(good, n=2).values())

    bad = {
        "all_cut": frame([S, N], [3, 2], "all_cut"),
        "single_cut": frame([S, S], [1, 2], "single_cut"),
        "active_cut": frame([N, N], [2, 9], "active_cut"),
    }
    assert not any(policy_checks(bad, n=2).values())


def test_aggregates_skip_non_converged_runs():
    rows = [
        run(10, 0, "all_cut", 100),
        run(10, 1, "all_cut", 300),
        run(10, 2, "all_cut", 10**9, converged=False),
        run(10, 0, "single_cut", 50),
    ]
    runs = runs_frame(rows)
    agg = aggregate_runs(runs)
    assert list(agg.columns) == AGGREGATE_COLUMNS
    row = agg[agg["policy"] == "all_cut"].iloc[0]
    assert row["median_time_ns"] == pytest.approx(200.0)
    assert row["runs"] == 2
    assert row["non_converged"] == 1
    assert runtime_ordering(agg) == [{"n": 10, "fastest_to_slowest": ["single_cut", "all_cut"]}]


def test_all_failed_group_is_counted_but_not_ranked():
    runs = runs_frame([run(5, 0, "active_cut", 0, converged=False), run(5, 0, "all_cut", 7)])
    agg = aggregate_runs(runs)
    failed = agg[agg["policy"] == "active_cut"].iloc[0]
    assert failed["runs"] == 0
    assert failed["non_converged"] == 1
    assert math.isnan(failed["median_time_ns"])
    assert runtime_ordering(agg) == [{"n": 5, "fastest_to_slowest": ["all_cut"]}]


def test_filters_and_ordering_of_rows():
    runs = runs_frame([run(20, 1, "all_cut", 1), run(10, 0, "single_cut", 1), run(10, 0, "all_cut", 1, False)])
    assert runs["n"].tolist() == [10, 10, 20]
    assert runs["policy"].tolist()[:2] == ["all_cut", "single_cut"]
    assert len(filter_runs(runs, RunFilters(n=10, converged_only=True))) == 1
    assert len(filter_runs(runs, RunFilters(policy="all_cut"))) == 2
