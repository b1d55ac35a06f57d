"""Offline tests for the estimator, pass tables, aggregates, and report helpers."""

import csv
import json
import random

import pytest

from crust.checkers import CheckReport, CheckStage
from crust.errors import CoverageGapError
from crust.evalkit import (
    aggregate_over_perturbations,
    error_distribution,
    failure_histogram,
    pass_at_k,
    pass_table_by_iteration,
    per_cell_pass_at_k,
    plot_series,
    sampled_aggregates,
    solved_sets,
    token_cost_curve,
    write_csv,
    write_json,
    write_plot_data,
)
from crust.llm import TokenUsage
from crust.pipeline import AttemptRecord, RunRecord

from helpers import pass_at_k_enum, synth_ledger


def rec(
    sid="a.c",
    pid="identity",
    model="m",
    idx=0,
    success=False,
    fuzzable=True,
    compiled_at=None,
    fuzzed_at=None,
    kind="identity",
    error=None,
    attempts=None,
):
    fsi = {"Compiled": compiled_at, "Linted": compiled_at, "Fuzzed": fuzzed_at}
    return RunRecord(
        source_id=sid, group="default", perturbation_id=pid, perturbation_kind=kind,
        seed=None, model_id=model, run_index=idx, fuzzable=fuzzable,
        attempts=attempts or [], success=success, first_success_iteration=fsi,
        error_category=error,
    )


# ---------------------------------------------------------------------------
# estimator

def test_pass_at_k_edges():
    assert pass_at_k(10, 0, 5) == 0.0
    assert pass_at_k(10, 6, 5) == 1.0  # n - c < k forces a hit
    assert pass_at_k(5, 5, 1) == 1.0
    assert pass_at_k(1, 0, 1) == 0.0
    assert pass_at_k(1, 1, 1) == 1.0


def test_pass_at_k_rejects_bad_arguments():
    with pytest.raises(ValueError):
        pass_at_k(0, 0, 1)
    with pytest.raises(ValueError):
        pass_at_k(5, 2, 0)
    with pytest.raises(ValueError):
        pass_at_k(5, 2, 6)
    with pytest.raises(ValueError):
        pass_at_k(5, -1, 2)
    with pytest.raises(ValueError):
        pass_at_k(5, 6, 2)


def test_pass_at_k_matches_enumeration_spot_checks():
    for n, c, k in [(4, 2, 2), (6, 3, 2), (8, 1, 5), (7, 7, 3), (9, 4, 4)]:
        assert pass_at_k(n, c, k) == pytest.approx(pass_at_k_enum(n, c, k), abs=1e-12)


def test_pass_at_k_known_value():
    # 1 - (2/4)*(1/3) = 5/6
    assert pass_at_k(4, 2, 2) == pytest.approx(5 / 6, abs=1e-12)


# ---------------------------------------------------------------------------
# iteration-capped table

def _table_records():
    # one cell, four runs: compiled at iterations 1,1,2,never; fuzzed at 1,2,never,never
    return [
        rec(idx=0, success=True, compiled_at=1, fuzzed_at=1),
        rec(idx=1, success=True, compiled_at=1, fuzzed_at=2),
        rec(idx=2, compiled_at=2),
        rec(idx=3),
    ]


def test_pass_table_hand_checked():
    table = pass_table_by_iteration(_table_records(), k=1, max_iterations=3)
    assert table.caps == [1, 2, 3]
    assert table.rows["Compilation success"] == pytest.approx([0.5, 0.75, 0.75])
    assert table.rows["Final result"] == pytest.approx([0.25, 0.5, 0.5])
    assert table.excluded == []


def test_pass_table_excludes_unfuzzable_cells():
    records = _table_records() + [
        rec(sid="b.c", idx=i, fuzzable=False, compiled_at=1) for i in range(4)
    ]
    table = pass_table_by_iteration(records, k=1, max_iterations=2)
    assert table.excluded == [("b.c", "identity")]
    # compilation row still counts b.c; final row is a.c only
    assert table.rows["Compilation success"][0] == pytest.approx((0.5 + 1.0) / 2)
    assert table.rows["Final result"] == pytest.approx([0.25, 0.5])


def test_pass_table_shape_properties_on_synthetic_ledgers():
    for seed in range(20):
        records = synth_ledger(seed=seed, runs=4)
        table = pass_table_by_iteration(records, k=2, max_iterations=5)
        comp = table.rows["Compilation success"]
        final = table.rows["Final result"]
        for row in (comp, final):
            assert all(row[i] <= row[i + 1] + 1e-12 for i in range(len(row) - 1))
        assert all(c >= f - 1e-12 for c, f in zip(comp, final))


def test_pass_table_monotone_in_k():
    records = synth_ledger(seed=7, runs=4)
    prev = None
    for k in (1, 2, 3, 4):
        final = pass_table_by_iteration(records, k=k).rows["Final result"]
        if prev is not None:
            assert all(a <= b + 1e-12 for a, b in zip(prev, final))
        prev = final


def test_pass_table_csv_layout():
    table = pass_table_by_iteration(_table_records(), k=1, max_iterations=2)
    rows = table.csv_rows()
    assert rows[0] == ["row", "iterations<=1", "iterations<=2"]
    assert rows[1][0] == "Compilation success"
    assert rows[2][0] == "Final result"
    d = table.to_json()
    assert d["k"] == 1 and d["caps"] == [1, 2]


# ---------------------------------------------------------------------------
# perturbation aggregates

def _agg_records():
    out = []
    # a.c: identity 2/4 successes, pert 1/4
    for i in range(4):
        out.append(rec(sid="a.c", pid="identity", idx=i, success=i < 2))
        out.append(rec(sid="a.c", pid="de_morgan", idx=i, success=i < 1, kind="deterministic"))
    # b.c: identity 0/4, pert 4/4
    for i in range(4):
        out.append(rec(sid="b.c", pid="identity", idx=i, success=False))
        out.append(rec(sid="b.c", pid="de_morgan", idx=i, success=True, kind="deterministic"))
    return out


def test_per_cell_values():
    vals = per_cell_pass_at_k(_agg_records(), k=2)
    assert vals[("a.c", "identity")] == pytest.approx(5 / 6)
    assert vals[("a.c", "de_morgan")] == pytest.approx(1 / 2)
    assert vals[("b.c", "identity")] == 0.0
    assert vals[("b.c", "de_morgan")] == 1.0


def test_per_cell_skips_unfuzzable():
    records = [rec(sid="c.c", idx=i, fuzzable=False) for i in range(4)]
    assert per_cell_pass_at_k(records, k=2) == {}


def test_aggregate_modes_hand_checked():
    records = _agg_records()
    # per-file: a.c -> min 1/2, mean 2/3, max 5/6; b.c -> 0, 1/2, 1
    assert aggregate_over_perturbations(records, 2, "robust") == pytest.approx(1 / 4)
    assert aggregate_over_perturbations(records, 2, "mean") == pytest.approx(7 / 12)
    assert aggregate_over_perturbations(records, 2, "augmented") == pytest.approx(11 / 12)


def test_aggregate_mode_ordering_property():
    for seed in range(20):
        records = synth_ledger(seed=seed, runs=4)
        r = aggregate_over_perturbations(records, 5, "robust")
        m = aggregate_over_perturbations(records, 5, "mean")
        a = aggregate_over_perturbations(records, 5, "augmented")
        assert r <= m + 1e-12
        assert m <= a + 1e-12


def test_aggregate_identity_only_equals_plain():
    records = _agg_records()
    plain = (5 / 6 + 0.0) / 2
    for mode in ("robust", "mean", "augmented"):
        got = aggregate_over_perturbations(records, 2, mode, ["identity"])
        assert got == pytest.approx(plain, abs=1e-15)


def test_aggregate_rejects_unknown_mode():
    with pytest.raises(ValueError, match="mode"):
        aggregate_over_perturbations(_agg_records(), 2, "median")


def test_aggregate_missing_cell_is_coverage_error():
    records = [r for r in _agg_records() if not (r.source_id == "b.c" and r.perturbation_id == "de_morgan")]
    with pytest.raises(CoverageGapError) as exc:
        aggregate_over_perturbations(records, 2, "robust")
    assert exc.value.gaps == [("b.c", "de_morgan")]


def test_aggregate_empty_records():
    with pytest.raises(CoverageGapError):
        aggregate_over_perturbations([], 2, "robust")


def test_sampled_aggregates_match_single_aggregate():
    records = _agg_records()
    sets = [["identity"], ["identity", "de_morgan"], ["de_morgan"]]
    got = sampled_aggregates(records, sets, 2, "robust")
    want = [aggregate_over_perturbations(records, 2, "robust", s) for s in sets]
    assert got == pytest.approx(want)


def test_sampled_aggregates_missing_cell():
    records = _agg_records()
    with pytest.raises(CoverageGapError):
        sampled_aggregates(records, [["identity", "nonexistent"]], 2)


# ---------------------------------------------------------------------------
# cross-model overlap

def test_solved_sets_regions():
    records = [
        rec(sid="a.c", model="m1", success=True),
        rec(sid="a.c", model="m2", success=True),
        rec(sid="b.c", model="m1", success=True),
        rec(sid="b.c", model="m2", success=False),
        rec(sid="c.c", model="m1", success=False),
        rec(sid="c.c", model="m2", success=False),
    ]
    out = solved_sets(records)
    assert out["models"] == {"m1": ["a.c", "b.c"], "m2": ["a.c"]}
    assert out["regions"] == {"(none)": 1, "m1": 1, "m1+m2": 1}
    assert out["union_fraction"] == pytest.approx(2 / 3)
    assert out["total_files"] == 3


def test_solved_sets_empty():
    out = solved_sets([])
    assert out["total_files"] == 0
    assert out["union_fraction"] == 0.0


# ---------------------------------------------------------------------------
# cost and failure shape

def _usage_attempt(iteration, total):
    return AttemptRecord(iteration, "", "fenced", [], TokenUsage(prompt_tokens=total))


def test_token_cost_curve_totals_and_monotonicity():
    records = [
        rec(idx=0, success=True, compiled_at=1, fuzzed_at=2,
            attempts=[_usage_attempt(1, 100), _usage_attempt(2, 50)]),
        rec(idx=1, attempts=[_usage_attempt(1, 30)]),
    ]
    points = token_cost_curve(records, k=1, max_iterations=3)
    assert [p["iteration_cap"] for p in points] == [1, 2, 3]
    assert [p["total_tokens"] for p in points] == [130, 180, 180]
    assert points[0]["pass_at_k"] == 0.0
    assert points[1]["pass_at_k"] == pytest.approx(0.5)
    xs = [p["total_tokens"] for p in points]
    assert xs == sorted(xs)


def test_failure_histogram_first_failing_stage_only():
    attempts = [
        AttemptRecord(1, "", "fenced", [CheckReport(CheckStage.COMPILED, False, "e")], TokenUsage()),
        AttemptRecord(
            2, "", "fenced",
            [
                CheckReport(CheckStage.COMPILED, True),
                CheckReport(CheckStage.LINTED, False, "w"),
            ],
            TokenUsage(),
        ),
        AttemptRecord(
            3, "", "fenced",
            [
                CheckReport(CheckStage.COMPILED, True),
                CheckReport(CheckStage.LINTED, True),
                CheckReport(CheckStage.FUZZED, True),
            ],
            TokenUsage(),
        ),
    ]
    out = failure_histogram([rec(attempts=attempts, success=True)], max_iterations=3)
    assert out["counts"] == {"1:Compiled": 1, "2:Linted": 1}
    assert out["iterations"] == [1, 2, 3]


def test_error_distribution_by_kind():
    records = [
        rec(idx=0, kind="identity"),
        rec(idx=1, kind="identity", error="LlmApi"),
        rec(idx=2, kind="deterministic"),
        rec(idx=3, kind="stochastic", error="FuzzingSetup"),
    ]
    out = error_distribution(records)
    assert out["identity"]["runs"] == 2
    assert out["identity"]["rates"] == {"LlmApi": 0.5, "none": 0.5}
    assert out["deterministic"]["rates"] == {"none": 1.0}
    assert out["stochastic"]["rates"] == {"FuzzingSetup": 1.0}


# ---------------------------------------------------------------------------
# emit helpers

def test_write_csv_and_json(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, [["a", "b"], ["1", "2"]])
    with open(p, newline="") as f:
        assert list(csv.reader(f)) == [["a", "b"], ["1", "2"]]
    j = tmp_path / "t.json"
    write_json(j, {"z": 1, "a": [2]})
    assert json.loads(j.read_text()) == {"z": 1, "a": [2]}
    assert j.read_text().endswith("\n")


def test_plot_data_shape(tmp_path):
    s = plot_series("final", [(1, 0.5), (2, 0.75)])
    assert s == {"label": "final", "points": [[1, 0.5], [2, 0.75]]}
    p = tmp_path / "plot.json"
    write_plot_data(p, [s])
    assert json.loads(p.read_text()) == {"series": [s]}
