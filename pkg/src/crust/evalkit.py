"""Result aggregation: pass@k and its perturbation-aware variants.

Everything here consumes RunRecord lists from the experiment ledger and is
pure: no I/O except the explicit emit helpers at the bottom. Per-file
estimates are always computed first and averaged afterwards, so files with
many runs don't outweigh the rest.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path
from statistics import fmean

from .errors import CoverageGapError


def pass_at_k(n: int, c: int, k: int) -> float:
    """Probability that at least one of k draws from n runs (c of them
    successful) succeeds, computed as 1 - prod((n-c-i)/(n-i))."""
    if n <= 0:
        raise ValueError("pass@k needs at least one run")
    if k <= 0 or k > n:
        raise ValueError(f"k must be in 1..{n}, got {k}")
    if c < 0 or c > n:
        raise ValueError(f"c must be in 0..{n}, got {c}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    out = 1.0
    for i in range(k):
        out *= (n - c - i) / (n - i)
    return 1.0 - out


# ---------------------------------------------------------------------------
# grouping helpers

def _by_cell(records) -> dict[tuple, list]:
    """(source_id, perturbation_id) -> runs."""
    cells = defaultdict(list)
    for r in records:
        cells[(r.source_id, r.perturbation_id)].append(r)
    return dict(cells)


def _succeeded_within(record, cap: int) -> bool:
    it = record.first_success_iteration.get("Fuzzed")
    return it is not None and it <= cap


def _compiled_within(record, cap: int) -> bool:
    it = record.first_success_iteration.get("Compiled")
    return it is not None and it <= cap


# ---------------------------------------------------------------------------
# pass@k by iteration cap

class PassTable:
    """Rows: Compilation success / Final result; columns: iteration caps."""

    def __init__(self, k: int, caps: list[int]):
        self.k = k
        self.caps = caps
        self.rows: dict[str, list[float]] = {}
        self.excluded: list[tuple[str, str]] = []  # cells dropped from Final

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "caps": self.caps,
            "rows": self.rows,
            "excluded_from_final": [list(x) for x in self.excluded],
        }

    def csv_rows(self) -> list[list]:
        head = ["row"] + [f"iterations<={c}" for c in self.caps]
        out = [head]
        for name, vals in self.rows.items():
            out.append([name] + [f"{v:.4f}" for v in vals])
        return out


def pass_table_by_iteration(records, k: int, max_iterations: int = 5) -> PassTable:
    """pass@k as a function of the allowed feedback iterations.

    Compilation success counts every run. Final result requires the behavior
    check, so cells whose C side could not be fuzzed at all are excluded and
    listed on the table instead of silently zeroed.
    """
    caps = list(range(1, max_iterations + 1))
    table = PassTable(k, caps)
    cells = _by_cell(records)

    comp_cols: list[float] = []
    final_cols: list[float] = []
    for cap in caps:
        comp_vals = []
        final_vals = []
        for cell_key in sorted(cells):
            runs = cells[cell_key]
            n = len(runs)
            c = sum(1 for r in runs if _compiled_within(r, cap))
            comp_vals.append(pass_at_k(n, c, min(k, n)))
            fuzzable_runs = [r for r in runs if r.fuzzable]
            if not fuzzable_runs:
                if cap == caps[0]:
                    table.excluded.append(cell_key)
                continue
            nf = len(fuzzable_runs)
            cf = sum(1 for r in fuzzable_runs if _succeeded_within(r, cap))
            final_vals.append(pass_at_k(nf, cf, min(k, nf)))
        comp_cols.append(fmean(comp_vals) if comp_vals else 0.0)
        final_cols.append(fmean(final_vals) if final_vals else 0.0)
    table.rows["Compilation success"] = comp_cols
    table.rows["Final result"] = final_cols
    return table


# ---------------------------------------------------------------------------
# perturbation-aware aggregates

_AGG_MODES = ("robust", "mean", "augmented")


def per_cell_pass_at_k(records, k: int) -> dict[tuple, float]:
    """(source_id, perturbation_id) -> pass@k over that cell's runs."""
    out = {}
    for cell_key, runs in _by_cell(records).items():
        fuzzable_runs = [r for r in runs if r.fuzzable]
        if not fuzzable_runs:
            continue
        n = len(fuzzable_runs)
        c = sum(1 for r in fuzzable_runs if r.success)
        out[cell_key] = pass_at_k(n, c, min(k, n))
    return out


def aggregate_over_perturbations(
    records,
    k: int,
    mode: str = "robust",
    perturbation_ids: list[str] | None = None,
) -> float:
    """Per-file worst / mean / best pass@k across perturbations, averaged
    over files.

    robust takes the minimum per file (a model must survive every listed
    perturbation), augmented the maximum, mean the average. Missing
    (file, perturbation) cells are a coverage error, never an implicit zero.
    """
    if mode not in _AGG_MODES:
        raise ValueError(f"mode must be one of {_AGG_MODES}, got {mode!r}")
    cell_values = per_cell_pass_at_k(records, k)
    files = sorted({sid for sid, _ in cell_values})
    if perturbation_ids is None:
        perturbation_ids = sorted({pid for _, pid in cell_values})
    if not files or not perturbation_ids:
        raise CoverageGapError("no usable cells to aggregate", gaps=[])
    gaps = [
        (sid, pid)
        for sid in files
        for pid in perturbation_ids
        if (sid, pid) not in cell_values
    ]
    if gaps:
        raise CoverageGapError(
            f"{len(gaps)} missing (file, perturbation) cells", gaps=gaps
        )
    per_file = []
    for sid in files:
        vals = [cell_values[(sid, pid)] for pid in perturbation_ids]
        if mode == "robust":
            per_file.append(min(vals))
        elif mode == "augmented":
            per_file.append(max(vals))
        else:
            per_file.append(fmean(vals))
    return fmean(per_file)


def sampled_aggregates(
    records,
    sets: list[list[str]],
    k: int,
    mode: str = "robust",
) -> list[float]:
    """Aggregate once per sampled perturbation set. Cells are computed a
    single time up front, so large set counts stay cheap."""
    if mode not in _AGG_MODES:
        raise ValueError(f"mode must be one of {_AGG_MODES}, got {mode!r}")
    cell_values = per_cell_pass_at_k(records, k)
    files = sorted({sid for sid, _ in cell_values})
    out = []
    for pid_set in sets:
        gaps = [(sid, pid) for sid in files for pid in pid_set if (sid, pid) not in cell_values]
        if gaps:
            raise CoverageGapError(f"{len(gaps)} missing cells for a sampled set", gaps=gaps)
        per_file = []
        for sid in files:
            vals = [cell_values[(sid, pid)] for pid in pid_set]
            if mode == "robust":
                per_file.append(min(vals))
            elif mode == "augmented":
                per_file.append(max(vals))
            else:
                per_file.append(fmean(vals))
        out.append(fmean(per_file))
    return out


# ---------------------------------------------------------------------------
# cross-model comparisons

def solved_sets(records) -> dict:
    """Which files each model solved at least once, and how the models'
    solved sets overlap.

    Returns {"models": {model: [files]}, "regions": {"m1+m2": count, ...},
    "union_fraction": float, "total_files": int}.
    """
    files = sorted({r.source_id for r in records})
    models = sorted({r.model_id for r in records})
    solved: dict[str, set] = {m: set() for m in models}
    for r in records:
        if r.success:
            solved[r.model_id].add(r.source_id)
    regions: dict[str, int] = defaultdict(int)
    union = set()
    for sid in files:
        who = frozenset(m for m in models if sid in solved[m])
        if who:
            union.add(sid)
        label = "+".join(sorted(who)) if who else "(none)"
        regions[label] += 1
    return {
        "models": {m: sorted(solved[m]) for m in models},
        "regions": dict(sorted(regions.items())),
        "union_fraction": len(union) / len(files) if files else 0.0,
        "total_files": len(files),
    }


# ---------------------------------------------------------------------------
# cost and failure shape

def token_cost_curve(records, k: int, max_iterations: int = 5) -> list[dict]:
    """Total tokens spent vs final pass@k, one point per iteration cap.

    Token counts include prompt, completion, and any reported reasoning
    tokens, summed over every attempt up to the cap across all runs.
    """
    points = []
    for cap in range(1, max_iterations + 1):
        tokens = 0
        for r in records:
            for a in r.attempts:
                if a.iteration <= cap:
                    tokens += a.usage.total
        capped = []
        for cell_key, runs in _by_cell(records).items():
            fuzzable_runs = [r for r in runs if r.fuzzable]
            if not fuzzable_runs:
                continue
            n = len(fuzzable_runs)
            c = sum(1 for r in fuzzable_runs if _succeeded_within(r, cap))
            capped.append(pass_at_k(n, c, min(k, n)))
        points.append(
            {
                "iteration_cap": cap,
                "total_tokens": tokens,
                "pass_at_k": fmean(capped) if capped else 0.0,
            }
        )
    return points


def failure_histogram(records, max_iterations: int = 5) -> dict:
    """Counts of failed attempts by (iteration, first failing stage)."""
    counts: dict[tuple[int, str], int] = defaultdict(int)
    for r in records:
        for a in r.attempts:
            failing = next((rep for rep in a.reports if not rep.success), None)
            if failing is not None:
                counts[(a.iteration, failing.stage.label)] += 1
    return {
        "iterations": list(range(1, max_iterations + 1)),
        "counts": {f"{it}:{stage}": n for (it, stage), n in sorted(counts.items())},
    }


def error_distribution(records) -> dict:
    """Error-category rates split by perturbation kind.

    Kinds: identity, deterministic, stochastic. Rates are fractions of runs
    of that kind; "none" is the share that finished without an error."""
    kinds = defaultdict(list)
    for r in records:
        kinds[r.perturbation_kind].append(r)
    out = {}
    for kind in sorted(kinds):
        runs = kinds[kind]
        counts = defaultdict(int)
        for r in runs:
            counts[r.error_category or "none"] += 1
        out[kind] = {
            "runs": len(runs),
            "rates": {cat: counts[cat] / len(runs) for cat in sorted(counts)},
        }
    return out


# ---------------------------------------------------------------------------
# emit helpers

def write_csv(path: str | Path, rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        csv.writer(f).writerows(rows)


def write_json(path: str | Path, data) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def plot_series(label: str, points: list[tuple]) -> dict:
    return {"label": label, "points": [list(p) for p in points]}


def write_plot_data(path: str | Path, series: list[dict]) -> None:
    write_json(path, {"series": series})
