"""Builders shared by the unit and acceptance suites.

The synthetic ledger generator produces RunRecords with the same internal
coherence the pipeline guarantees: stage ladders never skip a rung, success
ends the run, and first_success_iteration is derived from the attempts.
"""

from itertools import combinations
import random

from crust.checkers import CheckReport, CheckStage, Counterexample
from crust.corpus import SourceUnit, compute_metrics, extract_interfaces
from crust.llm import TokenUsage
from crust.pipeline import AttemptRecord, RunRecord, _first_success_by_stage


def mk_unit(sid: str, text: str, group: str = "default") -> SourceUnit:
    unit = SourceUnit(sid, sid, text, group=group)
    unit.interfaces = extract_interfaces(text)
    unit.metrics = compute_metrics(text)
    return unit


def pass_at_k_enum(n: int, c: int, k: int) -> float:
    """Subset-enumeration oracle: fraction of k-subsets of n runs that
    contain at least one of the c successes."""
    idx = range(n)
    hits = 0
    total = 0
    for combo in combinations(idx, k):
        total += 1
        if any(i < c for i in combo):
            hits += 1
    return hits / total


def _reports_for(furthest: int) -> list[CheckReport]:
    """furthest: 0 compile failed, 1 lint failed, 2 fuzz failed, 3 passed."""
    out = [CheckReport(CheckStage.COMPILED, furthest >= 1,
                       diagnostics="" if furthest >= 1 else "error[E0308]: mismatched types")]
    if furthest >= 1:
        out.append(CheckReport(CheckStage.LINTED, furthest >= 2,
                               diagnostics="" if furthest >= 2 else "warning: unused variable"))
    if furthest >= 2:
        cex = None if furthest >= 3 else Counterexample(
            "f", "value-mismatch", {"x": 1}, {"ret": 2}, {"ret": 3})
        out.append(CheckReport(CheckStage.FUZZED, furthest >= 3,
                               diagnostics="" if furthest >= 3 else "outputs differ",
                               counterexample=cex))
    return out


def synth_run(
    rng: random.Random,
    source_id: str,
    perturbation_id: str,
    model_id: str,
    run_index: int,
    max_iterations: int = 5,
    fuzzable: bool = True,
) -> RunRecord:
    attempts = []
    for it in range(1, max_iterations + 1):
        cap = 1 if not fuzzable else 3
        furthest = min(rng.choices([0, 1, 2, 3], weights=[3, 2, 2, 3])[0], cap)
        usage = TokenUsage(rng.randrange(50, 500), rng.randrange(20, 300),
                           rng.randrange(0, 100))
        attempts.append(AttemptRecord(
            iteration=it,
            rust_source=f"fn {source_id}_{it}() {{}}",
            extraction="fenced",
            reports=_reports_for(furthest),
            usage=usage,
            wall_time=0.0,
        ))
        if furthest == 3:
            break
    kind = "identity" if perturbation_id == "identity" else (
        "stochastic" if perturbation_id.endswith("_s") else "deterministic")
    return RunRecord(
        source_id=source_id,
        group="default",
        perturbation_id=perturbation_id,
        perturbation_kind=kind,
        seed=rng.randrange(2**32) if kind == "stochastic" else None,
        model_id=model_id,
        run_index=run_index,
        fuzzable=fuzzable,
        attempts=attempts,
        success=any(a.success for a in attempts),
        first_success_iteration=_first_success_by_stage(attempts),
        error_category=None,
        notes=[],
        wall_time=0.0,
    )


def synth_ledger(
    seed: int,
    files: list[str] | None = None,
    perts: list[str] | None = None,
    models: list[str] | None = None,
    runs: int = 4,
    max_iterations: int = 5,
    fuzzable_rate: float = 1.0,
) -> list[RunRecord]:
    rng = random.Random(seed)
    files = files or [f"file{i}.c" for i in range(rng.randrange(2, 5))]
    perts = perts or ["identity", "pert_a", "pert_b_s"]
    models = models or ["model-1"]
    records = []
    for sid in files:
        fuzzable = rng.random() < fuzzable_rate
        for pid in perts:
            for m in models:
                for ri in range(runs):
                    records.append(synth_run(
                        rng, sid, pid, m, ri,
                        max_iterations=max_iterations, fuzzable=fuzzable,
                    ))
    return records
