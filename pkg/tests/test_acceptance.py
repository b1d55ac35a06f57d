"""End-to-end acceptance suite.

Each test here is one gate criterion; the terminal summary prints a PASS or
FAIL line per criterion (see conftest). Offline criteria use the scripted
backend and simulated checkers only; the rest drive the real toolchain and
carry the `toolchain` marker.
"""

import json
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import pytest

from crust.checkers import (
    FuzzConfig,
    SimulatedCheckers,
    ToolchainCheckers,
    differential_self_check,
    parse_df_json,
)
from crust.corpus import compute_metrics, corpus_report, load_corpus
from crust.evalkit import (
    aggregate_over_perturbations,
    pass_at_k,
    pass_table_by_iteration,
    token_cost_curve,
)
from crust.llm import BackendConfig, ScriptedBackend, TokenUsage
from crust.perturb import apply as apply_perturbation
from crust.pipeline import ExperimentLedger, run_experiment
from crust.config import _expand_perturbations

from conftest import FIXTURES
from helpers import mk_unit, pass_at_k_enum, synth_ledger

C_ADD = "int add_one(int x) { return x + 1; }"
GOOD_RUST = "```rust\npub extern \"C\" fn add_one(x: i32) -> i32 { x.wrapping_add(1) }\n```"
BAD_RUST = "```rust\nfn add_one(x i32 -> i32 { BROKEN\n```"

COMPILE_FAIL_RULES = [
    {"stage": "compile", "match": "BROKEN", "diagnostics": "error: expected `)`"}
]


@contextmanager
def _within(seconds: float):
    t0 = time.monotonic()
    yield
    elapsed = time.monotonic() - t0
    assert elapsed < seconds, f"took {elapsed:.1f}s, budget {seconds:.0f}s"


def _backend(entries):
    return ScriptedBackend(BackendConfig(name="mock", kind="scripted-mock"), entries)


def _fail_once_backend(usage_one=None, usage_two=None):
    return _backend(
        [
            {"response": BAD_RUST, **({"usage": usage_one} if usage_one else {})},
            {"response": GOOD_RUST, **({"usage": usage_two} if usage_two else {})},
        ]
    )


# ---------------------------------------------------------------------------
# offline criteria

def test_01_estimator_oracle():
    """1 estimator matches subset enumeration over n <= 12 (offline)"""
    with _within(5.0):
        for n in range(1, 13):
            for c in range(0, n + 1):
                for k in range(1, n + 1):
                    expected = pass_at_k_enum(n, c, k)
                    assert abs(pass_at_k(n, c, k) - expected) <= 1e-12, (n, c, k)


def test_02_feedback_loop_semantics(tmp_path):
    """2 feedback loop repairs after one failure and caps at five attempts (offline)"""
    with _within(1.0):
        unit = mk_unit("add.c", C_ADD)
        checkers = SimulatedCheckers(COMPILE_FAIL_RULES)

        with ExperimentLedger(tmp_path / "ok.jsonl", "h") as led:
            (record,) = run_experiment(
                [unit], ["identity"], _fail_once_backend(), checkers, led,
                n_runs=1, max_iterations=5,
            )
        assert record.success is True
        assert record.first_success_iteration == {"Compiled": 2, "Linted": 2, "Fuzzed": 2}

        with ExperimentLedger(tmp_path / "bad.jsonl", "h") as led:
            (record,) = run_experiment(
                [unit], ["identity"], _backend([{"response": BAD_RUST}]), checkers, led,
                n_runs=1, max_iterations=5,
            )
        assert record.success is False
        assert len(record.attempts) == 5
        assert record.error_category is None


def test_03_pass_table_shape():
    """3 pass table monotone in cap and k, compilation row bounds final row (offline)"""
    with _within(30.0):
        for seed in range(100):
            records = synth_ledger(seed=seed, runs=4)
            rows_by_k = {}
            for k in (1, 2, 3, 4):
                table = pass_table_by_iteration(records, k=k, max_iterations=5)
                comp = table.rows["Compilation success"]
                final = table.rows["Final result"]
                for row in (comp, final):
                    for a, b in zip(row, row[1:]):
                        assert a <= b + 1e-12, (seed, k, row)
                for a, b in zip(final, comp):
                    assert a <= b + 1e-12, (seed, k, "final exceeds compilation")
                rows_by_k[k] = (comp, final)
            for k in (1, 2, 3):
                for prev_row, next_row in zip(rows_by_k[k], rows_by_k[k + 1]):
                    for a, b in zip(prev_row, next_row):
                        assert a <= b + 1e-12, (seed, k, "not monotone in k")


def test_04_aggregation_laws():
    """4 robust <= mean <= augmented on 1000 ledgers; identity-only equals plain (offline)"""
    with _within(30.0):
        for seed in range(1000):
            records = synth_ledger(seed=seed, runs=6)
            r = aggregate_over_perturbations(records, 5, "robust")
            m = aggregate_over_perturbations(records, 5, "mean")
            a = aggregate_over_perturbations(records, 5, "augmented")
            assert r <= m + 1e-12, seed
            assert m <= a + 1e-12, seed

        records = synth_ledger(seed=424242, runs=6)
        by_file = {}
        for rec in records:
            if rec.perturbation_id == "identity":
                by_file.setdefault(rec.source_id, []).append(rec)
        plain_cells = []
        for runs in by_file.values():
            fuzzable = [x for x in runs if x.fuzzable]
            plain_cells.append(
                pass_at_k(len(fuzzable), sum(1 for x in fuzzable if x.success), 5)
            )
        plain = sum(plain_cells) / len(plain_cells)
        for mode in ("robust", "mean", "augmented"):
            got = aggregate_over_perturbations(records, 5, mode, ["identity"])
            assert got == plain, (mode, got, plain)


class _StopAfter(Exception):
    pass


def test_05_ledger_resume(tmp_path):
    """5 interrupted experiment resumes to a byte-identical ledger (offline)"""
    with _within(10.0):
        units = [mk_unit("a.c", C_ADD), mk_unit("b.c", "int halve(int x) { return x / 2; }")]
        perts = ["identity", "comment_removal"]
        checkers = SimulatedCheckers(COMPILE_FAIL_RULES)
        total = len(units) * len(perts) * 3  # M = 12

        baseline = tmp_path / "full.jsonl"
        with ExperimentLedger(baseline, "h") as led:
            done = run_experiment(units, perts, _fail_once_backend(), checkers, led, n_runs=3)
        assert len(done) == total

        interrupted = tmp_path / "resume.jsonl"
        m = 5

        def bail(i, n, rec):
            if i == m:
                raise _StopAfter()

        led = ExperimentLedger(interrupted, "h")
        try:
            with pytest.raises(_StopAfter):
                run_experiment(units, perts, _fail_once_backend(), checkers, led,
                               n_runs=3, progress=bail)
        finally:
            led.close()
        assert len(ExperimentLedger.load(interrupted)[1]) == m

        with ExperimentLedger(interrupted, "h") as led:
            appended = run_experiment(units, perts, _fail_once_backend(), checkers, led, n_runs=3)
        assert len(appended) == total - m
        assert interrupted.read_bytes() == baseline.read_bytes()


def test_10_token_accounting(tmp_path):
    """10 ledger token totals equal scripted usage; cost curve x non-decreasing (offline)"""
    with _within(5.0):
        usage_one = {"prompt_tokens": 10, "completion_tokens": 5, "reasoning_tokens": 2}
        usage_two = {"prompt_tokens": 20, "completion_tokens": 7}
        units = [mk_unit("a.c", C_ADD), mk_unit("b.c", "int halve(int x) { return x / 2; }")]
        checkers = SimulatedCheckers(COMPILE_FAIL_RULES)
        with ExperimentLedger(tmp_path / "tok.jsonl", "h") as led:
            records = run_experiment(
                [u for u in units], ["identity"],
                _fail_once_backend(usage_one, usage_two), checkers, led, n_runs=3,
            )
        # every run replays the same two scripted calls
        per_call = [
            TokenUsage(10, 5, 2),
            TokenUsage(20, 7, 0),
        ]
        expected_per_run = per_call[0] + per_call[1]
        assert len(records) == 6
        for rec in records:
            got = rec.total_usage()
            assert (got.prompt_tokens, got.completion_tokens, got.reasoning_tokens) == (
                expected_per_run.prompt_tokens,
                expected_per_run.completion_tokens,
                expected_per_run.reasoning_tokens,
            )
        ledger_total = sum(r.total_usage().total for r in records)
        assert ledger_total == 6 * expected_per_run.total

        points = token_cost_curve(records, k=2, max_iterations=5)
        xs = [p["total_tokens"] for p in points]
        assert xs == sorted(xs)


def test_11_corpus_metrics():
    """11 hand-counted metrics match exactly; report carries min/avg/stddev/max (offline)"""
    with _within(1.0):
        oracle = {
            "m1.c": (11, 8, 3),
            "m2.c": (18, 16, 5),
            "m3.c": (11, 10, 5),
            "m4.c": (16, 11, 3),
            "m5.c": (12, 10, 3),
        }
        units = load_corpus(FIXTURES / "metrics")
        assert sorted(u.source_id for u in units) == sorted(oracle)
        for unit in units:
            m = compute_metrics(unit.text)
            assert (m.loc, m.nloc, m.cc) == oracle[unit.source_id], unit.source_id
        report = corpus_report(units)
        for label in ("LOC", "NLOC", "Tokens", "CC"):
            row = report["summary"][label]
            assert set(row) == {"min", "avg", "stddev", "max"}, label


# ---------------------------------------------------------------------------
# toolchain criteria

@pytest.mark.toolchain
def test_06_planted_bug_detection(tmp_path):
    """6 off-by-one translation caught and its counterexample replays (toolchain)"""
    with _within(30.0):
        cfg = FuzzConfig(
            fuzz_seconds_per_function=10.0, keep_work_dir=True, work_root=str(tmp_path)
        )
        checkers = ToolchainCheckers(cfg)
        unit = mk_unit("add.c", C_ADD)
        wrong = 'pub extern "C" fn add_one(x: i32) -> i32 { x.wrapping_add(2) }'
        report = checkers.check_behavior(wrong, unit)
        assert report.success is False
        cex = report.counterexample
        assert cex is not None
        assert cex.function == "add_one"
        assert cex.kind == "value-mismatch"
        # the minimal crashing unit can be the empty input (x decodes to 0),
        # so the captured bytes may be zero-length

        (work,) = [p for p in tmp_path.iterdir() if p.name.startswith("dff-")]
        binary = work / "fuzz_add_one"
        assert binary.exists()
        crash = tmp_path / "crash.bin"
        crash.write_bytes(bytes.fromhex(cex.raw_input_hex))
        run = subprocess.run([str(binary), str(crash)], capture_output=True, timeout=60)
        assert run.returncode != 0
        replayed = parse_df_json(run.stderr)
        assert replayed is not None
        assert replayed.function == cex.function
        assert replayed.kind == cex.kind
        assert replayed.inputs == cex.inputs


@pytest.mark.toolchain
def test_07_runtime_error_semantics():
    """7 shared traps fuzz clean; Rust-only panics become counterexamples (toolchain)"""
    with _within(90.0):
        checkers = ToolchainCheckers(FuzzConfig(fuzz_seconds_per_function=30.0))

        # both sides trap on d == 0; those inputs are skipped, not reported
        trap_unit = mk_unit("div.c", "int checked_div(int d) { return 100 / d; }")
        trap_rust = 'pub extern "C" fn checked_div(d: i32) -> i32 { 100 / d }'
        report = checkers.check_behavior(trap_rust, trap_unit)
        assert report.success is True, report.diagnostics

        # only the Rust side panics: every negative input is a finding
        ok_unit = mk_unit("halve.c", "int halve(int x) { return x / 2; }")
        panicky = (
            'pub extern "C" fn halve(x: i32) -> i32 {\n'
            '    if x < 0 { panic!("negative input") }\n'
            "    x / 2\n"
            "}"
        )
        report = checkers.check_behavior(panicky, ok_unit)
        assert report.success is False
        assert report.counterexample is not None
        assert report.counterexample.kind == "rust-only-runtime-error"


@pytest.mark.toolchain
def test_08_equivalent_pairs_soundness():
    """8 ten hand-verified C/Rust pairs fuzz with zero counterexamples (toolchain)"""
    with _within(15 * 60.0):
        checkers = ToolchainCheckers(FuzzConfig(fuzz_seconds_per_function=60.0))
        names = [f"p{i:02d}" for i in range(1, 11)]

        def check(name: str):
            unit = mk_unit(f"{name}.c", (FIXTURES / "pairs" / f"{name}.c").read_text())
            rust = (FIXTURES / "pairs" / f"{name}.rs").read_text()
            return name, checkers.check_behavior(rust, unit)

        with ThreadPoolExecutor(max_workers=8) as pool:
            results = list(pool.map(check, names))
        failures = [
            (name, report.diagnostics) for name, report in results if not report.success
        ]
        assert failures == []


@pytest.mark.toolchain
def test_09_perturbation_self_check():
    """9 every deterministic perturbation keeps the fixture corpus equivalent (toolchain)"""
    with _within(30 * 60.0):
        det = _expand_perturbations(["deterministic"])
        assert len(det) == 11
        units = load_corpus(FIXTURES / "fuzzcorp")
        assert len(units) == 10
        cfg = FuzzConfig(self_check_seconds=30.0)

        jobs = [(unit, pid) for pid in det for unit in units]

        def check(job):
            unit, pid = job
            perturbed = apply_perturbation(pid, unit)
            report = differential_self_check(unit, perturbed, cfg)
            return unit.source_id, pid, perturbed.identity, report

        with ThreadPoolExecutor(max_workers=8) as pool:
            results = list(pool.map(check, jobs))

        bad = [
            (sid, pid, report.status, report.notes)
            for sid, pid, _, report in results
            if report.status != "equivalent"
        ]
        assert bad == []
        changed = sum(1 for _, pid, identity, _ in results if pid != "identity" and not identity)
        assert changed >= 40, "perturbations barely fired on the fixture corpus"
